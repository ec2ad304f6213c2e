"""
Dense convex QP by the dual active-set method of Goldfarb and Idnani.

Solves::

    min  1/2 x^T G x + a^T x
    s.t. A_eq x  = b_eq
         A_in x >= b_in

with ``G`` symmetric positive definite.  The iteration starts from the
unconstrained minimizer and adds violated constraints one at a time while
keeping the active set dual feasible, so no phase-one feasible point is
needed.  With ``G = L L^T`` the factors kept are ``J = L^{-T} Q`` and the
upper-triangular ``R`` with ``J^T N_A = [R; 0]`` for the active normals
``N_A``.  Adding a constraint applies one Householder reflection to the
trailing columns of ``J``; dropping one restores ``R`` by Givens rotations.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, qr_delete, solve_triangular

_EPS = np.finfo(float).eps


@dataclass
class QPResult:
    """Solution ``x`` with multipliers (``G x + a = A_eq^T lam_eq + A_in^T lam_in``, ``lam_in >= 0``)."""

    x: np.ndarray
    lam_eq: np.ndarray
    lam_in: np.ndarray
    status: str
    iterations: int
    active: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == "optimal"


class QPFailure(RuntimeError):
    pass


def _rows(A, b, n):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape != (len(b), n):
        raise ValueError(f"constraint matrix of shape {A.shape} does not match {len(b)} rows x {n}")
    return A, b


def solve_qp(G, a, A_eq=None, b_eq=None, A_in=None, b_in=None, tol=1e-11, max_iter=None):
    """Minimize a strictly convex quadratic under linear constraints.

    Parameters
    ----------
    G : (n, n) array
        Symmetric positive definite Hessian.
    a : (n,) array
    A_eq, b_eq, A_in, b_in : arrays, optional
    tol : float
        Relative constraint violation accepted at termination.
    max_iter : int, optional
        Limit on add/drop operations (default ``5 (n + m)``).

    Returns
    -------
    QPResult
        ``status`` is ``"optimal"``, ``"infeasible"`` or ``"max_iter"``.
    """
    a = np.asarray(a, dtype=float)
    n = a.size
    A_eq, b_eq = _rows(A_eq, b_eq, n)
    A_in, b_in = _rows(A_in, b_in, n)
    me, mi = len(b_eq), len(b_in)
    C = np.vstack([A_eq, A_in])
    b = np.concatenate([b_eq, b_in])
    m = me + mi
    sign = np.ones(m)
    cnorm = np.linalg.norm(C, axis=1)
    if max_iter is None:
        max_iter = 5 * (n + m) + 10

    try:
        L, _ = cho_factor(np.asarray(G, dtype=float), lower=True)
    except np.linalg.LinAlgError as exc:
        raise QPFailure("QP Hessian is not positive definite") from exc
    L = np.tril(L)
    J = np.asfortranarray(solve_triangular(L, np.eye(n), lower=True).T)
    x = -J @ (J.T @ a)

    R = np.zeros((n, n))
    active = []          # constraint indices, in the column order of R
    u = np.zeros(0)      # multipliers of the active set
    q = 0
    it = 0

    def scale(i):
        return tol * (1.0 + abs(b[i]) + cnorm[i] * np.max(np.abs(x), initial=0.0))

    def drop(pos):
        nonlocal q, u, J
        del active[pos]
        u = np.delete(u, pos)
        # the Givens sequence that restores R also updates J; qr_delete does both
        J, Rq = qr_delete(J, R[:, :q], pos, which="col", overwrite_qr=True, check_finite=False)
        q -= 1
        R[:, :q] = Rq
        R[:, q] = 0.0

    def add(p, d, up):
        nonlocal q, u
        d2 = d[q:]
        nrm = np.linalg.norm(d2)
        v = d2.copy()
        alpha = -np.copysign(nrm, v[0]) if v[0] != 0 else -nrm
        v[0] -= alpha
        vv = v @ v
        if vv > 0:
            Jt = J[:, q:]
            Jt -= np.outer(Jt @ v, (2.0 / vv) * v)
        if alpha < 0:
            J[:, q] = -J[:, q]
            alpha = -alpha
        R[:q, q] = d[:q]
        R[q, q] = alpha
        active.append(p)
        u = np.append(u, up)
        q += 1

    def step_towards(p):
        """Run the add/drop loop until constraint p is active; False if infeasible."""
        nonlocal x, u, it
        up = 0.0
        while True:
            it += 1
            if it > max_iter:
                return None
            npv = sign[p] * C[p]
            sp = npv @ x - sign[p] * b[p]
            d = J.T @ npv
            d2 = d[q:]
            z = J[:, q:] @ d2
            zn = d2 @ d2
            r = solve_triangular(R[:q, :q], d[:q], check_finite=False) if q else np.zeros(0)
            # dual step length limit from active inequalities
            t1, k = np.inf, -1
            if q:
                cand = (r > 0) & (np.asarray(active) >= me)
                if np.any(cand):
                    ratios = np.where(cand, u / np.where(cand, r, 1.0), np.inf)
                    k = int(np.argmin(ratios))
                    t1 = ratios[k]
            full = zn > (1e3 * _EPS * np.linalg.norm(d)) ** 2
            t2 = -sp / zn if full else np.inf
            if p < me and not full and abs(sp) <= scale(p):
                return True  # equality already implied by the active set
            t = min(t1, t2)
            if not np.isfinite(t):
                return False
            if full:
                x = x + t * z
            u = u - t * r
            up += t
            if full and t2 <= t1:
                add(p, d, up)
                return True
            drop(k)

    for p in range(me):
        if C[p] @ x - b[p] > 0:
            sign[p] = -1.0
        ok = step_towards(p)
        if ok is None:
            return _result(x, u, active, me, mi, sign, "max_iter", it)
        if not ok:
            return _result(x, u, active, me, mi, sign, "infeasible", it)

    while True:
        if mi == 0:
            break
        s = A_in @ x - b_in
        viol = s / np.maximum(cnorm[me:], 1e-300)
        viol[[i - me for i in active if i >= me]] = np.inf
        j = int(np.argmin(viol))
        if s[j] >= -scale(me + j):
            break
        ok = step_towards(me + j)
        if ok is None:
            return _result(x, u, active, me, mi, sign, "max_iter", it)
        if not ok:
            return _result(x, u, active, me, mi, sign, "infeasible", it)
    return _result(x, u, active, me, mi, sign, "optimal", it)


def _result(x, u, active, me, mi, sign, status, it):
    lam = np.zeros(me + mi)
    for pos, i in enumerate(active):
        lam[i] = u[pos] * sign[i]
    return QPResult(x, lam[:me], lam[me:], status, it, sorted(active))
