"""
Dense SQP with damped BFGS, an l1 merit line search and KKT reporting.

Problem form::

    min f(z)  s.t.  c_eq(z) = 0,  c_in(z) >= 0,  lower <= z <= upper

Multiplier convention: ``grad f = A_eq^T lam_eq + A_in^T lam_in + lam_b``
with ``lam_in >= 0`` and ``lam_b`` positive on active lower bounds, negative
on active upper bounds.

Globalization is an l1 merit line search with a least-squares second-order
correction after rejected full steps.  A box ``|d| <= radius * scale`` on the
QP step is off by default; after a failed line search it is set to a tenth of
the failed step and the iteration is retried.

Each iteration logs one line (logger ``tumbledock.nlp``) with the columns of
``LOG_COLUMNS``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import DimensionMismatch, EvaluatorFailure
from .qp import QPFailure, solve_qp

log = logging.getLogger("tumbledock.nlp")

LOG_COLUMNS = ("iter", "objective", "merit", "step", "stationarity", "violation")
STATUSES = ("converged", "max_iter", "linesearch_failure", "qp_failure")


@dataclass
class NLPProblem:
    """Flat-vector NLP.

    ``evaluate(z) -> (f, c_eq, c_in)``.  ``evaluate_batch(Z)`` is an optional
    vectorized version over the rows of ``Z`` used for finite differences.
    ``derivatives(z) -> (grad, A_eq, A_in)`` replaces finite differences when
    given.  ``hessian0`` (array or callable of ``z``) seeds the BFGS matrix.
    ``scale`` holds typical variable magnitudes; it sizes the step bound and
    sets the metric of the second-order correction.
    """

    n: int
    evaluate: Callable
    m_eq: int = 0
    m_ineq: int = 0
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    evaluate_batch: Optional[Callable] = None
    derivatives: Optional[Callable] = None
    hessian0: object = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scale = np.ones(self.n) if self.scale is None else np.asarray(self.scale, float)
        if self.scale.shape != (self.n,) or np.any(self.scale <= 0):
            raise DimensionMismatch("scale must be a positive vector of length n")
        self.lower = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise DimensionMismatch("bounds must have length n")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")

    @classmethod
    def from_functions(cls, n, objective, eq=None, ineq=None, m_eq=0, m_ineq=0, **kw):
        """Build a problem from separate objective/constraint callables."""
        def evaluate(z):
            ce = np.asarray(eq(z), float).reshape(-1) if eq is not None else np.zeros(0)
            ci = np.asarray(ineq(z), float).reshape(-1) if ineq is not None else np.zeros(0)
            return float(objective(z)), ce, ci
        return cls(n=n, evaluate=evaluate, m_eq=m_eq, m_ineq=m_ineq, **kw)

    def stacked(self, z):
        f, ce, ci = self.evaluate(np.asarray(z, float))
        out = np.concatenate([[f], np.reshape(ce, -1), np.reshape(ci, -1)])
        if out.size != 1 + self.m_eq + self.m_ineq:
            raise DimensionMismatch(
                f"evaluator returned {out.size - 1} constraints, expected {self.m_eq + self.m_ineq}")
        return out

    def stacked_batch(self, Z):
        if self.evaluate_batch is None:
            return np.array([self.stacked(z) for z in Z])
        f, ce, ci = self.evaluate_batch(Z)
        return np.column_stack([f, np.reshape(ce, (len(Z), -1)), np.reshape(ci, (len(Z), -1))])


@dataclass(frozen=True)
class SQPSettings:
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8
    max_iterations: int = 200
    hessian: str = "bfgs-damped"
    gradient: str = "forward-fd"
    fd_step: Optional[float] = None
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    penalty_init: float = 1.0
    penalty_margin: float = 1.5
    bfgs_damping: float = 0.2
    second_order_correction: bool = True
    elastic_weight: float = 1e6
    steering: float = 0.9
    curvature_floor: float = 1e-2
    trust_radius: float = np.inf
    trust_radius_min: float = 1e-8
    track_hessian_eigs: bool = False

    def __post_init__(self):
        if not (self.kkt_tol > 0 and self.feas_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.hessian != "bfgs-damped":
            raise ValueError(f"unknown hessian strategy {self.hessian!r}")
        if self.gradient not in ("forward-fd", "central-fd"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.trust_radius_min <= self.trust_radius:
            raise ValueError("trust radii must satisfy 0 < trust_radius_min <= trust_radius")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 0.5:
            raise ValueError("line search parameters out of range")

    @property
    def step(self):
        if self.fd_step is not None:
            return self.fd_step
        return 1e-7 if self.gradient == "forward-fd" else 1e-5


@dataclass
class Multipliers:
    eq: np.ndarray
    ineq: np.ndarray
    bounds: np.ndarray

    def to_array(self):
        return np.concatenate([self.eq, self.ineq, self.bounds])


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    merit: float
    step: float
    stationarity: float
    violation: float
    penalty: float
    complementarity: float = 0.0
    qp_iterations: int = 0
    elastic: bool = False
    second_order: bool = False
    hessian_min_eig: float = np.nan

    def line(self):
        return (f"{self.iteration:5d} {self.objective: .10e} {self.merit: .10e} "
                f"{self.step:.3e} {self.stationarity:.3e} {self.violation:.3e}")


@dataclass
class SolveReport:
    status: str
    iterations: int
    kkt_stationarity: float
    max_constraint_violation: float
    objective: float
    multipliers: Multipliers
    complementarity: float = np.nan
    penalty: float = np.nan
    history: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self):
        return self.status == "converged"


def gradient(evaluator, z, settings=SQPSettings(), batch=None, upper=None):
    """Finite-difference derivative of a scalar or vector function.

    Forward differences use the step ``fd_step * max(1, |z_i|)`` (taken
    backwards where it would cross ``upper``); central differences use both
    signs.  ``batch(Z)`` evaluates the rows of ``Z`` at once; it is always
    passed the unperturbed ``z`` as its first row.

    Returns an ``(n,)`` gradient for scalar functions, else the ``(m, n)``
    Jacobian.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    h = settings.step * np.maximum(1.0, np.abs(z))
    central = settings.gradient == "central-fd"
    if not central and upper is not None:
        h = np.where(z + h > upper, -h, h)
    E = np.diag(h)
    Z = np.vstack([z, z + E, z - E]) if central else np.vstack([z, z + E])
    if batch is not None:
        F = np.asarray(batch(Z), dtype=float)
    else:
        F = np.array([np.atleast_1d(np.asarray(evaluator(row), dtype=float)) for row in Z])
    F = F.reshape(len(Z), -1)
    if not np.all(np.isfinite(F)):
        bad = np.flatnonzero(~np.all(np.isfinite(F), axis=1))
        raise EvaluatorFailure(f"non-finite evaluator output at {len(bad)} finite-difference point(s)")
    if central:
        D = (F[1:n + 1] - F[n + 1:]) / (2.0 * h[:, None])
    else:
        D = (F[1:] - F[0]) / h[:, None]
    D = D.T
    return D[0] if D.shape[0] == 1 else D


def _derivatives(problem, z, settings):
    if problem.derivatives is not None:
        g, Ae, Ai = problem.derivatives(z)
        return (np.asarray(g, float), np.reshape(Ae, (problem.m_eq, problem.n)),
                np.reshape(Ai, (problem.m_ineq, problem.n)))
    D = gradient(problem.stacked, z, settings, batch=problem.stacked_batch, upper=problem.upper)
    D = D.reshape(-1, problem.n)
    me = problem.m_eq
    return D[0], D[1:1 + me], D[1 + me:]


def _check_finite(f, ce, ci, where):
    if not (np.isfinite(f) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
        raise EvaluatorFailure(f"non-finite evaluator output at {where}")


def _violation(problem, z, ce, ci):
    parts = [np.abs(ce), np.maximum(0.0, -ci), np.maximum(0.0, problem.lower - z), np.maximum(0.0, z - problem.upper)]
    return max((float(p.max()) for p in parts if p.size), default=0.0)


def _l1_violation(ce, ci):
    return float(np.sum(np.abs(ce)) + np.sum(np.maximum(0.0, -ci)))


def _split_multipliers(problem, lam):
    if isinstance(lam, Multipliers):
        eq, ineq, bounds = (np.asarray(v, float) for v in (lam.eq, lam.ineq, lam.bounds))
    else:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        m = problem.m_eq + problem.m_ineq
        if lam.size == m:
            bounds = np.zeros(problem.n)
        elif lam.size == m + problem.n:
            bounds = lam[m:]
        else:
            raise DimensionMismatch(
                f"expected {m} or {m + problem.n} multipliers, got {lam.size}")
        eq, ineq = lam[:problem.m_eq], lam[problem.m_eq:m]
    if eq.shape != (problem.m_eq,) or ineq.shape != (problem.m_ineq,) or bounds.shape != (problem.n,):
        raise DimensionMismatch("multiplier blocks do not match the constraint counts")
    return Multipliers(eq, ineq, bounds)


def _kkt(problem, z, lam, g, Ae, Ai, ce, ci):
    r = g - Ae.T @ lam.eq - Ai.T @ lam.ineq - lam.bounds
    stat = float(np.max(np.abs(r), initial=0.0))
    feas = _violation(problem, z, ce, ci)
    comp = [np.abs(lam.ineq * ci)]
    lo, up = np.isfinite(problem.lower), np.isfinite(problem.upper)
    comp.append(np.abs(np.maximum(lam.bounds, 0.0)[lo] * (z - problem.lower)[lo]))
    comp.append(np.abs(np.minimum(lam.bounds, 0.0)[up] * (problem.upper - z)[up]))
    cmax = max((float(c.max()) for c in comp if c.size), default=0.0)
    return stat, feas, cmax


def kkt_residuals(problem, z, multipliers, settings=SQPSettings()):
    """Stationarity ``|grad L|_inf``, max constraint violation and max ``|lam_i g_i|``.

    ``multipliers`` is a :class:`Multipliers` or a flat array of the
    ``m_eq + m_ineq`` constraint multipliers, optionally followed by the
    ``n`` bound multipliers.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (problem.n,):
        raise DimensionMismatch(f"z must have length {problem.n}")
    lam = _split_multipliers(problem, multipliers)
    f, ce, ci = problem.evaluate(z)
    ce, ci = np.atleast_1d(np.asarray(ce, float)), np.atleast_1d(np.asarray(ci, float))
    _check_finite(f, ce, ci, "z")
    g, Ae, Ai = _derivatives(problem, z, settings)
    return _kkt(problem, z, lam, g, Ae, Ai, ce, ci)


def _bound_rows(problem, z):
    lo = np.flatnonzero(np.isfinite(problem.lower))
    up = np.flatnonzero(np.isfinite(problem.upper))
    n = problem.n
    rows = np.zeros((len(lo) + len(up), n))
    rows[np.arange(len(lo)), lo] = 1.0
    rows[len(lo) + np.arange(len(up)), up] = -1.0
    rhs = np.concatenate([problem.lower[lo] - z[lo], z[up] - problem.upper[up]])
    return rows, rhs, lo, up


def _qp_step(problem, z, B, g, Ae, Ai, ce, ci, settings, nu, radius=np.inf):
    """Solve the SQP subproblem for the current penalty ``nu``.

    The plain QP is tried first; its multipliers set the lower limit for
    ``nu``.  When it is infeasible, the l1-penalized QP (slacks on the
    equalities and on the violated inequalities, weight ``nu``) is solved
    instead, raising ``nu`` in decades until the step achieves most of the
    attainable reduction of the linearized infeasibility.

    Steps are confined to ``|d| <= radius * problem.scale``.

    Returns ``(d, lam_eq, lam_in, lam_b, elastic, qp_iterations, nu)`` or None.
    """
    Bd, bb, lo, up = _bound_rows(problem, z)
    Bd, bb = _with_box(problem, Bd, bb, radius)
    n = problem.n
    mi = problem.m_ineq

    def unpack(res):
        lam_in = res.lam_in[:mi]
        lb = res.lam_in[mi:mi + len(lo)]
        ub = res.lam_in[mi + len(lo):mi + len(lo) + len(up)]
        lam_b = np.zeros(n)
        lam_b[lo] += lb
        lam_b[up] -= ub
        return res.x[:n], res.lam_eq, lam_in, lam_b

    try:
        res = solve_qp(B, g, Ae, -ce, np.vstack([Ai, Bd]), np.concatenate([-ci, bb]))
    except QPFailure as exc:
        log.debug("QP failed: %s", exc)
        return None
    iterations = res.iterations
    if res.ok:
        lam_inf = float(np.max(np.abs(np.concatenate([res.lam_eq, res.lam_in[:mi]])), initial=0.0))
        return (*unpack(res), False, iterations, max(nu, settings.penalty_margin * lam_inf))

    me = problem.m_eq
    viol = np.flatnonzero(ci < 0.0)
    ns = 2 * me + len(viol)
    Ae_x = np.hstack([Ae, -np.eye(me), np.eye(me), np.zeros((me, len(viol)))])
    Ai_x = np.hstack([Ai, np.zeros((mi, ns))])
    Ai_x[viol, n + 2 * me + np.arange(len(viol))] = 1.0
    A_x = np.vstack([Ai_x, np.hstack([Bd, np.zeros((len(bb), ns))]), np.hstack([np.zeros((ns, n)), np.eye(ns)])])
    b_x = np.concatenate([-ci, bb, np.zeros(ns)])
    v0 = _l1_violation(ce, ci)

    def penalized(w):
        nonlocal iterations
        G = np.zeros((n + ns, n + ns))
        G[:n, :n] = B
        # slight slack curvature keeps the subproblem strictly convex
        G[n:, n:] = np.eye(ns) * 1e-6 * w
        try:
            r = solve_qp(G, np.concatenate([g, np.full(ns, w)]), Ae_x, -ce, A_x, b_x)
        except QPFailure as exc:
            log.debug("penalized QP failed: %s", exc)
            return None, -np.inf
        iterations += r.iterations
        if not r.ok:
            log.debug("penalized QP failed: %s after %d iterations", r.status, r.iterations)
            return None, -np.inf
        d = r.x[:n]
        return r, v0 - _l1_violation(ce + Ae @ d, ci + Ai @ d)

    res, red = penalized(nu)
    if res is None or red < settings.steering * v0:
        cap = max(settings.elastic_weight, nu)
        best, red_max = penalized(cap)
        if best is None:
            return None
        while nu < cap and (res is None or red < settings.steering * red_max):
            nu = min(cap, 10.0 * nu)
            res, red = (best, red_max) if nu == cap else penalized(nu)
    d, le, li, lb = unpack(res)
    elastic = _l1_violation(ce + Ae @ d, ci + Ai @ d) > 1e-9 * max(1.0, v0)
    return d, le, li, lb, elastic, iterations, nu


def _bfgs_update(B, s, y, damping, scale=None, floor=0.0):
    """Powell-damped BFGS update.

    With ``floor > 0`` the eigenvalues of ``B`` in the metric ``diag(scale)``
    (usually the diagonal of the initial matrix) are kept above ``floor``:
    repeated damping along directions of negative curvature would otherwise
    shrink them geometrically and make the QP steps unbounded in practice.
    """
    Bs = B @ s
    sBs = float(s @ Bs)
    sy = float(s @ y)
    if sBs <= 0:
        return B, False
    damped = sy < damping * sBs
    if damped:
        theta = (1.0 - damping) * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = float(s @ y)
    B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
    B = 0.5 * (B + B.T)
    if floor > 0:
        r = np.sqrt(np.ones(len(B)) if scale is None else scale)
        ev, V = np.linalg.eigh(B / np.outer(r, r))
        if ev[0] < floor:
            B = (V * np.maximum(ev, floor)) @ V.T * np.outer(r, r)
            B = 0.5 * (B + B.T)
    return B, damped


def solve(problem, z0, settings=SQPSettings()):
    """Run SQP from ``z0``.

    Returns ``(z, SolveReport)``.  Non-convergence is reported through
    ``status``; a non-finite evaluation at an accepted point or in a
    finite-difference stencil raises :class:`EvaluatorFailure`.  Trial points
    of the line search whose evaluation fails are treated as rejected.
    """
    z = np.array(z0, dtype=float)
    if z.shape != (problem.n,):
        raise DimensionMismatch(f"z0 must have length {problem.n}")
    if np.any(z < problem.lower) or np.any(z > problem.upper):
        raise ValueError("z0 violates the variable bounds")

    f, ce, ci = problem.evaluate(z)
    ce, ci = np.atleast_1d(np.asarray(ce, float)), np.atleast_1d(np.asarray(ci, float))
    _check_finite(f, ce, ci, "the initial point")
    g, Ae, Ai = _derivatives(problem, z, settings)
    if problem.hessian0 is None:
        B0, scale_first = np.eye(problem.n), True
    else:
        h0 = problem.hessian0(z) if callable(problem.hessian0) else problem.hessian0
        B0, scale_first = np.array(h0, dtype=float), False
    B = B0.copy()
    mu = float(settings.penalty_init)
    radius = float(settings.trust_radius)
    lam = Multipliers(np.zeros(problem.m_eq), np.zeros(problem.m_ineq), np.zeros(problem.n))
    history = []
    status, message = "max_iter", ""
    stat = feas = comp = np.nan
    reset_done = False
    k = 0

    def trial(zt):
        try:
            ft, cet, cit = problem.evaluate(zt)
        except (ArithmeticError, RuntimeError, ValueError):
            return None
        cet, cit = np.atleast_1d(np.asarray(cet, float)), np.atleast_1d(np.asarray(cit, float))
        if not (np.isfinite(ft) and np.all(np.isfinite(cet)) and np.all(np.isfinite(cit))):
            return None
        return float(ft), cet, cit

    while k < settings.max_iterations:
        if k:
            # Powell's rule: let the penalty relax towards what the multipliers need
            need = settings.penalty_margin * float(np.max(np.abs(np.concatenate([lam.eq, lam.ineq])), initial=0.0))
            mu = max(settings.penalty_init, need, 0.5 * (mu + need)) if mu > need else mu
        sub = _qp_step(problem, z, B, g, Ae, Ai, ce, ci, settings, mu, radius)
        if sub is None:
            status, message = "qp_failure", "QP subproblem failed, including the elastic relaxation"
            break
        d, le, li, lb, elastic, qp_it, nu = sub
        lam_new = Multipliers(le, li, lb)
        if nu != mu:
            log.debug("penalty %.6e -> %.6e", mu, nu)
            mu = nu

        viol1 = _l1_violation(ce, ci)
        lin1 = _l1_violation(ce + Ae @ d, ci + Ai @ d)
        dderiv = float(g @ d) - mu * (viol1 - lin1)
        phi0 = f + mu * viol1
        dnorm = float(np.max(np.abs(d) / problem.scale, initial=0.0))
        accepted = None
        alpha, soc = 1.0, False
        for _ in range(settings.max_backtracks + 1):
            zt = np.clip(z + alpha * d, problem.lower, problem.upper)
            ev = trial(zt)
            if ev is not None:
                phi = ev[0] + mu * _l1_violation(ev[1], ev[2])
                if phi <= phi0 + settings.armijo * alpha * dderiv:
                    accepted = (zt, ev, phi)
                    break
                log.debug("rejected alpha=%.3e df=%.3e dviol=%.3e pred=%.3e", alpha, ev[0] - f,
                          _l1_violation(ev[1], ev[2]) - viol1, alpha * dderiv)
            if alpha == 1.0 and settings.second_order_correction and ev is not None:
                # second-order correction against the Maratos effect
                corr = _soc_step(problem, d, Ae, Ai, ce, ci, ev[1], ev[2], li)
                if corr is None:
                    log.debug("no correction: no constraints")
                else:
                    zs = np.clip(z + corr, problem.lower, problem.upper)
                    evs = trial(zs)
                    if evs is not None:
                        phis = evs[0] + mu * _l1_violation(evs[1], evs[2])
                        if phis <= phi0 + settings.armijo * dderiv:
                            accepted, soc = (zs, evs, phis), True
                            break
                        log.debug("correction rejected: dphi=%.3e", phis - phi0)
            alpha *= settings.backtrack
        if accepted is None:
            log.debug("line search failed: D=%.3e phi0=%.6e mu=%.3e |d|=%.3e elastic=%s", dderiv, phi0, mu,
                      float(np.max(np.abs(d))), elastic)
            shrunk = max(settings.trust_radius_min, 0.1 * dnorm)
            if shrunk < radius:
                radius = shrunk
                continue
            if not reset_done and not np.array_equal(B, B0):
                log.debug("line search failed; resetting the Hessian approximation")
                B, reset_done = B0.copy(), True
                continue
            status = "linesearch_failure"
            message = f"no sufficient decrease after {settings.max_backtracks} backtracks"
            break
        log.debug("accepted alpha=%.3e soc=%s |d|=%.3e D=%.3e radius=%.3e", alpha, soc, float(np.max(np.abs(d))),
                  dderiv, radius)
        # the box follows the line search: grow after full steps, shrink to the accepted length
        if alpha == 1.0:
            radius = max(radius, 2.0 * dnorm)
        else:
            radius = max(settings.trust_radius_min, max(alpha, 0.1) * dnorm)
        reset_done = False
        k += 1
        z_new, (f, ce, ci), phi = accepted
        g_new, Ae_new, Ai_new = _derivatives(problem, z_new, settings)
        s = z_new - z
        y = (g_new - Ae_new.T @ le - Ai_new.T @ li) - (g - Ae.T @ le - Ai.T @ li)
        if scale_first and s @ y > 0:
            B = B * float(y @ y) / float(s @ y)
            B0 = B.copy()
            scale_first = False
        if np.any(s != 0):
            B, _ = _bfgs_update(B, s, y, settings.bfgs_damping, np.diag(B0), settings.curvature_floor)
        z, g, Ae, Ai, lam = z_new, g_new, Ae_new, Ai_new, lam_new
        stat, feas, comp = _kkt(problem, z, lam, g, Ae, Ai, ce, ci)
        rec = IterationRecord(k, f, phi, float(np.max(np.abs(s), initial=0.0)), stat, feas, float(mu), comp,
                              qp_it, elastic, soc)
        if settings.track_hessian_eigs:
            rec.hessian_min_eig = float(np.linalg.eigvalsh(B)[0])
        history.append(rec)
        log.info(rec.line())
        if stat <= settings.kkt_tol and feas <= settings.feas_tol and comp <= settings.kkt_tol:
            status = "converged"
            break

    if not np.isfinite(stat):
        stat, feas, comp = _kkt(problem, z, lam, g, Ae, Ai, ce, ci)
    report = SolveReport(status, k, stat, feas, float(f), lam, comp, float(mu), history, message)
    return z, report


def _soc_step(problem, d, Ae, Ai, ce, ci, ce_trial, ci_trial, lam_in):
    """Least-squares second-order correction.

    Returns ``d + dc`` where ``dc`` is the minimum-norm step (in the metric
    of ``problem.scale``) cancelling the nonlinear part of the equality and
    QP-active inequality residuals observed at ``z + d``.
    """
    lin_i = ci + Ai @ d
    act = (lam_in > 0) | (np.abs(lin_i) <= 1e-10 * (1.0 + np.abs(ci)))
    A = np.vstack([Ae, Ai[act]])
    if len(A) == 0:
        return None
    r = np.concatenate([ce_trial - (ce + Ae @ d), ci_trial[act] - lin_i[act]])
    y = np.linalg.lstsq(A * problem.scale, -r, rcond=None)[0]
    return d + problem.scale * y


def _with_box(problem, Bd, bb, radius):
    if not np.isfinite(radius):
        return Bd, bb
    eye = np.eye(problem.n)
    half = radius * problem.scale
    return np.vstack([Bd, eye, -eye]), np.concatenate([bb, -half, -half])
