"""
Linearly implicit integration of the docking DAE.

Each attitude quaternion carries one algebraic unknown tied to
``0 = 1 - |q|^2``; the remaining states are differential.  One step of the
linearized implicit trapezoidal rule (a one-stage Rosenbrock method with
``gamma = 1/2``) solves

    (M - h/2 * J) k = h * F(x_n),    x_{n+1} = x_n + k

where ``M`` is the mass matrix (singular in the algebraic directions) and
``J`` the Jacobian of ``F``.  The method is second order for exact Jacobians
and its stability function is the (1,1) Pade approximant, so linear
oscillations such as the torque-free precession of an axisymmetric body
keep their amplitude.

The algebraic direction of a quaternion block is the quaternion itself at
the start of the step: the three kinematic equations orthogonal to ``q_n``
stay differential and the radial one is replaced by the norm constraint.
This partition is never singular (unlike a fixed component such as ``q4``,
which passes through zero on a tumbling body) and depends smoothly on the
state, so propagated quantities are smooth functions of the controls.  With
``q_n = e_4`` it coincides with taking ``q4`` as the algebraic variable.
After the linear solve the radial component is polished by scalar Newton
iteration to machine precision.  A step whose polish fails is retried as two
half steps, up to ``MAX_SPLIT`` times.

Everything is vectorized over a leading batch axis so that many control
sequences (e.g. finite-difference perturbations) propagate together.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import dynamics as dyn
from .dynamics import QS0, QT0, N_STATE, AlgebraicState, SystemState
from .errors import NewtonDivergence, PropagationFailed, StepRejected
from .quat import check_unit

GAMMA = 0.5
MAX_SPLIT = 8
_BLOCKS = (slice(0, 6), slice(6, 13), slice(13, 20))
_QUATS = (QS0, QT0)
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class IntegratorSettings:
    substeps_per_interval: int = 2
    newton_tol: float = 1e-10
    max_newton_iter: int = 20
    jacobian_mode: str = "analytic"
    formulation: str = "dae"

    def __post_init__(self):
        if int(self.substeps_per_interval) < 1:
            raise ValueError("substeps_per_interval must be >= 1")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if int(self.max_newton_iter) < 1:
            raise ValueError("max_newton_iter must be >= 1")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if self.formulation not in ("dae", "ode"):
            raise ValueError(f"unknown formulation {self.formulation!r}")

    def with_substeps(self, substeps):
        return replace(self, substeps_per_interval=int(substeps))


@dataclass
class Trajectory:
    """Node-wise result of a propagation.

    ``states`` has shape (K, 22) and ``algebraic`` holds ``[lam_t, lam_s]``
    per node.  ``controls`` (N, 6) is the zero-order-hold sequence that
    produced it; node ``k`` lies in interval ``k // substeps``.
    """

    times: np.ndarray
    states: np.ndarray
    algebraic: np.ndarray
    controls: np.ndarray
    substeps: int

    @property
    def tf(self):
        return float(self.times[-1])

    @property
    def n_intervals(self):
        return len(self.controls)

    def state(self, k):
        return SystemState.from_array(self.states[k])

    def algebraic_state(self, k):
        lt, ls = self.algebraic[k]
        return AlgebraicState(float(lt), float(ls))

    def node_controls(self):
        """Control active at each node; the last node keeps the last interval's control."""
        k = np.arange(len(self.times)) // self.substeps
        return self.controls[np.minimum(k, len(self.controls) - 1)]

    def grid_slice(self):
        """Index slice selecting the control-grid nodes."""
        return slice(None, None, self.substeps)


def consistent_algebraic(state):
    """Algebraic variables consistent with ``state`` (the scalar quaternion parts)."""
    x = np.asarray(state, dtype=float)
    check_unit(x[dyn.IDX_QT], name="target quaternion")
    check_unit(x[dyn.IDX_QS], name="servicer quaternion")
    return AlgebraicState(float(x[QT0 + 3]), float(x[QS0 + 3]))


def _fd_jacobian(x, u, params):
    B = x.shape[0]
    step = np.sqrt(_EPS) * np.maximum(1.0, np.abs(x))
    f0 = dyn.rates(x, u, params)
    xp = np.repeat(x[:, None, :], N_STATE, axis=1)
    ar = np.arange(N_STATE)
    xp[:, ar, ar] += step
    fp = dyn.rates(xp, u[:, None, :], params)
    return np.swapaxes((fp - f0[:, None, :]) / step[:, :, None], 1, 2).reshape(B, N_STATE, N_STATE)


def linearly_implicit_step(fun, jac, y, h, mass=None):
    """One linearized trapezoidal step for ``M y' = fun(y)``.

    Generic form used for testing the scheme on small systems.  ``mass`` is
    the diagonal of ``M`` (ones when omitted).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    m = np.ones(n) if mass is None else np.asarray(mass, dtype=float)
    W = np.diag(m) - GAMMA * h * np.atleast_2d(jac(y))
    return y + np.linalg.solve(W, h * np.atleast_1d(fun(y)))


def _polish(q, p, settings):
    """Newton on ``1 - |q + delta p|^2 = 0`` for the radial correction ``delta``.

    Updates ``q`` (B, 4) in place and returns the mask of members whose
    residual stays above ``newton_tol``.
    """
    a = np.sum(p * q, axis=1)
    c = np.sum(q * q, axis=1)
    delta = np.zeros(len(q))
    for _ in range(int(settings.max_newton_iter)):
        g = 1.0 - c - delta * (2.0 * a + delta)
        step = g / (2.0 * (a + delta))
        delta += step
        if np.all(np.abs(step) <= 4.0 * _EPS):
            break
    q += delta[:, None] * p
    g = 1.0 - np.sum(q * q, axis=1)
    return ~(np.abs(g) <= settings.newton_tol), g


def _step_batch(x, u, h, scale, params, settings):
    """Advance a batch of states by one step.

    ``h`` is the step in the integration variable and ``scale`` multiplies
    the right-hand side (``tf`` for normalized time, 1 otherwise).  Returns
    the new states, a mask of failed members and the worst algebraic residual.
    """
    dae = settings.formulation == "dae"
    f = dyn.rates(x, u, params)
    if settings.jacobian_mode == "analytic":
        Jac = dyn.state_jacobian(x, params)
    else:
        Jac = _fd_jacobian(x, u, params)
    hs = h * scale
    W = -GAMMA * hs[:, None, None] * Jac
    W[:, np.arange(N_STATE), np.arange(N_STATE)] += 1.0
    rhs = hs[:, None] * f
    if dae:
        for base in _QUATS:
            blk = slice(base, base + 4)
            q = x[:, blk]
            p = q / np.linalg.norm(q, axis=1, keepdims=True)
            # keep the tangential rows, replace the radial one by the linearized constraint
            Wq = W[:, blk, :]
            Wq -= p[:, :, None] * np.einsum("bi,bij->bj", p, Wq)[:, None, :]
            # constraint row: -gamma * dg/dq k = g, i.e. 2 gamma q^T k = 1 - |q|^2
            Wq[:, :, blk] += 2.0 * GAMMA * p[:, :, None] * q[:, None, :]
            rq = rhs[:, blk]
            rq -= p * np.sum(p * rq, axis=1, keepdims=True)
            rq += (1.0 - np.sum(q * q, axis=1))[:, None] * p
    k = np.empty_like(rhs)
    # the Jacobian is block diagonal; the energy rows have no state dependence
    for blk in _BLOCKS:
        k[:, blk] = np.linalg.solve(W[:, blk, blk], rhs[:, blk, None])[..., 0]
    k[:, 20:] = rhs[:, 20:]
    xn = x + k
    bad = ~np.all(np.isfinite(xn), axis=1)
    resid = 0.0
    if dae:
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            for base in _QUATS:
                q0 = x[:, base:base + 4]
                p = q0 / np.linalg.norm(q0, axis=1, keepdims=True)
                b, g = _polish(xn[:, base:base + 4], p, settings)
                bad |= b
                if np.any(b):
                    resid = max(resid, float(np.nanmax(np.abs(g[b]), initial=np.inf)))
    return xn, bad, resid


def _raise_failure(xn, bad, resid, settings):
    if not np.all(np.isfinite(xn[bad])):
        raise StepRejected("non-finite state after linear solve")
    raise NewtonDivergence(f"algebraic residual {resid:.3e} exceeds {settings.newton_tol:g}")


def _advance(x, u, h, scale, params, settings, depth=0):
    """One step with local halving for members whose step fails.

    A member is split only when its own step fails, so its result does not
    depend on the rest of the batch.
    """
    xn, bad, resid = _step_batch(x, u, h, scale, params, settings)
    if np.any(bad):
        if depth >= MAX_SPLIT:
            _raise_failure(xn, bad, resid, settings)
        sel = np.flatnonzero(bad)
        xs = x[sel]
        for _ in range(2):
            xs = _advance(xs, u[sel], h[sel] / 2, scale[sel], params, settings, depth + 1)
        xn[sel] = xs
    return xn


def dae_step(state, alg, u, h, params, settings=IntegratorSettings()):
    """Advance ``(state, alg)`` by one step of size ``h`` seconds under control ``u``.

    The scalar quaternion parts of ``state`` are taken from ``alg``.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(state, dtype=float).copy()
    if settings.formulation == "dae":
        x[QT0 + 3] = alg.lam_t
        x[QS0 + 3] = alg.lam_s
    xn, bad, resid = _step_batch(
        x[None], np.asarray(u, float)[None], np.array([h], float), np.ones(1), params, settings)
    if bad[0]:
        _raise_failure(xn, bad, resid, settings)
    xn = xn[0]
    return SystemState.from_array(xn), AlgebraicState(xn[QT0 + 3], xn[QS0 + 3])


def propagate_batch(x0, controls, tf, params, settings=IntegratorSettings(),
                    *, time_scaled=False, record="grid", start=None):
    """Propagate a batch of zero-order-hold control sequences.

    Parameters
    ----------
    x0 : (22,) or (B, 22) array
        Initial state(s); quaternions must be unit within 1e-6.
    controls : (B, N, 6) array
    tf : (B,) array
        Final times (s).
    time_scaled : bool
        Integrate in normalized time ``tau = t / tf`` with the right-hand side
        scaled by ``tf``.
    record : {"grid", "all", "final"}
        Which nodes to return.
    start : (B,) int array, optional
        Interval at which each member starts; ``x0[b]`` is then the state at
        that grid node.  Recorded nodes before the start are left unset.
        Used to skip the common prefix of finite-difference perturbations.

    Returns
    -------
    states : (B, K, 22) array
    """
    controls = np.asarray(controls, dtype=float)
    tf = np.asarray(tf, dtype=float)
    B, N = controls.shape[:2]
    if N < 1:
        raise ValueError("need at least one control interval")
    if not np.all(tf > 0):
        raise ValueError("final time must be positive")
    x = np.broadcast_to(np.asarray(x0, dtype=float), (B, N_STATE)).copy()
    check_unit(x[:, dyn.IDX_QS], name="servicer quaternion")
    check_unit(x[:, dyn.IDX_QT], name="target quaternion")
    sub = int(settings.substeps_per_interval)
    n_steps = N * sub
    if time_scaled:
        h = np.full(B, 1.0 / n_steps)
        scale = tf.copy()
    else:
        h = tf / n_steps
        scale = np.ones(B)
    first = np.zeros(B, dtype=np.intp) if start is None else np.asarray(start, dtype=np.intp)

    if record == "all":
        K, every = n_steps + 1, 1
    elif record == "grid":
        K, every = N + 1, sub
    elif record == "final":
        K, every = 1, n_steps
    else:
        raise ValueError(f"unknown record mode {record!r}")
    out = np.empty((B, K, N_STATE))
    slot = 0
    if record != "final":
        out[:, 0] = x
        slot = 1
    for i in range(N):
        act = first <= i
        whole = bool(np.all(act))
        sel = slice(None) if whole else np.flatnonzero(act)
        xa, ua, ha, sa = x[sel], controls[sel, i], h[sel], scale[sel]
        for j in range(sub):
            step = i * sub + j
            if len(xa):
                try:
                    xa = _advance(xa, ua, ha, sa, params, settings)
                except (NewtonDivergence, StepRejected) as exc:
                    t_fail = float(np.min(step * tf[sel] / n_steps))
                    raise PropagationFailed(f"step at t = {t_fail:.6g} s failed: {exc}", t_fail) from exc
            if (step + 1) % every == 0:
                out[sel, slot] = xa
                slot += 1
        if whole:
            x = xa
        else:
            x[sel] = xa
    return out


def _trajectory(states, controls, tf, sub):
    times = np.linspace(0.0, tf, states.shape[0])
    lam = states[:, [QT0 + 3, QS0 + 3]].copy()
    return Trajectory(times, states, lam, np.asarray(controls, float).copy(), sub)


def propagate(x0, controls, tf, params, settings=IntegratorSettings()):
    """Propagate one ZOH control sequence over ``[0, tf]``, recording every step."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    states = propagate_batch(
        np.asarray(x0, dtype=float), controls[None], np.array([float(tf)]), params, settings,
        record="all",
    )
    return _trajectory(states[0], controls, float(tf), settings.substeps_per_interval)


def time_scaled_propagate_raw(x0, controls, tf, params, settings=IntegratorSettings()):
    """Like :func:`propagate` but integrating over normalized time."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    states = propagate_batch(
        np.asarray(x0, dtype=float), controls[None], np.array([float(tf)]), params, settings,
        time_scaled=True, record="all",
    )
    return _trajectory(states[0], controls, float(tf), settings.substeps_per_interval)
