"""
Single-shooting transcription of the docking optimal control problem.

The decision vector stacks the zero-order-hold controls and the free final
time, ``z = [u_0, ..., u_{N-1}, tf]`` (``6N + 1`` scalars).  States are never
decision variables; every evaluation propagates from ``x0`` over normalized
time ``tau = t / tf`` with the integrator.

Constraint layout (``eq`` first, then ``ineq >= 0``)::

    eq    docking position residual (3), docking velocity residual (3), at tf
    ineq  for each grid node k = 0..N, with u_k (node N reuses u_{N-1}):
              v_max - b1, v_max + b1, ..., v_max + b3      b = R(qS_k)^T v_k
              m_max - m1, m_max + m1, ..., m_max + m3
              |rho_k| - min_separation
          t_max - tf
          |rho| - min_separation at the interior integration substeps
              (only with ``separation_nodes="substeps"``)

``constraint_labels`` returns the same layout as strings.
"""

from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import integrator as itg
from .dynamics import IDX_LM, IDX_LV, IDX_QS, N_CONTROL, N_STATE
from .errors import DimensionMismatch
from .nlp import NLPProblem
from .quat import _rotation_matrix, check_unit

TF_MIN = 1.0
N_EQ = 6
PER_NODE = 13


@dataclass(frozen=True)
class Weights:
    """Nonnegative weights of final time, thrust energy and torque energy."""

    w_t: float = 0.0
    w_v: float = 1.0
    w_m: float = 1.0

    def __post_init__(self):
        for name in ("w_t", "w_v", "w_m"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"weight {name} must be nonnegative")

    def scaled(self, factor):
        return Weights(self.w_t * factor, self.w_v * factor, self.w_m * factor)


@dataclass(frozen=True)
class OCPDefinition:
    """Everything needed to evaluate the transcribed problem.

    ``min_separation`` defaults to the sum of the two safety radii and the
    docking vectors are taken from ``params``.  ``separation_nodes="substeps"``
    additionally enforces the separation at every interior integration
    substep, so that it holds along the whole propagated trajectory and not
    only at the control nodes.
    """

    x0: np.ndarray
    params: dyn.SystemParams
    weights: Weights = Weights()
    v_max: float = 0.1
    m_max: float = 1.0
    t_max: float = 420.0
    N: int = 210
    min_separation: float = None
    integrator: itg.IntegratorSettings = field(default_factory=itg.IntegratorSettings)
    separation_nodes: str = "grid"

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float)
        if x0.shape != (N_STATE,):
            raise DimensionMismatch(f"x0 must have {N_STATE} entries, got {x0.shape}")
        check_unit(x0[dyn.IDX_QS], name="servicer quaternion")
        check_unit(x0[dyn.IDX_QT], name="target quaternion")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "N", int(self.N))
        if self.min_separation is None:
            sep = self.params.servicer.safety_radius + self.params.target.safety_radius
            object.__setattr__(self, "min_separation", float(sep))
        for name in ("v_max", "m_max", "t_max", "min_separation"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.separation_nodes not in ("grid", "substeps"):
            raise ValueError(f"unknown separation_nodes {self.separation_nodes!r}")
        if self.t_max < TF_MIN:
            raise ValueError(f"t_max must be at least {TF_MIN} s")

    @property
    def d_s(self):
        return self.params.servicer.docking_point

    @property
    def d_t(self):
        return self.params.target.docking_point

    @property
    def n_variables(self):
        return n_variables(self.N)

    @property
    def stride(self):
        """Integration steps per recorded node during evaluation."""
        return self.integrator.substeps_per_interval if self.separation_nodes == "substeps" else 1

    @property
    def n_ineq(self):
        return PER_NODE * (self.N + 1) + 1 + self.N * (self.stride - 1)


@dataclass
class DecisionVector:
    """ZOH controls ``(N, 6)`` and final time ``tf`` (s)."""

    controls: np.ndarray
    tf: float

    def __post_init__(self):
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if self.controls.shape[1] != N_CONTROL:
            raise DimensionMismatch(f"controls must have {N_CONTROL} columns")
        self.tf = float(self.tf)

    @property
    def N(self):
        return len(self.controls)

    def to_array(self):
        return np.append(self.controls.ravel(), self.tf)

    @classmethod
    def from_array(cls, z, N=None):
        z = np.asarray(z, dtype=float)
        if N is None:
            N, rem = divmod(z.size - 1, N_CONTROL)
            if rem or N < 1:
                raise DimensionMismatch(f"length {z.size} is not 6N + 1")
        if z.size != n_variables(N):
            raise DimensionMismatch(f"expected {n_variables(N)} entries for N = {N}, got {z.size}")
        return cls(z[:-1].reshape(N, N_CONTROL).copy(), z[-1])

    def check(self, ocp):
        if self.N != ocp.N:
            raise DimensionMismatch(f"decision vector has N = {self.N}, problem has N = {ocp.N}")
        if not 0 < self.tf <= ocp.t_max:
            raise ValueError(f"tf = {self.tf} outside (0, {ocp.t_max}]")


@dataclass
class ConstraintVector:
    eq: np.ndarray
    ineq: np.ndarray


def n_variables(N):
    """Number of NLP variables for ``N`` control intervals."""
    return N_CONTROL * int(N) + 1


def constraint_labels(N, stride=1):
    """Names of the equality and inequality constraints, in evaluation order.

    ``stride > 1`` adds the separation rows at the interior substeps.
    """
    eq = [f"dock_pos_{a}" for a in "xyz"] + [f"dock_vel_{a}" for a in "xyz"]
    ineq = []
    for k in range(N + 1):
        for kind in ("thrust", "torque"):
            for i in (1, 2, 3):
                ineq += [f"{kind}_{i}_upper[{k}]", f"{kind}_{i}_lower[{k}]"]
        ineq.append(f"separation[{k}]")
    ineq.append("t_max")
    ineq += [f"separation[{k}.{j}]" for k in range(N) for j in range(1, stride)]
    return eq, ineq


def _as_array(z, ocp):
    if isinstance(z, DecisionVector):
        z.check(ocp)
        return z.to_array()
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != ocp.n_variables:
        raise DimensionMismatch(f"expected {ocp.n_variables} decision scalars, got {z.shape[-1]}")
    return z


def _split(Z, N):
    B = Z.shape[0]
    return Z[:, :-1].reshape(B, N, N_CONTROL), Z[:, -1]


def _propagate_grid(Z, ocp, shared_prefix):
    controls, tf = _split(Z, ocp.N)
    if not np.all(tf > 0):
        raise ValueError("final time must be positive")
    B, S = len(Z), ocp.stride
    record = "grid" if S == 1 else "all"
    if not shared_prefix or B < 3:
        return itg.propagate_batch(ocp.x0, controls, tf, ocp.params, ocp.integrator, time_scaled=True,
                                   record=record)
    # members that agree with row 0 on tf and on u_0..u_{j-1} reuse its first j intervals
    ref = itg.propagate_batch(ocp.x0, controls[:1], tf[:1], ocp.params, ocp.integrator,
                              time_scaled=True, record=record)[0]
    differs = np.any(controls[1:] != controls[0], axis=2)
    first = np.where(differs.any(axis=1), differs.argmax(axis=1), ocp.N)
    first[tf[1:] != tf[0]] = 0
    states = np.empty((B, ocp.N * S + 1, N_STATE))
    states[0] = ref
    todo = np.flatnonzero(first < ocp.N)
    if len(todo):
        f = first[todo]
        out = itg.propagate_batch(ref[f * S], controls[1:][todo], tf[1:][todo], ocp.params, ocp.integrator,
                                  time_scaled=True, record=record, start=f)
        states[1 + todo] = out
    keep = np.arange(ocp.N * S + 1)[None, :] <= S * first[:, None]
    states[1:] = np.where(keep[..., None], ref[None], states[1:])
    return states


def _assemble(states, Z, ocp):
    S = ocp.stride
    inner = states[:, np.arange(states.shape[1]) % S != 0]
    states = states[:, ::S]
    controls, tf = _split(Z, ocp.N)
    B, N = controls.shape[:2]
    xf = states[:, -1]
    w = ocp.weights
    f = w.w_t * tf + w.w_v * xf[:, IDX_LV] + w.w_m * xf[:, IDX_LM]
    eq = np.concatenate(
        [dyn._docking_position(xf, ocp.d_s, ocp.d_t), dyn._docking_velocity(xf, ocp.d_s, ocp.d_t)], axis=1)
    u = controls[:, np.minimum(np.arange(N + 1), N - 1)]
    R = _rotation_matrix(states[..., IDX_QS])
    b = np.einsum("...ji,...j->...i", R, u[..., :3])
    m = u[..., 3:]
    thrust = np.stack([ocp.v_max - b, ocp.v_max + b], axis=-1).reshape(B, N + 1, 6)
    torque = np.stack([ocp.m_max - m, ocp.m_max + m], axis=-1).reshape(B, N + 1, 6)
    sep = np.linalg.norm(states[..., dyn.IDX_POS], axis=-1) - ocp.min_separation
    nodes = np.concatenate([thrust, torque, sep[..., None]], axis=-1).reshape(B, -1)
    ineq = np.concatenate([nodes, (ocp.t_max - tf)[:, None],
                           np.linalg.norm(inner[..., dyn.IDX_POS], axis=-1) - ocp.min_separation], axis=1)
    return f, eq, ineq


def evaluate_batch(Z, ocp, shared_prefix=True):
    """Objective, equality and inequality values for a batch of decision vectors.

    Parameters
    ----------
    Z : (B, 6N+1) array
    shared_prefix : bool
        Let rows that coincide with row 0 up to some interval (and in tf)
        reuse row 0's propagation for that prefix.  The results are
        bit-identical either way; this is how finite-difference batches are
        made cheap.

    Returns
    -------
    f : (B,), eq : (B, 6), ineq : (B, ocp.n_ineq)
    """
    Z = np.atleast_2d(_as_array(Z, ocp))
    states = _propagate_grid(Z, ocp, shared_prefix)
    return _assemble(states, Z, ocp)


def evaluate(z, ocp):
    """``(objective, eq, ineq)`` at one decision vector."""
    f, eq, ineq = evaluate_batch(_as_array(z, ocp)[None], ocp)
    return float(f[0]), eq[0], ineq[0]


def evaluate_objective(z, ocp):
    """``w_t tf + w_v Lv(tf) + w_m Lm(tf)`` after propagating over ``z``."""
    return evaluate(z, ocp)[0]


def evaluate_constraints(z, ocp):
    """Docking residuals at tf and node-wise path constraints (layout in the module docstring)."""
    _, eq, ineq = evaluate(z, ocp)
    return ConstraintVector(eq, ineq)


def time_scaled_propagate(z, ocp, substeps=None):
    """Full-resolution trajectory over ``z``, integrated in normalized time.

    ``substeps`` overrides the scenario's substeps per interval (e.g. for
    denser verification sampling).
    """
    dv = DecisionVector.from_array(_as_array(z, ocp), ocp.N)
    if not dv.tf > 0:
        raise ValueError("final time must be positive")
    settings = ocp.integrator if substeps is None else ocp.integrator.with_substeps(substeps)
    return itg.time_scaled_propagate_raw(ocp.x0, dv.controls, dv.tf, ocp.params, settings)


def initial_guess(ocp):
    """Zero controls and ``tf = t_max``."""
    return DecisionVector(np.zeros((ocp.N, N_CONTROL)), ocp.t_max)


def objective_hessian_guess(z, ocp):
    """Diagonal curvature of the objective for seeding the quasi-Newton matrix.

    The energy terms equal ``(tf / N) * sum_k |u_k|^2`` exactly under ZOH, so
    their curvature in the controls is ``2 w tf / N``.  The tf entry is a
    scale guess of one unit of curvature per ``t_max**2``.
    """
    z = _as_array(z, ocp)
    tf = z[-1]
    c = 2.0 * tf / ocp.N
    w = ocp.weights
    diag = np.empty(ocp.n_variables)
    per = np.array([w.w_v] * 3 + [w.w_m] * 3) * c
    floor = 1e-3 * max(per.max(), 1e-6)
    diag[:-1] = np.tile(np.maximum(per, floor), ocp.N)
    diag[-1] = 1.0 / ocp.t_max ** 2
    return np.diag(diag)


def to_nlp(ocp):
    """Wrap the transcription as an :class:`~tumbledock.nlp.NLPProblem`."""
    n = ocp.n_variables
    lower = np.full(n, -np.inf)
    lower[-1] = TF_MIN
    return NLPProblem(
        n=n, m_eq=N_EQ, m_ineq=ocp.n_ineq,
        evaluate=lambda z: evaluate(z, ocp),
        evaluate_batch=lambda Z: evaluate_batch(Z, ocp),
        lower=lower, upper=np.full(n, np.inf),
        hessian0=lambda z: objective_hessian_guess(z, ocp),
        scale=np.concatenate([np.tile([ocp.v_max] * 3 + [ocp.m_max] * 3, ocp.N), [ocp.t_max]]),
    )
