"""
Coupled relative-orbit and attitude dynamics of a servicer/target pair.

The full state is a flat 22-vector (indices in the ``IDX_*`` constants)::

    [x, y, z, vx, vy, vz,              relative position/velocity, target LVLH
     wS1, wS2, wS3, qS1, qS2, qS3, qS4, servicer body rates and attitude
     wT1, wT2, wT3, qT1, qT2, qT3, qT4, target body rates and attitude
     Lv, Lm]                            accumulated thrust / torque energy

Controls are 6-vectors ``[vx_L, vy_L, vz_L, m1, m2, m3]``: thrust (N) in LVLH,
torque (N m) in the servicer body frame.  The target is torque free.

Functions operate on arrays and broadcast over leading (batch) axes.
"""

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .quat import _rotation_matrix, check_unit

N_STATE = 22
N_CONTROL = 6

IDX_POS = slice(0, 3)
IDX_VEL = slice(3, 6)
IDX_WS = slice(6, 9)
IDX_QS = slice(9, 13)
IDX_WT = slice(13, 16)
IDX_QT = slice(16, 20)
IDX_LV = 20
IDX_LM = 21
QS0 = 9
QT0 = 16

STATE_NAMES = (
    "x", "y", "z", "vx", "vy", "vz",
    "wS1", "wS2", "wS3", "qS1", "qS2", "qS3", "qS4",
    "wT1", "wT2", "wT3", "qT1", "qT2", "qT3", "qT4",
    "Lv", "Lm",
)
CONTROL_NAMES = ("vx_L", "vy_L", "vz_L", "m1", "m2", "m3")


def _vec3(v):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class SpacecraftParams:
    """Principal inertias (kg m^2), mass (kg), body-frame docking point (m), safety radius (m)."""

    inertia: np.ndarray
    mass: float
    docking_point: np.ndarray
    safety_radius: float

    def __post_init__(self):
        object.__setattr__(self, "inertia", _vec3(self.inertia))
        object.__setattr__(self, "docking_point", _vec3(self.docking_point))
        if np.any(self.inertia <= 0):
            raise ValueError("inertias must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.safety_radius > 0:
            raise ValueError("safety radius must be positive")


@dataclass(frozen=True)
class OrbitParams:
    """Circular reference orbit: radius ``a`` (m) and gravitational parameter ``gm`` (m^3/s^2)."""

    a: float
    gm: float
    n: float = field(init=False)

    def __post_init__(self):
        if not (self.a > 0 and self.gm > 0):
            raise ValueError("orbit radius and GM must be positive")
        object.__setattr__(self, "n", float(np.sqrt(self.gm / self.a**3)))


@dataclass(frozen=True)
class SystemParams:
    servicer: SpacecraftParams
    target: SpacecraftParams
    orbit: OrbitParams


@dataclass(frozen=True)
class SystemState:
    """Named view of the 22-element state vector."""

    rho: np.ndarray
    rho_dot: np.ndarray
    w_s: np.ndarray
    q_s: np.ndarray
    w_t: np.ndarray
    q_t: np.ndarray
    lv: float = 0.0
    lm: float = 0.0

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (N_STATE,):
            raise ValueError(f"state must have shape ({N_STATE},), got {x.shape}")
        return cls(
            x[IDX_POS].copy(), x[IDX_VEL].copy(), x[IDX_WS].copy(), x[IDX_QS].copy(),
            x[IDX_WT].copy(), x[IDX_QT].copy(), float(x[IDX_LV]), float(x[IDX_LM]),
        )

    def to_array(self):
        return np.concatenate(
            [self.rho, self.rho_dot, self.w_s, self.q_s, self.w_t, self.q_t, [self.lv, self.lm]]
        ).astype(float)

    def __array__(self, dtype=None, copy=None):
        arr = self.to_array()
        return arr if dtype is None else arr.astype(dtype)


@dataclass(frozen=True)
class AlgebraicState:
    """Algebraic variables of the DAE: the scalar quaternion parts of target and servicer."""

    lam_t: float
    lam_s: float


def hcw_acceleration(x, u, orbit, mass):
    """Relative acceleration from the linearized circular-orbit equations (m/s^2)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = orbit.n
    return np.stack(
        [
            2.0 * n * x[..., 4] + 3.0 * n * n * x[..., 0] + u[..., 0] / mass,
            -2.0 * n * x[..., 3] + u[..., 1] / mass,
            -n * n * x[..., 2] + u[..., 2] / mass,
        ],
        axis=-1,
    )


def gyro_rates(w, params, torque=None):
    """Euler's equations for a body with diagonal inertia (rad/s^2)."""
    w = np.asarray(w, dtype=float)
    J1, J2, J3 = params.inertia
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    dw = np.stack(
        [w2 * w3 * (J2 - J3), w1 * w3 * (J3 - J1), w1 * w2 * (J1 - J2)], axis=-1
    )
    if torque is not None:
        dw = dw + np.asarray(torque, dtype=float)
    return dw / params.inertia


def rates(x, u, params):
    """State derivative without input checks; used inside the integrator."""
    f = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (N_STATE,)))
    f[..., IDX_POS] = x[..., IDX_VEL]
    f[..., IDX_VEL] = hcw_acceleration(x, u, params.orbit, params.servicer.mass)
    f[..., IDX_WS] = gyro_rates(x[..., IDX_WS], params.servicer, u[..., 3:6])
    f[..., IDX_QS] = quat.quat_derivative(x[..., IDX_QS], x[..., IDX_WS])
    f[..., IDX_WT] = gyro_rates(x[..., IDX_WT], params.target)
    f[..., IDX_QT] = quat.quat_derivative(x[..., IDX_QT], x[..., IDX_WT])
    f[..., IDX_LV] = np.sum(u[..., 0:3] ** 2, axis=-1)
    f[..., IDX_LM] = np.sum(u[..., 3:6] ** 2, axis=-1)
    return f


def state_derivative(x, u, params):
    """Time derivative of the full 22-state (both craft, both energy states).

    Raises NonUnitQuaternion if either attitude quaternion is off unit norm
    by more than 1e-6.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    check_unit(x[..., IDX_QS], name="servicer quaternion")
    check_unit(x[..., IDX_QT], name="target quaternion")
    return rates(x, u, params)


def _gyro_jacobian(J, w, inertia):
    J1, J2, J3 = inertia
    c1, c2, c3 = (J2 - J3) / J1, (J3 - J1) / J2, (J1 - J2) / J3
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    J[..., 0, 1] = c1 * w3
    J[..., 0, 2] = c1 * w2
    J[..., 1, 0] = c2 * w3
    J[..., 1, 2] = c2 * w1
    J[..., 2, 0] = c3 * w2
    J[..., 2, 1] = c3 * w1


def _kinematics_jacobian(Jq, Jw, q, w):
    """Fill d(qdot)/dq into ``Jq`` (4x4) and d(qdot)/dw into ``Jw`` (4x3)."""
    Jq[...] = 0.5 * quat.omega_matrix(w)
    q1, q2, q3, q4 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    Jw[..., 0, 0], Jw[..., 0, 1], Jw[..., 0, 2] = 0.5 * q4, -0.5 * q3, 0.5 * q2
    Jw[..., 1, 0], Jw[..., 1, 1], Jw[..., 1, 2] = 0.5 * q3, 0.5 * q4, -0.5 * q1
    Jw[..., 2, 0], Jw[..., 2, 1], Jw[..., 2, 2] = -0.5 * q2, 0.5 * q1, 0.5 * q4
    Jw[..., 3, 0], Jw[..., 3, 1], Jw[..., 3, 2] = -0.5 * q1, -0.5 * q2, -0.5 * q3


def state_jacobian(x, params):
    """Analytic Jacobian ``d rates / d x`` of shape ``(..., 22, 22)``.

    The controls enter the state equations additively, so the Jacobian does
    not depend on them.
    """
    x = np.asarray(x, dtype=float)
    J = np.zeros(x.shape[:-1] + (N_STATE, N_STATE))
    n = params.orbit.n
    J[..., 0, 3] = J[..., 1, 4] = J[..., 2, 5] = 1.0
    J[..., 3, 0] = 3.0 * n * n
    J[..., 3, 4] = 2.0 * n
    J[..., 4, 3] = -2.0 * n
    J[..., 5, 2] = -n * n
    _gyro_jacobian(J[..., 6:9, 6:9], x[..., IDX_WS], params.servicer.inertia)
    _kinematics_jacobian(J[..., 9:13, 9:13], J[..., 9:13, 6:9], x[..., IDX_QS], x[..., IDX_WS])
    _gyro_jacobian(J[..., 13:16, 13:16], x[..., IDX_WT], params.target.inertia)
    _kinematics_jacobian(J[..., 16:20, 16:20], J[..., 16:20, 13:16], x[..., IDX_QT], x[..., IDX_WT])
    return J


def algebraic_residual(qvec3, lam):
    """Residual ``1 - (q1^2 + q2^2 + q3^2 + lam^2)`` of the unit-norm constraint."""
    qvec3 = np.asarray(qvec3, dtype=float)
    return 1.0 - (np.sum(qvec3 * qvec3, axis=-1) + np.asarray(lam, dtype=float) ** 2)


def body_frame_thrust(q_s, v_lvlh):
    """Rotate LVLH thrust into the servicer body frame (``R^T v``)."""
    R = quat.rotation_matrix(q_s)
    return np.einsum("...ji,...j->...i", R, np.asarray(v_lvlh, dtype=float))


def docking_position_residual(x, d_s, d_t):
    """``rho + R(qS) dS - R(qT) dT``: LVLH offset between the two docking points."""
    x = np.asarray(x, dtype=float)
    check_unit(x[..., IDX_QS], name="servicer quaternion")
    check_unit(x[..., IDX_QT], name="target quaternion")
    return _docking_position(x, np.asarray(d_s, float), np.asarray(d_t, float))


def docking_velocity_residual(x, d_s, d_t):
    """Relative LVLH velocity of the docking points.

    ``rho_dot + (R_S wS) x (R_S dS) - (R_T wT) x (R_T dT)``
    """
    x = np.asarray(x, dtype=float)
    check_unit(x[..., IDX_QS], name="servicer quaternion")
    check_unit(x[..., IDX_QT], name="target quaternion")
    return _docking_velocity(x, np.asarray(d_s, float), np.asarray(d_t, float))


def _docking_position(x, d_s, d_t):
    Rs = _rotation_matrix(x[..., IDX_QS])
    Rt = _rotation_matrix(x[..., IDX_QT])
    return x[..., IDX_POS] + (Rs @ d_s - Rt @ d_t)


def _docking_velocity(x, d_s, d_t):
    Rs = _rotation_matrix(x[..., IDX_QS])
    Rt = _rotation_matrix(x[..., IDX_QT])
    ws = np.einsum("...ij,...j->...i", Rs, x[..., IDX_WS])
    wt = np.einsum("...ij,...j->...i", Rt, x[..., IDX_WT])
    return x[..., IDX_VEL] + (np.cross(ws, Rs @ d_s) - np.cross(wt, Rt @ d_t))


def separation_distance(x):
    """Distance between the two centres of mass (m)."""
    return np.linalg.norm(np.asarray(x, dtype=float)[..., IDX_POS], axis=-1)


def rotational_energy(w, inertia):
    w = np.asarray(w, dtype=float)
    return 0.5 * np.sum(inertia * w * w, axis=-1)


def angular_momentum_norm(w, inertia):
    return np.linalg.norm(inertia * np.asarray(w, dtype=float), axis=-1)
