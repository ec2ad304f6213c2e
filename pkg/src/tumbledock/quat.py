"""
Quaternion algebra for attitude representation.

Convention
----------
Quaternions are stored **vector-first**: ``q = [q1, q2, q3, q4]`` with ``q4``
the scalar part.  Most libraries (scipy excepted) put the scalar first, so
be careful when exchanging data.

``rotation_matrix(q)`` maps body-frame vectors into the LVLH frame
(rotated -> unrotated).  ``quat_multiply`` is the Hamilton product, so
``rotation_matrix(a ⊗ b) = rotation_matrix(a) @ rotation_matrix(b)``.  With
body-frame angular velocity ``w`` the kinematics read

    dq/dt = 1/2 * q ⊗ [w, 0] = 1/2 * Omega(w) q

All functions broadcast over leading axes; the quaternion axis is the last.
"""

import numpy as np

from .errors import NonUnitQuaternion, ZeroQuaternion

UNIT_TOL = 1e-6
ZERO_TOL = 1e-12

IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


def quat_multiply(a, b):
    """Hamilton product ``a ⊗ b`` of vector-first quaternions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    av, aw = a[..., :3], a[..., 3:]
    bv, bw = b[..., :3], b[..., 3:]
    vec = aw * bv + bw * av + np.cross(av, bv)
    sca = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    return np.concatenate([vec, sca], axis=-1)


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return np.concatenate([-q[..., :3], q[..., 3:]], axis=-1)


def norm_deviation(q):
    """``| ||q|| - 1 |`` along the last axis."""
    return np.abs(np.linalg.norm(q, axis=-1) - 1.0)


def check_unit(q, tol=UNIT_TOL, name="quaternion"):
    dev = np.max(norm_deviation(q), initial=0.0)
    if not dev <= tol:
        raise NonUnitQuaternion(f"{name} norm deviates from 1 by {dev:.3e} (tol {tol:g})")


def normalize(q):
    """Scale ``q`` to unit norm.  Raises ZeroQuaternion for ``||q|| <= 1e-12``."""
    q = np.asarray(q, dtype=float)
    nrm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(nrm <= ZERO_TOL):
        raise ZeroQuaternion("cannot normalize a quaternion of norm <= 1e-12")
    return q / nrm


def _rotation_matrix(q):
    q1, q2, q3, q4 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4
    R[..., 0, 1] = 2.0 * (q1 * q2 - q3 * q4)
    R[..., 0, 2] = 2.0 * (q1 * q3 + q2 * q4)
    R[..., 1, 0] = 2.0 * (q1 * q2 + q3 * q4)
    R[..., 1, 1] = -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4
    R[..., 1, 2] = 2.0 * (q2 * q3 - q1 * q4)
    R[..., 2, 0] = 2.0 * (q1 * q3 - q2 * q4)
    R[..., 2, 1] = 2.0 * (q2 * q3 + q1 * q4)
    R[..., 2, 2] = -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4
    return R


def rotation_matrix(q, tol=UNIT_TOL):
    """Body -> LVLH rotation matrix of a unit quaternion.

    Raises
    ------
    NonUnitQuaternion
        If ``||q||`` differs from 1 by more than ``tol``.
    """
    q = np.asarray(q, dtype=float)
    check_unit(q, tol)
    return _rotation_matrix(q)


def omega_matrix(w):
    """4x4 skew matrix ``Omega(w)`` with ``dq/dt = 1/2 Omega(w) q``."""
    w = np.asarray(w, dtype=float)
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    z = np.zeros_like(w1)
    return np.stack(
        [
            np.stack([z, w3, -w2, w1], axis=-1),
            np.stack([-w3, z, w1, w2], axis=-1),
            np.stack([w2, -w1, z, w3], axis=-1),
            np.stack([-w1, -w2, -w3, z], axis=-1),
        ],
        axis=-2,
    )


def quat_derivative(q, w):
    """Time derivative of ``q`` for body angular velocity ``w`` (rad/s)."""
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    q1, q2, q3, q4 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    return 0.5 * np.stack(
        [
            w3 * q2 - w2 * q3 + w1 * q4,
            -w3 * q1 + w1 * q3 + w2 * q4,
            w2 * q1 - w1 * q2 + w3 * q4,
            -w1 * q1 - w2 * q2 - w3 * q3,
        ],
        axis=-1,
    )


def axis_angle(axis, angle):
    """Unit quaternion rotating by ``angle`` about ``axis`` (convenience)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([np.sin(0.5 * angle) * axis, [np.cos(0.5 * angle)]])
