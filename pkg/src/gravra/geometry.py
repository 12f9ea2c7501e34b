"""Rotation and angle primitives.

Rotations are plain ``(3, 3)`` numpy arrays (or ``(..., 3, 3)`` stacks for the
batched helpers).  Angles are floats in the half-open interval ``[-pi, pi)``.

Conventions used throughout the package:

* ``R_i`` maps world coordinates into camera ``i``.
* A relative rotation ``R_ij = R_j @ R_i.T`` maps frame ``i`` into frame ``j``.
* Gravity ``g_i`` is the world down direction expressed in camera ``i``; the
  canonical down direction is ``(0, 1, 0)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi
ROTATION_TOL = 1e-9
Y_AXIS = np.array([0.0, 1.0, 0.0])
CANONICAL_AXIS = np.array([0.0, 0.0, 1.0])


class AxisAngle(NamedTuple):
    axis: np.ndarray
    angle: float


def wrap(raw):
    """Map an angle (or array of angles) into ``[-pi, pi)``.

    >>> wrap(3 * math.pi / 2)
    -1.5707963267948966
    >>> wrap(math.pi)
    -3.141592653589793
    """
    arr = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"cannot wrap non-finite angle {raw!r}")
    shifted = np.mod(arr + math.pi, TWO_PI) - math.pi
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    shifted = np.where(shifted >= math.pi, shifted - TWO_PI, shifted)
    # in-range values pass through untouched so wrap is exactly idempotent
    out = np.where((arr >= -math.pi) & (arr < math.pi), arr, shifted)
    if out.ndim == 0:
        return float(out)
    return out


def angle_diff(a, b):
    """Signed circular difference ``wrap(a - b)``."""
    return wrap(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def is_rotation(r: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(r) - 1.0) <= tol


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _rotation_angle(m: np.ndarray) -> np.ndarray:
    """Rotation angle of ``m`` (batched), equal to arccos((tr - 1) / 2).

    Evaluated with atan2 on the skew and trace parts, which keeps full
    precision near 0 and pi.
    """
    cos = (np.trace(m, axis1=-2, axis2=-1) - 1.0) / 2.0
    if np.any(np.abs(cos) > 1.0 + 1e-6):
        raise ValueError("trace out of range for a rotation matrix")
    skew = np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )
    sin = np.linalg.norm(skew, axis=-1) / 2.0
    return np.arctan2(sin, np.clip(cos, -1.0, 1.0))


def geodesic_distance(a: np.ndarray, b: np.ndarray):
    """Angle of ``a.T @ b`` in ``[0, pi]``; broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rel = np.swapaxes(a, -1, -2) @ b
    out = _rotation_angle(rel)
    if out.ndim == 0:
        return float(out)
    return out


def chordal_distance(a: np.ndarray, b: np.ndarray):
    """Frobenius norm ``||a.T @ b - I||``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rel = np.swapaxes(a, -1, -2) @ b
    out = np.linalg.norm(rel - np.eye(3), axis=(-2, -1))
    if out.ndim == 0:
        return float(out)
    return out


def one_dof_distance(eps):
    """Scaled sine distance ``2*sqrt(2)*sin(|eps|/2)`` of a wrapped residual."""
    out = 2.0 * math.sqrt(2.0) * np.sin(np.abs(np.asarray(eps, dtype=float)) / 2.0)
    if out.ndim == 0:
        return float(out)
    return out


def y_rotation(theta):
    """The 1-DoF rotation about the y axis.

    ``[[cos, 0, -sin], [0, 1, 0], [sin, 0, cos]]``; accepts a scalar or an
    array of angles (returns a stack).
    """
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta)
    s = np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = -s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = s
    out[..., 2, 2] = c
    return out


def extract_y_angle(r: np.ndarray):
    """Closest 1-DoF y-rotation to ``r``.

    Returns ``(theta, residual)`` where ``theta`` maximizes
    ``trace(y_rotation(theta).T @ r)`` and ``residual`` is the geodesic
    distance between ``r`` and ``y_rotation(theta)`` (the off-axis part).
    For an exact y-rotation this reduces to ``atan2(r[2, 0], r[0, 0])``.
    Batched over leading axes.
    """
    r = np.asarray(r, dtype=float)
    theta = np.arctan2(r[..., 2, 0] - r[..., 0, 2], r[..., 0, 0] + r[..., 2, 2])
    theta = wrap(theta)
    residual = geodesic_distance(r, y_rotation(theta))
    if np.ndim(theta) == 0:
        return float(theta), float(residual)
    return theta, residual


def to_axis_angle(r: np.ndarray) -> AxisAngle:
    rotvec = Rotation.from_matrix(np.asarray(r, dtype=float)).as_rotvec()
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-15:
        return AxisAngle(CANONICAL_AXIS.copy(), 0.0)
    return AxisAngle(rotvec / angle, angle)


def from_axis_angle(aa: AxisAngle | tuple) -> np.ndarray:
    axis, angle = aa
    axis = np.asarray(axis, dtype=float)
    return Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()


def exp_map(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of rotation vectors, batched over ``(..., 3)``."""
    rotvec = np.asarray(rotvec, dtype=float)
    flat = Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix()
    return flat.reshape(rotvec.shape[:-1] + (3, 3))


def log_map(r: np.ndarray) -> np.ndarray:
    """Rotation vectors (angle in ``[0, pi]``) of rotations, batched."""
    r = np.asarray(r, dtype=float)
    flat = Rotation.from_matrix(r.reshape(-1, 3, 3)).as_rotvec()
    return flat.reshape(r.shape[:-2] + (3,))


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _jacobian_inv_coeff(angle: np.ndarray) -> np.ndarray:
    small = angle < 1e-4
    safe = np.where(small, 1.0, angle)
    exact = 1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe))
    return np.where(small, 1.0 / 12.0 + angle**2 / 720.0, exact)


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3); ``d log(exp(phi) exp(w)) / dw`` at 0."""
    phi = np.asarray(phi, dtype=float)
    k = skew(phi)
    c = _jacobian_inv_coeff(np.linalg.norm(phi, axis=-1))[..., None, None]
    return np.eye(3) + 0.5 * k + c * (k @ k)


def left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of SO(3); ``d log(exp(w) exp(phi)) / dw`` at 0."""
    phi = np.asarray(phi, dtype=float)
    k = skew(phi)
    c = _jacobian_inv_coeff(np.linalg.norm(phi, axis=-1))[..., None, None]
    return np.eye(3) - 0.5 * k + c * (k @ k)


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize vector {v!r}")
    return v / n


def gravity_alignment(g: np.ndarray) -> np.ndarray:
    """Minimal-angle rotation ``U`` with ``U @ (0, 1, 0) == g``.

    When ``g`` is (numerically) ``(0, -1, 0)`` the minimal rotation is not
    unique and a rotation of pi about the x axis is returned.
    """
    g = np.asarray(g, dtype=float)
    if abs(np.linalg.norm(g) - 1.0) > ROTATION_TOL:
        raise ValueError(f"gravity must be unit-norm, got norm {np.linalg.norm(g)}")
    if np.linalg.norm(g + Y_AXIS) < 1e-12:
        return np.diag([1.0, -1.0, -1.0])
    cross = np.cross(Y_AXIS, g)
    s = np.linalg.norm(cross)
    if s == 0.0:
        return np.eye(3)
    angle = math.atan2(s, float(g[1]))
    return from_axis_angle((cross / s, angle))


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Hamilton quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    x, y, z, w = Rotation.from_matrix(np.asarray(r, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0 else q


def quaternion_to_rotation(q) -> np.ndarray:
    w, x, y, z = (float(c) for c in q)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (normalized Gaussian quaternion)."""
    q = rng.standard_normal(4)
    return quaternion_to_rotation(q / np.linalg.norm(q))


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)
