"""Small geometry kernel: unit quaternions, 3x3 rotation helpers and triangle frames.

Conventions used everywhere in the package:

* quaternions are stored ``(w, x, y, z)`` and multiplied with the Hamilton product;
* Euler angles are intrinsic Tait-Bryan Z-Y-X (yaw, then pitch, then roll), i.e.
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, the usual aerospace convention;
* vectors and 3x3 matrices are plain ``numpy`` arrays of shape ``(3,)`` and ``(3, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEGENERACY_EPS = 1e-12


class DegenerateTriangle(ValueError):
    """Raised when a triangle has (numerically) zero area."""


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation quaternion ``w + xi + yj + zk``, renormalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        w, x, y, z = float(self.w), float(self.x), float(self.y), float(self.z)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n) or n == 0.0:
            raise ValueError(f"cannot normalize quaternion {(w, x, y, z)}")
        object.__setattr__(self, "w", w / n)
        object.__setattr__(self, "x", x / n)
        object.__setattr__(self, "y", y / n)
        object.__setattr__(self, "z", z / n)

    @classmethod
    def identity(cls) -> UnitQuaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def __mul__(self, other: UnitQuaternion) -> UnitQuaternion:
        return quat_mul(self, other)

    def __neg__(self) -> UnitQuaternion:
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)


def conjugate(q: UnitQuaternion) -> UnitQuaternion:
    return UnitQuaternion(q.w, -q.x, -q.y, -q.z)


def quat_dot(a: UnitQuaternion, b: UnitQuaternion) -> float:
    return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z


def quat_mul(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product ``a * b`` (apply ``b`` first, then ``a``)."""
    return UnitQuaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_from_axis_angle(axis, angle: float) -> UnitQuaternion:
    ax, ay, az = (float(c) for c in axis)
    n = math.sqrt(ax * ax + ay * ay + az * az)
    if n == 0.0:
        return UnitQuaternion.identity()
    s = math.sin(0.5 * angle) / n
    return UnitQuaternion(math.cos(0.5 * angle), ax * s, ay * s, az * s)


def quat_from_rotvec(rotvec) -> UnitQuaternion:
    """Exponential map of a rotation vector (axis times angle, radians)."""
    vx, vy, vz = (float(c) for c in rotvec)
    angle = math.sqrt(vx * vx + vy * vy + vz * vz)
    if angle == 0.0:
        return UnitQuaternion.identity()
    return quat_from_axis_angle((vx, vy, vz), angle)


def quat_to_rotvec(q: UnitQuaternion) -> np.ndarray:
    """Logarithm map; the returned angle lies in ``[0, pi]``."""
    if q.w < 0.0:
        q = -q
    v = np.array([q.x, q.y, q.z])
    s = float(np.linalg.norm(v))
    if s == 0.0:
        return np.zeros(3)
    angle = 2.0 * math.atan2(s, q.w)
    return v * (angle / s)


def quat_angle(q: UnitQuaternion) -> float:
    """Rotation angle of ``q`` in ``[0, pi]``."""
    s = math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z)
    return 2.0 * math.atan2(s, abs(q.w))


def angle_between(a: UnitQuaternion, b: UnitQuaternion) -> float:
    return quat_angle(quat_mul(conjugate(a), b))


def quat_to_mat3(q: UnitQuaternion) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def mat3_to_quat(m) -> UnitQuaternion:
    """Rotation matrix to quaternion (Shepperd's method, sign chosen with ``w >= 0``)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    if q[0] < 0.0:
        q = tuple(-c for c in q)
    return UnitQuaternion(*q)


def quat_from_euler(roll: float, pitch: float, yaw: float) -> UnitQuaternion:
    """Intrinsic Z-Y-X composition ``qz(yaw) * qy(pitch) * qx(roll)``; angles in radians."""
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return UnitQuaternion(
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    )


def quat_to_euler(q: UnitQuaternion) -> tuple[float, float, float]:
    """Inverse of :func:`quat_from_euler`: ``(roll, pitch, yaw)`` in radians.

    Roll and yaw are in ``(-pi, pi]``, pitch in ``[-pi/2, pi/2]``. Near pitch = +-90 deg
    the decomposition is ill-conditioned (gimbal lock).
    """
    w, x, y, z = q.w, q.x, q.y, q.z
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    sp = 2.0 * (w * y - z * x)
    pitch = math.asin(max(-1.0, min(1.0, sp)))
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return roll, pitch, yaw


def euler_to_mat3(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Direct ``Rz @ Ry @ Rx`` product, kept separate from the quaternion path."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def slerp(a: UnitQuaternion, b: UnitQuaternion, t: float) -> UnitQuaternion:
    """Spherical linear interpolation along the shorter arc."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"slerp parameter must be in [0, 1], got {t}")
    if t == 0.0:
        return a
    d = quat_dot(a, b)
    if d < 0.0:
        b = -b
        d = -d
    if t == 1.0:
        return b
    if d > 1.0 - 1e-12:
        # nearly parallel: fall back to normalized lerp
        return UnitQuaternion(
            a.w + t * (b.w - a.w),
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.z + t * (b.z - a.z),
        )
    theta = math.acos(d)
    s = math.sin(theta)
    ka = math.sin((1.0 - t) * theta) / s
    kb = math.sin(t * theta) / s
    return UnitQuaternion(
        ka * a.w + kb * b.w, ka * a.x + kb * b.x, ka * a.y + kb * b.y, ka * a.z + kb * b.z
    )


def rotation_axis_angle(m) -> tuple[np.ndarray, float]:
    """Axis (unit) and angle in ``[0, pi]`` of a proper rotation matrix.

    For the identity the axis is arbitrary and ``(1, 0, 0)`` is returned.
    """
    rv = quat_to_rotvec(mat3_to_quat(m))
    angle = float(np.linalg.norm(rv))
    if angle == 0.0:
        return np.array([1.0, 0.0, 0.0]), 0.0
    return rv / angle, angle


def is_rotation(m, tol: float = 1e-6) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if np.max(np.abs(m.T @ m - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def triangle_frame(v1, v2, v3) -> np.ndarray:
    """Edge/normal frame of a triangle, columns ``(v2-v1, v3-v1, n)``.

    ``n = (e1 x e2) / sqrt(|e1 x e2|)``, which scales like an edge so the frame of a
    uniformly scaled triangle scales uniformly too.
    """
    v1 = np.asarray(v1, dtype=float)
    e1 = np.asarray(v2, dtype=float) - v1
    e2 = np.asarray(v3, dtype=float) - v1
    c = np.cross(e1, e2)
    cn = float(np.linalg.norm(c))
    if not cn > DEGENERACY_EPS:
        raise DegenerateTriangle(f"triangle cross-product norm {cn:.3g} <= {DEGENERACY_EPS}")
    return np.column_stack((e1, e2, c / math.sqrt(cn)))
