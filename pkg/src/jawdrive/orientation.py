"""From telemetry samples to a calibrated jaw target rotation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geomcore import (
    UnitQuaternion,
    angle_between,
    conjugate,
    is_rotation,
    quat_dot,
    quat_from_axis_angle,
    quat_from_euler,
    quat_from_rotvec,
    quat_mul,
    quat_to_mat3,
    rotation_axis_angle,
    slerp,
)
from .msp import AttitudeSample, RawImuSample

GRAVITY = 9.80665
# BetaFlight reports MSP_RAW_IMU gyro in deg/s and accel with 1 g = 512 counts.
DEFAULT_GYRO_SCALE = math.radians(1.0)
DEFAULT_ACCEL_SCALE = GRAVITY / 512.0
SPREAD_WARN = math.radians(10.0)


class NonMonotoneTime(ValueError):
    pass


class EmptyCalibration(ValueError):
    pass


class NotARotation(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    alpha: float = 0.02
    gyro_scale: float = DEFAULT_GYRO_SCALE
    accel_scale: float = DEFAULT_ACCEL_SCALE

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (self.gyro_scale > 0.0 and self.accel_scale > 0.0):
            raise ValueError("sensor scales must be positive")


@dataclass(frozen=True)
class OrientationState:
    q: UnitQuaternion
    last_time: float


@dataclass(frozen=True)
class ReferencePose:
    q_ref: UnitQuaternion
    sample_count: int
    spread: float


@dataclass(frozen=True)
class MappingConfig:
    """IMU-to-rig alignment and the jaw-angle clamp (``max_angle = pi`` disables it)."""

    R_align: np.ndarray = field(default_factory=lambda: np.eye(3))
    max_angle: float = math.radians(25.0)

    def __post_init__(self) -> None:
        r = np.array(self.R_align, dtype=float)
        if not is_rotation(r):
            raise NotARotation("R_align must be a proper rotation")
        r.flags.writeable = False
        object.__setattr__(self, "R_align", r)
        if not 0.0 < self.max_angle <= math.pi:
            raise ValueError(f"max_angle must be in (0, pi], got {self.max_angle}")


def attitude_to_quat(s: AttitudeSample) -> UnitQuaternion:
    return quat_from_euler(
        math.radians(s.roll * 0.1), math.radians(s.pitch * 0.1), math.radians(float(s.yaw))
    )


def filter_step(state: OrientationState, s: RawImuSample, cfg: FilterConfig) -> OrientationState:
    """One complementary-filter update.

    The gyro rate (body frame) is integrated exactly over ``dt`` assuming it is
    constant; then a fraction ``alpha`` of the tilt correction that would rotate the
    measured specific force onto world up is applied. Yaw is unobservable from the
    accelerometer and drifts freely.
    """
    dt = s.rx_time - state.last_time
    if not dt > 0.0:
        raise NonMonotoneTime(f"sample time {s.rx_time} not after {state.last_time}")
    q = state.q
    gx, gy, gz = (float(v) * cfg.gyro_scale for v in s.gyro)
    if gx or gy or gz:
        q = quat_mul(q, quat_from_rotvec((gx * dt, gy * dt, gz * dt)))

    ax, ay, az = (float(v) for v in s.accel)
    an = math.sqrt(ax * ax + ay * ay + az * az)
    if cfg.alpha > 0.0 and an > 0.0:
        # measured specific force in the world frame; at rest it points up (+z)
        r = quat_to_mat3(q)
        wx = (r[0, 0] * ax + r[0, 1] * ay + r[0, 2] * az) / an
        wy = (r[1, 0] * ax + r[1, 1] * ay + r[1, 2] * az) / an
        wz = (r[2, 0] * ax + r[2, 1] * ay + r[2, 2] * az) / an
        # axis = a_world x up = (wy, -wx, 0)
        sn = math.hypot(wx, wy)
        angle = math.atan2(sn, wz)
        if sn > 0.0:
            correction = quat_from_axis_angle((wy / sn, -wx / sn, 0.0), angle)
        elif angle > 0.0:
            # upside down: any horizontal axis works
            correction = quat_from_axis_angle((1.0, 0.0, 0.0), angle)
        else:
            correction = UnitQuaternion.identity()
        q = slerp(q, quat_mul(correction, q), cfg.alpha)
    return OrientationState(q, s.rx_time)


def calibrate_reference(samples) -> ReferencePose:
    """Average a window of orientations into the reference pose.

    Component-wise quaternion mean after aligning signs to the first sample; fine
    for the small spreads expected while the hand is held still.
    """
    samples = list(samples)
    if not samples:
        raise EmptyCalibration("no samples in calibration window")
    first = samples[0]
    acc = np.zeros(4)
    for q in samples:
        a = q.as_array()
        acc += a if quat_dot(q, first) >= 0.0 else -a
    q_ref = UnitQuaternion(*acc)
    spread = max(angle_between(q_ref, q) for q in samples)
    return ReferencePose(q_ref, len(samples), spread)


def relative_rotation(q: UnitQuaternion, ref: ReferencePose) -> np.ndarray:
    """Sensor rotation since calibration, expressed in the reference sensor frame."""
    return quat_to_mat3(quat_mul(conjugate(ref.q_ref), q))


def map_to_jaw_target(R_rel, cfg: MappingConfig) -> np.ndarray:
    R_rel = np.asarray(R_rel, dtype=float)
    if not is_rotation(R_rel):
        raise NotARotation("relative rotation is not a proper rotation")
    T = cfg.R_align @ R_rel @ cfg.R_align.T
    axis, angle = rotation_axis_angle(T)
    if angle > cfg.max_angle:
        T = quat_to_mat3(quat_from_axis_angle(axis, cfg.max_angle))
    return T
