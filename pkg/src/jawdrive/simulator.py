"""Hardware-free IMU source: keyframed gestures rendered as MSP byte streams.

Script files are JSON, angles in degrees::

    {"loop": false,
     "keyframes": [{"t": 0.0, "roll": 0, "pitch": 0, "yaw": 0},
                   {"t": 2.0, "roll": 20, "pitch": 0, "yaw": 0}]}

Avoid pitch near +-90 deg: the Euler decomposition used on the wire is singular there.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geomcore import (
    UnitQuaternion,
    conjugate,
    quat_from_euler,
    quat_from_rotvec,
    quat_mul,
    quat_to_euler,
    quat_to_mat3,
    quat_to_rotvec,
    slerp,
)
from .msp import attitude_frame, encode_frame, raw_imu_frame
from .orientation import DEFAULT_ACCEL_SCALE, DEFAULT_GYRO_SCALE, GRAVITY

MAX_RATE_HZ = 10_000.0


class BadRate(ValueError):
    pass


@dataclass(frozen=True)
class GestureScript:
    keyframes: tuple[tuple[float, UnitQuaternion], ...]
    loop: bool = False

    def __post_init__(self) -> None:
        kf = tuple((float(t), q) for t, q in self.keyframes)
        if not kf:
            raise ValueError("a script needs at least one keyframe")
        times = [t for t, _ in kf]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("keyframe times must be strictly increasing")
        object.__setattr__(self, "keyframes", kf)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.keyframes]

    @classmethod
    def from_euler_deg(cls, keyframes, loop: bool = False) -> GestureScript:
        """Build from ``(t, roll, pitch, yaw)`` tuples, angles in degrees."""
        return cls(
            tuple(
                (t, quat_from_euler(math.radians(r), math.radians(p), math.radians(y)))
                for t, r, p, y in keyframes
            ),
            loop,
        )


@dataclass(frozen=True)
class NoiseConfig:
    attitude_noise_deg: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.attitude_noise_deg >= 0.0:
            raise ValueError("noise must be >= 0")


def load_script(path) -> GestureScript:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    frames = [(k["t"], k.get("roll", 0.0), k.get("pitch", 0.0), k.get("yaw", 0.0)) for k in doc["keyframes"]]
    return GestureScript.from_euler_deg(frames, loop=bool(doc.get("loop", False)))


def jaw_open_script(calibration: float = 2.0, ramp: float = 2.0, angle_deg: float = 20.0, hold: float = 1.0) -> GestureScript:
    """Hold still for calibration, roll from 0 to ``angle_deg`` over ``ramp`` seconds, hold."""
    return GestureScript.from_euler_deg(
        [
            (0.0, 0.0, 0.0, 0.0),
            (calibration, 0.0, 0.0, 0.0),
            (calibration + ramp, angle_deg, 0.0, 0.0),
            (calibration + ramp + hold, angle_deg, 0.0, 0.0),
        ]
    )


BUILTIN_SCRIPTS = {"jaw-open": jaw_open_script}


def sample_script(script: GestureScript, t: float) -> UnitQuaternion:
    if t < 0.0:
        raise ValueError("script time must be >= 0")
    times = script.times
    end = times[-1]
    if script.loop and end > 0.0 and t > end:
        t = math.fmod(t, end)
    if t <= times[0]:
        return script.keyframes[0][1]
    if t >= end:
        return script.keyframes[-1][1]
    i = bisect.bisect_right(times, t) - 1
    (t0, q0), (t1, q1) = script.keyframes[i], script.keyframes[i + 1]
    return slerp(q0, q1, (t - t0) / (t1 - t0))


def _frame_times(rate_hz: float, duration: float) -> np.ndarray:
    if not 0.0 < rate_hz <= MAX_RATE_HZ:
        raise BadRate(f"rate must be in (0, {MAX_RATE_HZ:g}] Hz, got {rate_hz}")
    if not duration > 0.0:
        raise ValueError("duration must be positive")
    n = math.floor(duration * rate_hz) + 1
    return np.arange(n) / rate_hz


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def quantize_attitude(q: UnitQuaternion) -> tuple[int, int, int]:
    """Orientation to wire units: roll/pitch decidegrees, yaw whole degrees in [0, 360)."""
    roll, pitch, yaw = (math.degrees(a) for a in quat_to_euler(q))
    return _round_half_up(roll * 10.0), _round_half_up(pitch * 10.0), _round_half_up(yaw) % 360


def generate_stream(script: GestureScript, rate_hz: float, duration: float, noise: NoiseConfig = NoiseConfig()) -> bytes:
    """Encoded ATTITUDE reply frames at ``floor(duration * rate) + 1`` uniform instants.

    Noise is a body-frame rotation vector drawn per sample from an isotropic normal
    with the configured per-axis standard deviation (numpy PCG64 seeded by ``seed``).
    """
    times = _frame_times(rate_hz, duration)
    sigma = math.radians(noise.attitude_noise_deg)
    perturb = None
    if sigma > 0.0:
        perturb = np.random.default_rng(noise.seed).normal(0.0, sigma, size=(len(times), 3))
    out = bytearray()
    for i, t in enumerate(times):
        q = sample_script(script, float(t))
        if perturb is not None:
            q = quat_mul(q, quat_from_rotvec(perturb[i]))
        out += encode_frame(attitude_frame(*quantize_attitude(q)))
    return bytes(out)


def generate_raw_imu_stream(
    script: GestureScript,
    rate_hz: float,
    duration: float,
    gyro_scale: float = DEFAULT_GYRO_SCALE,
    accel_scale: float = DEFAULT_ACCEL_SCALE,
) -> bytes:
    """Encoded RAW_IMU frames for a noise-free script.

    Gyro counts are the body rate that carries each sample's orientation to the next
    one; accel counts are gravity seen in the body frame. Only meaningful for
    piecewise constant-rate scripts sampled much faster than the keyframes.
    """
    times = _frame_times(rate_hz, duration)
    dt = 1.0 / rate_hz
    up = np.array([0.0, 0.0, GRAVITY])
    out = bytearray()
    for t in times:
        q = sample_script(script, float(t))
        q_next = sample_script(script, float(t) + dt)
        omega = quat_to_rotvec(quat_mul(conjugate(q), q_next)) / dt
        accel = quat_to_mat3(q).T @ up
        gyro_counts = np.rint(omega / gyro_scale)
        accel_counts = np.rint(accel / accel_scale)
        out += encode_frame(raw_imu_frame(accel_counts, gyro_counts))
    return bytes(out)


def write_capture(path, stream: bytes) -> None:
    Path(path).write_bytes(bytes(stream))
