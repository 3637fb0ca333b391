"""MultiWii Serial Protocol v1 framing, as spoken by BetaFlight.

Frame layout::

    '$' 'M' <dir> <size> <command> <payload: size bytes> <checksum>

``dir`` is ``'<'`` for requests to the flight controller and ``'>'`` for replies.
The checksum is the XOR of size, command and every payload byte. All multi-byte
payload fields are little-endian.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import reduce
from operator import xor

import numpy as np

MSP_RAW_IMU = 102
MSP_ATTITUDE = 108

HEADER = b"$M"
MAX_PAYLOAD = 255
FRAME_OVERHEAD = 6  # '$', 'M', dir, size, command, checksum

_ATTITUDE = struct.Struct("<hhh")
_RAW_IMU = struct.Struct("<9h")


class MspError(ValueError):
    pass


class PayloadTooLong(MspError):
    pass


class WrongCommand(MspError):
    pass


class BadLength(MspError):
    pass


class Direction(enum.Enum):
    TO_FC = ord("<")
    FROM_FC = ord(">")


@dataclass(frozen=True)
class MspFrame:
    direction: Direction
    command: int
    payload: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.command <= 255:
            raise MspError(f"command {self.command} does not fit one byte")
        object.__setattr__(self, "payload", bytes(self.payload))
        if len(self.payload) > MAX_PAYLOAD:
            raise PayloadTooLong(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")


@dataclass(frozen=True)
class AttitudeSample:
    """Filtered attitude: roll/pitch in decidegrees, yaw in whole degrees [0, 360)."""

    roll: int
    pitch: int
    yaw: int
    rx_time: float


@dataclass(frozen=True)
class RawImuSample:
    """Raw sensor counts as three ``(3,)`` integer arrays."""

    accel: np.ndarray
    gyro: np.ndarray
    mag: np.ndarray
    rx_time: float


def checksum(size: int, command: int, payload: bytes) -> int:
    return reduce(xor, payload, size ^ command)


def encode_frame(frame: MspFrame) -> bytes:
    size = len(frame.payload)
    if size > MAX_PAYLOAD:
        raise PayloadTooLong(f"payload of {size} bytes exceeds {MAX_PAYLOAD}")
    return (
        HEADER
        + bytes((frame.direction.value, size, frame.command))
        + frame.payload
        + bytes((checksum(size, frame.command, frame.payload),))
    )


class DecoderState(enum.Enum):
    AWAIT_HEADER = "await_header"
    HEADER_PARTIAL = "header_partial"
    AWAIT_SIZE = "await_size"
    AWAIT_COMMAND = "await_command"
    PAYLOAD = "payload"
    AWAIT_CHECKSUM = "await_checksum"


_DIRECTIONS = {d.value: d for d in Direction}


class StreamDecoder:
    """Resynchronizing MSP v1 decoder fed with arbitrary byte chunks.

    Bytes of a partially received frame are kept across calls. When a header is
    malformed or a checksum fails, scanning restarts one byte after the ``'$'`` that
    started the rejected frame, so a real frame hidden inside a corrupted one is
    still found. Output depends only on the concatenated input, never on how it was
    chunked.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.frames_ok = 0
        self.frames_bad_checksum = 0
        self.bytes_skipped = 0

    @property
    def state(self) -> DecoderState:
        n = len(self._buf)
        if n == 0:
            return DecoderState.AWAIT_HEADER
        if n < 3:
            return DecoderState.HEADER_PARTIAL
        if n == 3:
            return DecoderState.AWAIT_SIZE
        if n == 4:
            return DecoderState.AWAIT_COMMAND
        if n < 5 + self._buf[3]:
            return DecoderState.PAYLOAD
        return DecoderState.AWAIT_CHECKSUM

    def _skip(self, n: int) -> None:
        del self._buf[:n]
        self.bytes_skipped += n

    def feed(self, chunk: bytes) -> list[MspFrame]:
        buf = self._buf
        buf += chunk
        out: list[MspFrame] = []
        while buf:
            start = buf.find(b"$")
            if start < 0:
                self._skip(len(buf))
                break
            if start:
                self._skip(start)
            if len(buf) < 2:
                break
            if buf[1] != 0x4D:
                self._skip(1)
                continue
            if len(buf) < 3:
                break
            direction = _DIRECTIONS.get(buf[2])
            if direction is None:
                self._skip(1)
                continue
            if len(buf) < 4:
                break
            size = buf[3]
            end = 5 + size
            if len(buf) <= end:
                break
            command = buf[4]
            payload = bytes(buf[5:end])
            if checksum(size, command, payload) != buf[end]:
                self.frames_bad_checksum += 1
                self._skip(1)
                continue
            del buf[: end + 1]
            self.frames_ok += 1
            out.append(MspFrame(direction, command, payload))
        return out


def decode_bytes(decoder: StreamDecoder, chunk: bytes) -> list[MspFrame]:
    return decoder.feed(chunk)


def parse_attitude(frame: MspFrame, rx_time: float = 0.0) -> AttitudeSample:
    if frame.command != MSP_ATTITUDE:
        raise WrongCommand(f"expected command {MSP_ATTITUDE}, got {frame.command}")
    if len(frame.payload) != _ATTITUDE.size:
        raise BadLength(f"ATTITUDE payload must be {_ATTITUDE.size} bytes, got {len(frame.payload)}")
    roll, pitch, yaw = _ATTITUDE.unpack(frame.payload)
    return AttitudeSample(roll, pitch, yaw % 360, rx_time)


def parse_raw_imu(frame: MspFrame, rx_time: float = 0.0) -> RawImuSample:
    if frame.command != MSP_RAW_IMU:
        raise WrongCommand(f"expected command {MSP_RAW_IMU}, got {frame.command}")
    if len(frame.payload) != _RAW_IMU.size:
        raise BadLength(f"RAW_IMU payload must be {_RAW_IMU.size} bytes, got {len(frame.payload)}")
    v = np.array(_RAW_IMU.unpack(frame.payload), dtype=np.int64)
    return RawImuSample(v[0:3], v[3:6], v[6:9], rx_time)


def attitude_frame(roll: int, pitch: int, yaw: int) -> MspFrame:
    """Reply frame carrying an ATTITUDE payload (decidegrees, decidegrees, degrees)."""
    return MspFrame(Direction.FROM_FC, MSP_ATTITUDE, _ATTITUDE.pack(roll, pitch, yaw))


def raw_imu_frame(accel, gyro, mag=(0, 0, 0)) -> MspFrame:
    values = [int(v) for v in (*accel, *gyro, *mag)]
    return MspFrame(Direction.FROM_FC, MSP_RAW_IMU, _RAW_IMU.pack(*values))
