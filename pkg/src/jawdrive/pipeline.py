"""End-to-end run: byte source -> MSP decode -> orientation -> calibrated target -> weights.

Ingestion (reading, decoding, orientation filtering) runs in a background thread and
hands samples to the solve loop through a single-slot mailbox. Live sources use
newest-wins hand-off, so a slow solver drops stale samples instead of queueing
them. Lock-step mode blocks the reader until each sample is consumed; with a file
source it makes a run a pure function of the capture.

Capture files carry no timestamps, so file sources are stamped with a replay clock
``i / replay_rate_hz`` and, outside lock-step mode, paced against the wall clock at
``replay_speed`` times real time (0 means as fast as possible). TCP and serial
sources are stamped with the monotonic clock.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import socket
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .geomcore import UnitQuaternion, quat_to_mat3
from .msp import MSP_ATTITUDE, MSP_RAW_IMU, StreamDecoder, parse_attitude, parse_raw_imu
from .orientation import (
    FilterConfig,
    MappingConfig,
    OrientationState,
    ReferencePose,
    attitude_to_quat,
    calibrate_reference,
    filter_step,
    map_to_jaw_target,
    relative_rotation,
)
from .rig import BlendshapeRig, RegionMask, RigLoadError, apply_weights, export_obj, load_manifest, wedge_rig
from .transfer import FrameSolution, SolveConfig, build_system, solve, target_rhs

log = logging.getLogger(__name__)

BUILTIN_RIGS = {"builtin:wedge": wedge_rig}


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class SourceUnavailable(PipelineError):
    exit_code = 3


class CalibrationFailed(PipelineError):
    exit_code = 4


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class SourceSpec:
    kind: str  # "file" | "tcp" | "serial"
    path: str = ""
    host: str = ""
    port: int = 0
    baud: int = 115200

    @classmethod
    def parse(cls, text: str) -> SourceSpec:
        kind, _, rest = text.partition(":")
        try:
            if kind == "file" and rest:
                return cls("file", path=rest)
            if kind == "tcp":
                host, _, port = rest.rpartition(":")
                return cls("tcp", host=host, port=int(port))
            if kind == "serial":
                dev, _, baud = rest.rpartition(":")
                if not dev:
                    return cls("serial", path=rest)
                return cls("serial", path=dev, baud=int(baud))
        except ValueError:
            pass
        raise ConfigError(f"bad source {text!r}; expected file:<path>, tcp:<host>:<port> or serial:<dev>:<baud>")

    def __str__(self) -> str:
        if self.kind == "file":
            return f"file:{self.path}"
        if self.kind == "tcp":
            return f"tcp:{self.host}:{self.port}"
        return f"serial:{self.path}:{self.baud}"


@dataclass(frozen=True)
class PipelineConfig:
    source: SourceSpec
    rig: str
    calibration_duration: float = 2.0
    max_calibration_spread_deg: float = 10.0
    mapping: MappingConfig = field(default_factory=MappingConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    use_raw_imu: bool = False
    smoothing: float = 0.0
    out_weights: str | None = None
    out_frames: str | None = None
    frame_stride: int = 1
    max_rate_hz: float | None = None
    replay_lockstep: bool = False
    replay_rate_hz: float = 100.0
    replay_speed: float = 1.0
    chunk_size: int = 4096

    def __post_init__(self) -> None:
        if not self.calibration_duration > 0.0:
            raise ConfigError("calibration_duration must be > 0")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("smoothing must be in [0, 1)")
        if self.frame_stride < 1:
            raise ConfigError("frame_stride must be >= 1")
        if not self.replay_rate_hz > 0.0:
            raise ConfigError("replay_rate_hz must be > 0")
        if not self.replay_speed >= 0.0:
            raise ConfigError("replay_speed must be >= 0")
        if self.max_rate_hz is not None and not self.max_rate_hz > 0.0:
            raise ConfigError("max_rate_hz must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source"] = str(self.source)
        d["mapping"] = {
            "R_align": self.mapping.R_align.tolist(),
            "max_angle_deg": math.degrees(self.mapping.max_angle),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        d = dict(d)
        try:
            if not d.get("source") or not d.get("rig"):
                raise ConfigError("config needs exactly one 'source' and a 'rig'")
            source = d.pop("source")
            d["source"] = source if isinstance(source, SourceSpec) else SourceSpec.parse(source)
            m = d.pop("mapping", None) or {}
            if not isinstance(m, MappingConfig):
                m = MappingConfig(
                    np.array(m.get("R_align", np.eye(3)), dtype=float),
                    math.radians(m.get("max_angle_deg", 25.0)),
                )
            d["mapping"] = m
            s = d.pop("solve", None) or {}
            d["solve"] = s if isinstance(s, SolveConfig) else SolveConfig(**s)
            f = d.pop("filter", None) or {}
            d["filter"] = f if isinstance(f, FilterConfig) else FilterConfig(**f)
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _resolve(p: str, base_dir: Path) -> str:
    if p.startswith("builtin:") or Path(p).is_absolute():
        return p
    return str(base_dir / p)


def load_config(path) -> dict:
    """Raw config mapping from a JSON file.

    Relative rig, capture and output paths are resolved against the file's directory.
    """
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    base = path.resolve().parent
    for key in ("rig", "out_weights", "out_frames"):
        if isinstance(d.get(key), str):
            d[key] = _resolve(d[key], base)
    src = d.get("source")
    if isinstance(src, str) and src.startswith("file:"):
        d["source"] = "file:" + _resolve(src[5:], base)
    return d


def load_rig(spec: str) -> tuple[BlendshapeRig, RegionMask]:
    if spec in BUILTIN_RIGS:
        return BUILTIN_RIGS[spec]()
    try:
        return load_manifest(spec)
    except (OSError, KeyError, ValueError) as exc:
        raise RigLoadError(f"cannot load rig {spec}: {exc}") from exc


# -- byte sources ------------------------------------------------------------------


def iter_source(spec: SourceSpec, stop: threading.Event, chunk_size: int = 4096) -> Iterator[bytes]:
    """Yield byte chunks until the source ends or ``stop`` is set."""
    if spec.kind == "file":
        try:
            fh = open(spec.path, "rb")
        except OSError as exc:
            raise SourceUnavailable(f"cannot open capture {spec.path}: {exc}") from exc
        with fh:
            while not stop.is_set():
                chunk = fh.read(chunk_size)
                if not chunk:
                    return
                yield chunk
    elif spec.kind == "tcp":
        try:
            sock = socket.create_connection((spec.host, spec.port), timeout=5.0)
        except OSError as exc:
            raise SourceUnavailable(f"cannot connect to {spec.host}:{spec.port}: {exc}") from exc
        with sock:
            sock.settimeout(0.2)
            while not stop.is_set():
                try:
                    chunk = sock.recv(chunk_size)
                except socket.timeout:
                    continue
                except OSError as exc:
                    log.warning("tcp source error: %s", exc)
                    return
                if not chunk:
                    return
                yield chunk
    elif spec.kind == "serial":
        try:
            import serial  # pyserial, optional
        except ImportError as exc:
            raise SourceUnavailable("serial sources need the 'pyserial' package") from exc
        try:
            port = serial.Serial(spec.path, spec.baud, timeout=0.2)
        except (OSError, serial.SerialException) as exc:
            raise SourceUnavailable(f"cannot open {spec.path}: {exc}") from exc
        with port:
            while not stop.is_set():
                chunk = port.read(chunk_size)
                if chunk:
                    yield chunk
    else:
        raise ConfigError(f"unknown source kind {spec.kind!r}")


class Mailbox:
    """Single-slot hand-off between the ingest and solve threads.

    With ``lockstep`` off a new item replaces an unconsumed one (newest wins) and the
    replaced item is counted in ``dropped``; with it on, ``put`` blocks until the slot
    is free.
    """

    def __init__(self, lockstep: bool = False) -> None:
        self._cond = threading.Condition()
        self._item = None
        self._full = False
        self._closed = False
        self.lockstep = lockstep
        self.dropped = 0

    def put(self, item, stop: threading.Event | None = None) -> None:
        with self._cond:
            if self.lockstep:
                while self._full and not (stop is not None and stop.is_set()):
                    self._cond.wait(0.1)
            elif self._full:
                self.dropped += 1
            self._item = item
            self._full = True
            self._cond.notify_all()

    def get(self, timeout: float | None = None):
        """Next item, or ``None`` on timeout or once closed and drained."""
        with self._cond:
            if not self._full and not self._closed:
                self._cond.wait(timeout)
            if not self._full:
                return None
            item, self._item, self._full = self._item, None, False
            self._cond.notify_all()
            return item

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def drained(self) -> bool:
        with self._cond:
            return self._closed and not self._full


@dataclass(frozen=True)
class Sample:
    rx_time: float
    q: UnitQuaternion
    decoded_at: float  # perf_counter stamp, for latency


class _Ingest(threading.Thread):
    def __init__(self, config: PipelineConfig, mailbox: Mailbox, stop: threading.Event) -> None:
        super().__init__(name="jawdrive-ingest", daemon=True)
        self.config = config
        self.mailbox = mailbox
        self.stop = stop
        self.decoder = StreamDecoder()
        self.frames_in = 0
        self.error: BaseException | None = None

    def run(self) -> None:
        cfg = self.config
        replay = cfg.source.kind == "file"
        pace = replay and not cfg.replay_lockstep and cfg.replay_speed > 0.0
        t_start = time.monotonic()
        state: OrientationState | None = None
        command = MSP_RAW_IMU if cfg.use_raw_imu else MSP_ATTITUDE
        index = 0
        try:
            for chunk in iter_source(cfg.source, self.stop, cfg.chunk_size):
                for frame in self.decoder.feed(chunk):
                    if frame.command != command:
                        continue
                    rx = index / cfg.replay_rate_hz if replay else time.monotonic() - t_start
                    index += 1
                    if cfg.use_raw_imu:
                        raw = parse_raw_imu(frame, rx)
                        if state is None:
                            state = OrientationState(UnitQuaternion.identity(), rx)
                            q = state.q
                        else:
                            state = filter_step(state, raw, cfg.filter)
                            q = state.q
                    else:
                        q = attitude_to_quat(parse_attitude(frame, rx))
                    if pace:
                        delay = t_start + rx / cfg.replay_speed - time.monotonic()
                        if delay > 0.0:
                            self.stop.wait(delay)
                    self.frames_in += 1
                    self.mailbox.put(Sample(rx, q, time.perf_counter()), self.stop)
                    if self.stop.is_set():
                        return
        except BaseException as exc:  # surfaced by the solve loop
            self.error = exc
        finally:
            self.mailbox.close()


# -- outputs -----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_weights_csv(path, rows, names) -> None:
    """Write ``time,<names...>,residual`` rows; values are exact float reprs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", *names, "residual"])
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_weights_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def frame_filename(index: int) -> str:
    return f"frame_{index:06d}.obj"


def export_frames(rig: BlendshapeRig, solutions, directory, stride: int = 1) -> list[Path]:
    """Export every ``stride``-th solution's mesh, named by solution index."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, sol in enumerate(solutions):
        if i % stride == 0:
            w = sol.w if isinstance(sol, FrameSolution) else sol
            p = directory / frame_filename(i)
            export_obj(apply_weights(rig, w), p)
            written.append(p)
    return written


# -- run ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    frames_in: int
    frames_solved: int
    frames_dropped: int
    frames_calibration: int
    bad_checksums: int
    latency_p50: float
    latency_p95: float
    latency_p99: float
    wall_time: float
    reference: ReferencePose | None = None
    latencies: tuple[float, ...] = ()  # per solved frame, decode -> solve done

    def table(self) -> str:
        rows = [
            ("frames_in", self.frames_in),
            ("frames_calibration", self.frames_calibration),
            ("frames_solved", self.frames_solved),
            ("frames_dropped", self.frames_dropped),
            ("bad_checksums", self.bad_checksums),
            ("latency_p50_ms", f"{self.latency_p50 * 1e3:.4f}"),
            ("latency_p95_ms", f"{self.latency_p95 * 1e3:.4f}"),
            ("latency_p99_ms", f"{self.latency_p99 * 1e3:.4f}"),
            ("wall_time_s", f"{self.wall_time:.3f}"),
        ]
        return "\n".join(f"{k:<20}{v}" for k, v in rows)


def _percentiles(latencies: list[float]) -> tuple[float, float, float]:
    if not latencies:
        return 0.0, 0.0, 0.0
    p = np.percentile(np.asarray(latencies), [50, 95, 99])
    return float(p[0]), float(p[1]), float(p[2])


def _calibrate(samples: list[Sample], cfg: PipelineConfig) -> ReferencePose:
    ref = calibrate_reference([s.q for s in samples])
    if ref.spread > math.radians(cfg.max_calibration_spread_deg):
        raise CalibrationFailed(
            f"calibration spread {math.degrees(ref.spread):.2f} deg exceeds "
            f"{cfg.max_calibration_spread_deg:g} deg; hold the sensor still"
        )
    return ref


def run(
    config: PipelineConfig,
    stop: threading.Event | None = None,
    calibrate_only: bool = False,
) -> RunMetrics:
    """Calibrate on the first window of samples, then solve every sample that arrives.

    Outputs are created only after calibration succeeds. Returns when the source
    ends or ``stop`` is set, after flushing outputs.
    """
    stop = stop or threading.Event()
    t_wall = time.perf_counter()
    rig, mask = load_rig(config.rig)
    system = build_system(rig, mask, config.solve)

    mailbox = Mailbox(lockstep=config.replay_lockstep)
    ingest = _Ingest(config, mailbox, stop)
    ingest.start()

    calib: list[Sample] = []
    ref: ReferencePose | None = None
    latencies: list[float] = []
    solved = 0
    rate_dropped = 0
    w_prev: np.ndarray | None = None
    csv_fh = writer = None
    frames_dir = Path(config.out_frames) if config.out_frames else None
    last_solve = -math.inf

    try:
        while True:
            item = mailbox.get(timeout=0.1)
            if item is None:
                if mailbox.drained or stop.is_set():
                    break
                continue
            if ref is None:
                if calib and item.rx_time - calib[0].rx_time >= config.calibration_duration:
                    ref = _calibrate(calib, config)
                    log.info("reference pose from %d samples, spread %.3f deg", ref.sample_count, math.degrees(ref.spread))
                    if calibrate_only:
                        stop.set()
                        break
                    if config.out_weights:
                        csv_fh = open(config.out_weights, "w", newline="", encoding="utf-8")
                        writer = csv.writer(csv_fh)
                        writer.writerow(["time", *rig.names, "residual"])
                    if frames_dir is not None:
                        frames_dir.mkdir(parents=True, exist_ok=True)
                else:
                    calib.append(item)
                    continue

            if config.max_rate_hz is not None:
                now = time.perf_counter()
                if now - last_solve < 1.0 / config.max_rate_hz:
                    rate_dropped += 1
                    continue
                last_solve = now

            T = map_to_jaw_target(relative_rotation(item.q, ref), config.mapping)
            sol = solve(system, target_rhs(system, T), config.solve)
            w = sol.w
            if config.smoothing > 0.0 and w_prev is not None:
                w = config.smoothing * w_prev + (1.0 - config.smoothing) * w
            w_prev = w
            latencies.append(time.perf_counter() - item.decoded_at)
            if writer is not None:
                writer.writerow([_fmt(item.rx_time), *(_fmt(v) for v in w), _fmt(sol.residual_energy)])
            if frames_dir is not None and solved % config.frame_stride == 0:
                export_obj(apply_weights(rig, w), frames_dir / frame_filename(solved))
            solved += 1
    finally:
        stop.set()
        ingest.join(timeout=5.0)
        if csv_fh is not None:
            csv_fh.close()

    if ingest.error is not None:
        if isinstance(ingest.error, PipelineError):
            raise ingest.error
        raise SourceUnavailable(f"ingest failed: {ingest.error}") from ingest.error
    if ref is None:
        raise CalibrationFailed(
            f"source ended after {len(calib)} samples, inside the "
            f"{config.calibration_duration:g} s calibration window"
        )

    p50, p95, p99 = _percentiles(latencies)
    return RunMetrics(
        frames_in=ingest.frames_in,
        frames_solved=solved,
        frames_dropped=mailbox.dropped + rate_dropped,
        frames_calibration=len(calib),
        bad_checksums=ingest.decoder.frames_bad_checksum,
        latency_p50=p50,
        latency_p95=p95,
        latency_p99=p99,
        wall_time=time.perf_counter() - t_wall,
        reference=ref,
        latencies=tuple(latencies),
    )


def calibrate(config: PipelineConfig) -> ReferencePose:
    return run(config, calibrate_only=True).reference


# -- benchmark ---------------------------------------------------------------------


@dataclass(frozen=True)
class BenchResult:
    num_shapes: int
    num_triangles: int
    frames: int
    median: float
    p95: float
    p99: float
    mean: float
    build_time: float

    def table(self) -> str:
        rows = [
            ("shapes (K)", self.num_shapes),
            ("masked triangles", self.num_triangles),
            ("frames", self.frames),
            ("build_system ms", f"{self.build_time * 1e3:.3f}"),
            ("per-frame median ms", f"{self.median * 1e3:.4f}"),
            ("per-frame p95 ms", f"{self.p95 * 1e3:.4f}"),
            ("per-frame p99 ms", f"{self.p99 * 1e3:.4f}"),
            ("per-frame mean ms", f"{self.mean * 1e3:.4f}"),
        ]
        return "\n".join(f"{k:<22}{v}" for k, v in rows)


def bench(num_shapes: int = 30, num_triangles: int = 500, frames: int = 10_000, seed: int = 0) -> BenchResult:
    """Time ``target_rhs + solve`` per frame on a synthetic rig with random jaw targets."""
    from .geomcore import quat_from_rotvec
    from .rig import synthetic_rig

    rig, mask = synthetic_rig(num_shapes, num_triangles, seed)
    t0 = time.perf_counter()
    system = build_system(rig, mask, SolveConfig())
    build_time = time.perf_counter() - t0
    rng = np.random.default_rng(seed)
    targets = [quat_to_mat3(quat_from_rotvec(v)) for v in rng.normal(0.0, 0.2, size=(frames, 3))]
    cfg = SolveConfig()
    times = np.empty(frames)
    for i, T in enumerate(targets):
        t = time.perf_counter()
        solve(system, target_rhs(system, T), cfg)
        times[i] = time.perf_counter() - t
    p50, p95, p99 = np.percentile(times, [50, 95, 99])
    return BenchResult(num_shapes, len(mask), frames, float(p50), float(p95), float(p99), float(times.mean()), build_time)

