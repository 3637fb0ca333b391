"""Command-line entry point: ``jawdrive {calibrate,run,simulate,bench}``.

Exit codes: 0 ok, 2 configuration or rig error, 3 source error, 4 calibration failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import signal
import sys
import threading

from . import pipeline, simulator
from .geomcore import quat_to_euler
from .msp import MspError
from .pipeline import ConfigError, PipelineConfig, PipelineError
from .rig import RigLoadError

EXIT_OK, EXIT_CONFIG, EXIT_SOURCE, EXIT_CALIBRATION = 0, 2, 3, 4


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON pipeline config; flags override its values")
    p.add_argument("--source", help="file:<path> | tcp:<host>:<port> | serial:<dev>:<baud>")
    p.add_argument("--rig", help="rig manifest path or builtin:wedge")
    p.add_argument("--calibration", type=float, dest="calibration_duration", help="calibration window, seconds")
    p.add_argument("--out-weights", help="weights CSV output path")
    p.add_argument("--out-frames", help="directory for OBJ frame sequence")
    p.add_argument("--stride", type=int, dest="frame_stride", help="export every Nth frame")
    p.add_argument("--lambda", type=float, dest="lam", help="relative Tikhonov weight")
    p.add_argument("--no-clamp", action="store_true", default=None, help="keep weights outside [0, 1]")
    p.add_argument("--max-angle-deg", type=float, help="jaw rotation clamp, degrees")
    p.add_argument("--smooth", type=float, dest="smoothing", help="exponential smoothing factor in [0, 1)")
    p.add_argument("--replay-lockstep", action="store_true", default=None, help="never drop samples (file replay)")
    p.add_argument("--raw-imu", action="store_true", default=None, dest="use_raw_imu", help="use RAW_IMU + complementary filter")
    p.add_argument("--replay-rate", type=float, dest="replay_rate_hz", help="sample rate assumed for capture files")
    p.add_argument("--replay-speed", type=float, dest="replay_speed", help="file replay pace, x real time (0 = unpaced)")
    p.add_argument("--max-rate", type=float, dest="max_rate_hz", help="cap on solved frames per second")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")


def build_config(args: argparse.Namespace) -> PipelineConfig:
    merged = pipeline.load_config(args.config) if args.config else {}
    for key in (
        "source", "rig", "calibration_duration", "out_weights", "out_frames", "frame_stride",
        "smoothing", "replay_lockstep", "use_raw_imu", "replay_rate_hz", "replay_speed", "max_rate_hz",
    ):  # fmt: skip
        if getattr(args, key, None) is not None:
            merged[key] = getattr(args, key)
    solve = dict(merged.get("solve") or {})
    if args.lam is not None:
        solve["lam"] = args.lam
    if args.no_clamp:
        solve["clamp"] = False
    merged["solve"] = solve
    mapping = dict(merged.get("mapping") or {})
    if args.max_angle_deg is not None:
        mapping["max_angle_deg"] = args.max_angle_deg
    merged["mapping"] = mapping
    return PipelineConfig.from_dict(merged)


def _install_interrupt(stop: threading.Event) -> None:
    def handler(signum, frame):
        if stop.is_set():
            os._exit(130)
        print("interrupt: flushing outputs (again to abort)", file=sys.stderr)
        stop.set()

    signal.signal(signal.SIGINT, handler)


def cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK
    stop = threading.Event()
    if threading.current_thread() is threading.main_thread():
        _install_interrupt(stop)
    metrics = pipeline.run(config, stop)
    print(metrics.table())
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = build_config(args)
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK
    ref = pipeline.calibrate(config)
    q = ref.q_ref
    roll, pitch, yaw = (math.degrees(a) for a in quat_to_euler(q))
    print(f"q_ref        {q.w!r} {q.x!r} {q.y!r} {q.z!r}")
    print(f"euler_deg    roll={roll:.3f} pitch={pitch:.3f} yaw={yaw:.3f}")
    print(f"samples      {ref.sample_count}")
    print(f"spread_deg   {math.degrees(ref.spread):.4f}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.script in simulator.BUILTIN_SCRIPTS:
        script = simulator.BUILTIN_SCRIPTS[args.script]()
    else:
        try:
            script = simulator.load_script(args.script)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load script {args.script}: {exc}") from exc
    try:
        if not 0.0 < args.rate <= simulator.MAX_RATE_HZ:
            raise simulator.BadRate(f"rate must be in (0, {simulator.MAX_RATE_HZ:g}] Hz, got {args.rate}")
        duration = args.duration if args.duration is not None else max(script.times[-1], 1.0 / args.rate)
        if args.raw_imu:
            stream = simulator.generate_raw_imu_stream(script, args.rate, duration)
        else:
            noise = simulator.NoiseConfig(args.noise_deg, args.seed)
            stream = simulator.generate_stream(script, args.rate, duration, noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    simulator.write_capture(args.out, stream)
    print(f"wrote {len(stream)} bytes to {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    result = pipeline.bench(args.shapes, args.triangles, args.frames, args.seed)
    print(result.table())
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jawdrive", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="calibrate, then solve weights for every sample")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="print the reference pose from the first window")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="write a simulated MSP capture")
    p.add_argument("--script", default="jaw-open", help="script JSON path or builtin name (jaw-open)")
    p.add_argument("--out", required=True, help="capture file to write")
    p.add_argument("--rate", type=float, default=100.0, help="frames per second")
    p.add_argument("--duration", type=float, help="seconds (default: script length)")
    p.add_argument("--noise-deg", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw-imu", action="store_true", help="emit RAW_IMU instead of ATTITUDE frames")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="solver per-frame timing table")
    p.add_argument("--shapes", type=int, default=30)
    p.add_argument("--triangles", type=int, default=500)
    p.add_argument("--frames", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RigLoadError as exc:
        print(f"rig error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (MspError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
