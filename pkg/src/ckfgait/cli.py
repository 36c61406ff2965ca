"""Command-line interface: ``ckfgait {synth,estimate,evaluate,pipeline}``.

Exit codes: 0 success, 1 bad data or numerical failure, 2 usage error.
Set ``CKFGAIT_LOG`` (e.g. ``INFO``) to change the log level.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import io
from .errors import CkfGaitError, TrialFormatError
from .metrics import MetricReport, aggregate
from .pipeline import estimate, score, synthesize
from .synth import PATHS, GaitParams

log = logging.getLogger("ckfgait")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ckfgait", description="Lower-body kinematics from three IMUs.")
    sub = ap.add_subparsers(dest="command", required=True)

    def synth_opts(p):
        p.add_argument("--seed", type=int, default=0, help="trial seed (start phase, heading, sensor noise)")
        p.add_argument("--path", choices=PATHS, default="straight")
        p.add_argument("--duration", type=float, default=30.0, help="seconds")
        p.add_argument("--cadence", type=float, default=1.8, help="steps per second; 0 for a still trial")
        p.add_argument("--stride-length", type=float, default=1.0, help="meters")
        p.add_argument("--accel-noise", type=float, default=0.0, help="accelerometer noise SD, m/s^2")
        p.add_argument("--ori-noise", type=float, default=0.0, help="orientation noise SD, degrees")

    p = sub.add_parser("synth", help="write a synthetic trial directory")
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--config", type=Path, help="base run configuration to embed")
    synth_opts(p)

    p = sub.add_parser("estimate", help="run the filter on a trial directory")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--events", default=None, help="'detect' or a step-event CSV (default: per config)")

    p = sub.add_parser("evaluate", help="score an estimate against the reference")
    p.add_argument("--input", required=True, type=Path, help="trial directory with reference.csv")
    p.add_argument("--output", required=True, type=Path, help="directory for metrics.json")
    p.add_argument("--estimate", type=Path, help="estimate CSV (default: OUTPUT/estimate.csv)")
    p.add_argument("--config", type=Path, help="run configuration for metric options")
    p.add_argument("--events", default=None, help="step-event CSV for distance metrics (default: INPUT/events.csv)")

    p = sub.add_parser("pipeline", help="synth, estimate and evaluate in one go")
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--config", type=Path, help="run configuration (body and initial state come from the trial)")
    p.add_argument("--events", default="detect", help="'detect', 'file' for the true events, or a CSV path")
    p.add_argument("--batch", type=int, default=1, help="number of trials (seeds SEED..SEED+n-1), run on worker threads")
    synth_opts(p)
    return ap


def _events_arg(value: str | None, default_file: Path, n: int, cfg: io.RunConfig):
    """Resolve an events option to ``StepEvents`` or ``None`` (detect)."""
    if value is None:
        value = "file" if cfg.step_detection.source == "file" else "detect"
    if value == "detect":
        return None
    path = default_file if value == "file" else Path(value)
    if not path.exists():
        raise UsageError(f"step-event file {path} does not exist")
    return io.read_events(path, n)


def _load_config(path: Path | None) -> io.RunConfig | None:
    if path is None:
        return None
    if not path.is_file():
        raise UsageError(f"config file {path} does not exist")
    return io.load_config(path)


def _params(args) -> GaitParams:
    try:
        return GaitParams(
            cadence=args.cadence,
            stride_length=args.stride_length,
            path=args.path,
            duration=args.duration,
            rng_seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _noise(args) -> tuple[float, float]:
    if args.accel_noise < 0 or args.ori_noise < 0:
        raise UsageError("noise levels must be non-negative")
    return args.accel_noise, math.radians(args.ori_noise)


def cmd_synth(args) -> int:
    trial = synthesize(_params(args), *_noise(args), base=_load_config(args.config))
    io.save_trial(args.output, trial)
    log.info("wrote %d frames to %s", len(trial), args.output)
    return 0


def _estimate_into(trial: io.TrialData, cfg: io.RunConfig, events, out: Path):
    poses, diag, used = estimate(trial, cfg, events)
    io.write_estimate(out / io.ESTIMATE_FILE, poses, diag)
    io.write_events(out / "events_used.csv", used)
    if not diag.sckf_converged.all():
        log.warning("projection did not converge on %d frames", int((~diag.sckf_converged).sum()))
    return poses


def cmd_estimate(args) -> int:
    cfg = _load_config(args.config)
    trial = io.load_trial(args.input)
    events = _events_arg(args.events, args.input / io.EVENTS_FILE, len(trial), cfg)
    _estimate_into(trial, cfg, events, args.output)
    return 0


def cmd_evaluate(args) -> int:
    trial = io.load_trial(args.input)
    if trial.reference is None:
        raise UsageError(f"{args.input} has no {io.REFERENCE_FILE}")
    cfg = _load_config(args.config) or trial.config or io.RunConfig()
    est_path = args.estimate or args.output / io.ESTIMATE_FILE
    if not est_path.exists():
        raise UsageError(f"estimate file {est_path} does not exist")
    est = io.read_estimate(est_path)
    if len(est) != len(trial.reference):
        raise TrialFormatError(f"{est_path}: {len(est)} frames but the reference has {len(trial.reference)}")
    events = io.read_events(Path(args.events), len(est)) if args.events else trial.events
    report = score(est, trial.reference, events, cfg)
    io.write_metrics(args.output / io.METRICS_FILE, report.to_dict())
    return 0


def _pipeline_one(args, seed: int, out: Path, base: io.RunConfig | None) -> MetricReport:
    args = argparse.Namespace(**{**vars(args), "seed": seed})
    trial = synthesize(_params(args), *_noise(args), base=base)
    io.save_trial(out / "trial", trial)
    cfg = trial.config
    events = _events_arg(args.events, out / "trial" / io.EVENTS_FILE, len(trial), cfg)
    poses = _estimate_into(trial, cfg, events, out)
    report = score(poses, trial.reference, trial.events, cfg)
    io.write_metrics(out / io.METRICS_FILE, report.to_dict(), seed=seed)
    return report


def cmd_pipeline(args) -> int:
    if args.batch < 1:
        raise UsageError("--batch must be at least 1")
    _params(args)
    _noise(args)
    base = _load_config(args.config)
    if args.batch == 1:
        _pipeline_one(args, args.seed, args.output, base)
        return 0
    seeds = [args.seed + k for k in range(args.batch)]
    workers = min(args.batch, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_pipeline_one, args, s, args.output / f"seed_{s}", base) for s in seeds]
        reports = [f.result() for f in futures]
    io.write_metrics(args.output / "aggregate.json", aggregate(reports), seeds=seeds)
    return 0


COMMANDS = {"synth": cmd_synth, "estimate": cmd_estimate, "evaluate": cmd_evaluate, "pipeline": cmd_pipeline}


def _setup_logging() -> None:
    level = os.environ.get("CKFGAIT_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise UsageError(f"CKFGAIT_LOG={level!r} is not a log level")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)  # exits with status 2 on usage errors
    try:
        _setup_logging()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ckfgait: error: {exc}", file=sys.stderr)
        return 2
    except (CkfGaitError, OSError, ValueError) as exc:
        print(f"ckfgait: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
