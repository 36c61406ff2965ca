"""Trial files, run configuration and metric reports on disk.

A trial directory holds ``imu.csv`` and optionally ``reference.csv``,
``events.csv`` and ``config.json``. Every CSV starts with a
``#format_version=N`` line followed by a mandatory header; floats are
written with 17 significant digits so a write/load round trip is exact.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .body import JOINTS, SEGMENTS, BodyDimensions, PoseTrack
from .ckf import NoiseConfig, StepDiagnostics
from .errors import TrialFormatError
from .preprocess import DEFAULT_THRESHOLD, DEFAULT_WINDOW, GRAVITY, SENSORS, RawImuTrack, StepEvents

FORMAT_VERSION = 1
QUAT_TOLERANCE = 1e-3
IMU_FILE = "imu.csv"
REFERENCE_FILE = "reference.csv"
EVENTS_FILE = "events.csv"
CONFIG_FILE = "config.json"
ESTIMATE_FILE = "estimate.csv"
METRICS_FILE = "metrics.json"

_AXES = ("x", "y", "z")
_QUAT = ("qw", "qx", "qy", "qz")
IMU_COLUMNS = ("t",) + tuple(
    f"{s}_{c}" for s in SENSORS for c in ("ax", "ay", "az") + _QUAT
)
POSE_COLUMNS = (
    ("t",)
    + tuple(f"{j}_{a}" for j in JOINTS for a in _AXES)
    + tuple(f"{s}_{c}" for s in SEGMENTS for c in _QUAT)
)
# non-canonical debugging columns appended to estimates
DEBUG_COLUMNS = (
    "dbg_lthigh_length_residual",
    "dbg_rthigh_length_residual",
    "dbg_lhinge_residual",
    "dbg_rhinge_residual",
    "dbg_lknee_angle",
    "dbg_rknee_angle",
    "dbg_sckf_iterations",
    "dbg_sckf_converged",
)
EVENT_COLUMNS = ("side", "start_index", "end_index")


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class StepDetectionConfig:
    window: float = DEFAULT_WINDOW  # s
    threshold: float = DEFAULT_THRESHOLD
    source: str = "detect"  # or "file": events.csv next to imu.csv

    def __post_init__(self):
        if not self.window > 0 or not self.threshold > 0:
            raise ValueError("step detection window and threshold must be positive")
        if self.source not in ("detect", "file"):
            raise ValueError("step source must be 'detect' or 'file'")


@dataclass(frozen=True)
class MetricConfig:
    remove_bias: bool = True
    hip_sequence: str = "ZXY"

    def __post_init__(self):
        if sorted(self.hip_sequence) != ["X", "Y", "Z"]:
            raise ValueError("hip_sequence must be a permutation of 'XYZ'")


@dataclass(frozen=True)
class RunConfig:
    """Everything an estimate needs besides the sensor data.

    ``initial_state`` is the 18-element filter state at the first frame;
    when absent the subject is assumed to stand upright over the origin.
    ``sensor_offsets`` are sensor-in-segment quaternions (pelvis, lshank,
    rshank).
    """

    filter: NoiseConfig = field(default_factory=NoiseConfig)
    body: BodyDimensions = field(default_factory=BodyDimensions.standing)
    gravity: tuple[float, float, float] = tuple(float(g) for g in GRAVITY)
    sensor_offsets: tuple[tuple[float, ...], ...] = ((1.0, 0.0, 0.0, 0.0),) * 3
    step_detection: StepDetectionConfig = field(default_factory=StepDetectionConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    p0_scale: float = 0.5
    initial_state: tuple[float, ...] | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.format_version != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {self.format_version}")
        g = tuple(float(v) for v in self.gravity)
        if len(g) != 3:
            raise ValueError("gravity needs 3 entries")
        object.__setattr__(self, "gravity", g)
        offs = tuple(tuple(float(v) for v in q) for q in self.sensor_offsets)
        if len(offs) != 3 or any(len(q) != 4 for q in offs):
            raise ValueError("sensor_offsets needs 3 quaternions of 4 entries")
        for q in offs:
            if abs(math.sqrt(sum(v * v for v in q)) - 1.0) > QUAT_TOLERANCE:
                raise ValueError("sensor_offsets must be unit quaternions")
        object.__setattr__(self, "sensor_offsets", offs)
        if not self.p0_scale > 0:
            raise ValueError("p0_scale must be positive")
        if self.initial_state is not None:
            x0 = tuple(float(v) for v in self.initial_state)
            if len(x0) != 18 or not all(math.isfinite(v) for v in x0):
                raise ValueError("initial_state needs 18 finite entries")
            object.__setattr__(self, "initial_state", x0)


def _from_mapping(cls, data, where: str):
    """Build a (nested) config dataclass, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise TrialFormatError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise TrialFormatError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _from_mapping(sub, value, f"{where}.{name}") if sub else _freeze(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise TrialFormatError(f"{where}: {exc}") from None


def _freeze(value):
    return tuple(_freeze(v) for v in value) if isinstance(value, list) else value


_NESTED = {
    (RunConfig, "filter"): NoiseConfig,
    (RunConfig, "body"): BodyDimensions,
    (RunConfig, "step_detection"): StepDetectionConfig,
    (RunConfig, "metrics"): MetricConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    return _from_mapping(RunConfig, data, "config")


def config_to_dict(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TrialFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def save_config(path: str | os.PathLike, cfg: RunConfig) -> None:
    write_json(path, config_to_dict(cfg))


# ---------------------------------------------------------------- low level


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to a temporary file in the target directory, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, data) -> None:
    atomic_write(path, json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_table(path: str | os.PathLike, columns: tuple[str, ...], data: NDArray, int_columns=()) -> None:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError(f"expected {len(columns)} columns, got shape {data.shape}")
    ints = {columns.index(c) for c in int_columns}
    buf = _io.StringIO()
    buf.write(f"#format_version={FORMAT_VERSION}\n")
    buf.write(",".join(columns) + "\n")
    for row in data:
        buf.write(",".join(str(int(v)) if j in ints else _fmt(v) for j, v in enumerate(row)) + "\n")
    atomic_write(path, buf.getvalue())


def _open_rows(path: Path, columns: tuple[str, ...], allow_extra: bool = False):
    """Yield ``(line_number, fields)`` after checking the version line and header."""
    if not path.is_file():
        raise TrialFormatError(f"{path}: file not found")
    with path.open(newline="") as fh:
        lines = enumerate(csv.reader(fh), start=1)
        try:
            _, first = next(lines)
        except StopIteration:
            raise TrialFormatError(f"{path}: empty file") from None
        tag = ",".join(first).strip()
        if not tag.startswith("#format_version="):
            raise TrialFormatError(f"{path} line 1: missing '#format_version=' line")
        if tag.split("=", 1)[1].strip() != str(FORMAT_VERSION):
            raise TrialFormatError(f"{path} line 1: unsupported format version {tag.split('=', 1)[1]!r}")
        try:
            _, header = next(lines)
        except StopIteration:
            raise TrialFormatError(f"{path}: missing header") from None
        header = tuple(h.strip() for h in header)
        got = header[: len(columns)] if allow_extra else header
        if got != columns:
            raise TrialFormatError(f"{path} line 2: unexpected header")
        for lineno, fields in lines:
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != len(header):
                raise TrialFormatError(f"{path} line {lineno}: expected {len(header)} fields, got {len(fields)}")
            yield lineno, fields


def read_table(path: str | os.PathLike, columns: tuple[str, ...], allow_extra: bool = False) -> NDArray:
    """Parse a numeric CSV; any unparsable or non-finite value is reported with its line."""
    path = Path(path)
    rows = []
    for lineno, fields in _open_rows(path, columns, allow_extra):
        try:
            row = [float(f) for f in fields]
        except ValueError:
            raise TrialFormatError(f"{path} line {lineno}: non-numeric value") from None
        if not all(math.isfinite(v) for v in row):
            bad = next(i for i, v in enumerate(row) if not math.isfinite(v))
            raise TrialFormatError(f"{path} line {lineno}: non-finite value in column {bad + 1}")
        rows.append(row[: len(columns)])
    if not rows:
        raise TrialFormatError(f"{path}: no data rows")
    return np.array(rows)


def _check_time(path: Path, t: NDArray) -> None:
    bad = np.flatnonzero(np.diff(t) <= 0)
    if len(bad):
        # data rows start on line 3
        raise TrialFormatError(f"{path} line {bad[0] + 4}: timestamps must be strictly increasing")


def _unit_quats(path: Path, q: NDArray) -> NDArray:
    """Renormalize quaternions whose norm is within tolerance of one, reject the rest."""
    norm = np.linalg.norm(q, axis=-1)
    off = np.abs(norm - 1.0)
    if np.any(off > QUAT_TOLERANCE):
        row = int(np.argwhere(off > QUAT_TOLERANCE)[0][0])
        raise TrialFormatError(f"{path} line {row + 3}: quaternion norm {norm.flat[np.argmax(off)]:.6g} is not unit")
    # leave quaternions that are already unit to rounding alone so round trips stay exact
    fix = off > 4 * np.finfo(float).eps
    return np.where(fix[..., None], q / norm[..., None], q)


# ---------------------------------------------------------------- tables


def write_imu(path: str | os.PathLike, raw: RawImuTrack) -> None:
    n = len(raw)
    block = np.concatenate([raw.accel, raw.orientation], axis=2).reshape(n, 21)
    write_table(path, IMU_COLUMNS, np.column_stack([raw.t, block]))


def read_imu(path: str | os.PathLike) -> RawImuTrack:
    path = Path(path)
    data = read_table(path, IMU_COLUMNS)
    t = data[:, 0]
    _check_time(path, t)
    block = data[:, 1:].reshape(len(t), 3, 7)
    return RawImuTrack(t, block[:, :, :3].copy(), _unit_quats(path, block[:, :, 3:]))


def _pose_block(track: PoseTrack) -> NDArray:
    n = len(track)
    return np.column_stack([track.t, track.positions.reshape(n, 21), track.orientations.reshape(n, 20)])


def write_poses(path: str | os.PathLike, track: PoseTrack) -> None:
    write_table(path, POSE_COLUMNS, _pose_block(track))


def read_poses(path: str | os.PathLike, allow_extra: bool = False) -> PoseTrack:
    path = Path(path)
    data = read_table(path, POSE_COLUMNS, allow_extra)
    t = data[:, 0]
    _check_time(path, t)
    n = len(t)
    return PoseTrack(t, data[:, 1:22].reshape(n, 7, 3), _unit_quats(path, data[:, 22:42].reshape(n, 5, 4)))


def write_estimate(path: str | os.PathLike, track: PoseTrack, diag: StepDiagnostics) -> None:
    dbg = np.column_stack(
        [
            diag.thigh_length_residual,
            diag.hinge_residual,
            diag.knee_angle,
            diag.sckf_iterations,
            diag.sckf_converged.astype(float),
        ]
    )
    write_table(
        path,
        POSE_COLUMNS + DEBUG_COLUMNS,
        np.column_stack([_pose_block(track), dbg]),
        int_columns=("dbg_sckf_iterations", "dbg_sckf_converged"),
    )


def read_estimate(path: str | os.PathLike) -> PoseTrack:
    """Estimated poses; debugging columns, if any, are ignored."""
    return read_poses(path, allow_extra=True)


def write_events(path: str | os.PathLike, events: StepEvents) -> None:
    buf = _io.StringIO()
    buf.write(f"#format_version={FORMAT_VERSION}\n")
    buf.write(",".join(EVENT_COLUMNS) + "\n")
    for side in ("left", "right"):
        for a, b in events.intervals(side):
            buf.write(f"{side},{int(a)},{int(b)}\n")
    atomic_write(path, buf.getvalue())


def read_events(path: str | os.PathLike, n_frames: int | None = None) -> StepEvents:
    path = Path(path)
    out = StepEvents()
    for lineno, (side, start, end) in _open_rows(path, EVENT_COLUMNS):
        side = side.strip()
        if side not in ("left", "right"):
            raise TrialFormatError(f"{path} line {lineno}: side must be 'left' or 'right'")
        try:
            a, b = int(start), int(end)
        except ValueError:
            raise TrialFormatError(f"{path} line {lineno}: indices must be integers") from None
        if a < 0 or b < a or (n_frames is not None and b >= n_frames):
            raise TrialFormatError(f"{path} line {lineno}: invalid interval [{a}, {b}]")
        out.intervals(side).append((a, b))
    for side in ("left", "right"):
        out.intervals(side).sort()
    return out


# ---------------------------------------------------------------- trials


@dataclass
class TrialData:
    raw: RawImuTrack
    reference: PoseTrack | None = None
    events: StepEvents | None = None
    config: RunConfig | None = None

    def __len__(self) -> int:
        return len(self.raw)


def load_trial(path: str | os.PathLike) -> TrialData:
    """Read a trial directory. Only ``imu.csv`` is mandatory."""
    root = Path(path)
    if not root.is_dir():
        raise TrialFormatError(f"{root}: not a directory")
    raw = read_imu(root / IMU_FILE)
    n = len(raw)
    trial = TrialData(raw)
    if (root / REFERENCE_FILE).exists():
        ref = read_poses(root / REFERENCE_FILE)
        if len(ref) != n:
            raise TrialFormatError(f"{root / REFERENCE_FILE}: {len(ref)} frames but imu.csv has {n}")
        if not np.array_equal(ref.t, raw.t):
            raise TrialFormatError(f"{root / REFERENCE_FILE}: timestamps differ from imu.csv")
        trial.reference = ref
    if (root / EVENTS_FILE).exists():
        trial.events = read_events(root / EVENTS_FILE, n)
    if (root / CONFIG_FILE).exists():
        trial.config = load_config(root / CONFIG_FILE)
    return trial


def save_trial(path: str | os.PathLike, trial: TrialData) -> None:
    root = Path(path)
    write_imu(root / IMU_FILE, trial.raw)
    if trial.reference is not None:
        write_poses(root / REFERENCE_FILE, trial.reference)
    if trial.events is not None:
        write_events(root / EVENTS_FILE, trial.events)
    if trial.config is not None:
        save_config(root / CONFIG_FILE, trial.config)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_metrics(path: str | os.PathLike, metrics: dict, **extra) -> None:
    write_json(path, _jsonable({"format_version": FORMAT_VERSION, **extra, "metrics": metrics}))


def read_metrics(path: str | os.PathLike) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("format_version") != FORMAT_VERSION or "metrics" not in data:
        raise TrialFormatError(f"{path}: not a metrics file of version {FORMAT_VERSION}")
    return data
