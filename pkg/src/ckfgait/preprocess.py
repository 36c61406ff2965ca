"""Turn raw sensor streams into filter inputs.

Three sensors are expected, in the order of ``SENSORS``: mid-pelvis, left
shank (at the ankle) and right shank (at the ankle). Orientations arrive
already estimated upstream as world-from-sensor quaternions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray

from .body import SegmentOrientations
from .so3 import IDENTITY, quat_inverse, quat_multiply, rotate_vector

SENSORS = ("pelvis", "lshank", "rshank")
GRAVITY = np.array([0.0, 0.0, 9.81])
DEFAULT_WINDOW = 0.25  # s
DEFAULT_THRESHOLD = 1.0  # (m/s^2)^2, summed over axes


@dataclass
class RawImuTrack:
    """Raw samples for the three sensors.

    ``accel`` is ``(N, 3, 3)`` specific force in each sensor frame,
    ``orientation`` is ``(N, 3, 4)`` world-from-sensor quaternions.
    ``gyro`` is carried along untouched when present.
    """

    t: NDArray
    accel: NDArray
    orientation: NDArray
    gyro: NDArray | None = None

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class ImuFrame:
    """Filter input for one time step."""

    timestamp: float
    accel_world: NDArray  # (3, 3): inertial acceleration of mp, la, ra
    orientation: NDArray  # (3, 4): pelvis, lshank, rshank segment quaternions
    contact_left: bool = False
    contact_right: bool = False

    @property
    def u(self) -> NDArray:
        return self.accel_world.reshape(9)

    def segments(self) -> SegmentOrientations:
        return SegmentOrientations(self.orientation[0], self.orientation[1], self.orientation[2])


@dataclass
class ImuTrack:
    """A series of ``ImuFrame`` stored as arrays."""

    t: NDArray
    accel_world: NDArray  # (N, 3, 3)
    orientation: NDArray  # (N, 3, 4)
    contact: NDArray  # (N, 2) bool, columns left/right

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, k: int) -> ImuFrame:
        return ImuFrame(
            float(self.t[k]),
            self.accel_world[k],
            self.orientation[k],
            bool(self.contact[k, 0]),
            bool(self.contact[k, 1]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def with_events(self, events: "StepEvents") -> "ImuTrack":
        contact = np.column_stack([events.mask("left", len(self)), events.mask("right", len(self))])
        return ImuTrack(self.t, self.accel_world, self.orientation, contact)


@dataclass
class StepEvents:
    """Inclusive ``(start, end)`` sample-index intervals of floor contact per foot."""

    left: list[tuple[int, int]] = field(default_factory=list)
    right: list[tuple[int, int]] = field(default_factory=list)

    def intervals(self, side: str) -> list[tuple[int, int]]:
        return self.left if side == "left" else self.right

    def mask(self, side: str, n: int) -> NDArray:
        m = np.zeros(n, dtype=bool)
        for a, b in self.intervals(side):
            m[max(a, 0) : min(b, n - 1) + 1] = True
        return m

    def starts(self, side: str) -> list[int]:
        return [a for a, _ in self.intervals(side)]

    @staticmethod
    def runs(mask: ArrayLike) -> list[tuple[int, int]]:
        """Contiguous ``True`` runs of a boolean mask as inclusive intervals."""
        m = np.asarray(mask, dtype=bool).astype(np.int8)
        edges = np.diff(np.concatenate([[0], m, [0]]))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1) - 1
        return [(int(a), int(b)) for a, b in zip(starts, ends)]

    @classmethod
    def from_masks(cls, left: ArrayLike, right: ArrayLike) -> "StepEvents":
        return cls(cls.runs(left), cls.runs(right))


def calibrate_offset(reference_body_q: ArrayLike, sensor_q_at_pose: ArrayLike) -> NDArray:
    """Constant sensor-in-segment rotation from one still calibration instant."""
    return quat_multiply(quat_inverse(reference_body_q), sensor_q_at_pose)


def segment_orientation(sensor_q: ArrayLike, offset_q: ArrayLike) -> NDArray:
    """World-from-segment orientation given the calibrated sensor-in-segment offset."""
    return quat_multiply(sensor_q, quat_inverse(offset_q))


def world_inertial_accel(sensor_q: ArrayLike, raw_accel: ArrayLike, gravity: ArrayLike = GRAVITY) -> NDArray:
    """Express specific force in the world frame and remove gravity."""
    return rotate_vector(sensor_q, raw_accel) - np.asarray(gravity, dtype=float)


def window_variance(series: ArrayLike, window: int) -> NDArray:
    """Summed per-axis population variance of every full window; entry ``i`` covers samples ``i .. i+window-1``."""
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return sliding_window_view(x, window, axis=0).var(axis=-1).sum(axis=-1)


def detect_steps(
    accel_world: dict[str, ArrayLike] | ArrayLike,
    sample_rate: float,
    window: float = DEFAULT_WINDOW,
    threshold: float = DEFAULT_THRESHOLD,
) -> StepEvents | list[tuple[int, int]]:
    """Flag floor contact on every sample of a window whose acceleration variance is below ``threshold``.

    Pass a mapping with ``"left"`` and ``"right"`` ankle series to get
    ``StepEvents``; pass a single ``(N, 3)`` series to get its intervals.
    """
    if isinstance(accel_world, dict):
        return StepEvents(
            detect_steps(accel_world["left"], sample_rate, window, threshold),
            detect_steps(accel_world["right"], sample_rate, window, threshold),
        )
    x = np.asarray(accel_world, dtype=float)
    w = max(int(round(window * sample_rate)), 2)
    n = len(x)
    if n < w:
        return []
    quiet = np.concatenate([[0], np.cumsum(window_variance(x, w) < threshold)])
    # sample j lies in the windows starting at j-w+1 .. j
    starts = np.arange(n)
    lo = np.clip(starts - w + 1, 0, n - w + 1)
    hi = np.clip(starts + 1, 0, n - w + 1)
    return StepEvents.runs(quiet[hi] > quiet[lo])


def yaw_cost(ref_accel: ArrayLike, imu_accel: ArrayLike, yaw: float) -> float:
    """x/y RMSE between a reference series and an IMU series rotated by ``yaw`` about z."""
    ref = np.asarray(ref_accel, dtype=float)
    rotated = rotate_vector(np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)]), np.asarray(imu_accel, dtype=float))
    return float(np.sqrt(np.mean((ref[:, :2] - rotated[:, :2]) ** 2)))


def yaw_offset_search(ref_accel: ArrayLike, imu_accel: ArrayLike, grid_step: float = np.deg2rad(0.1)) -> float:
    """Grid search over ``[-pi, pi)`` for the yaw to apply to the IMU series.

    The returned angle is the rotation that, applied to the IMU data, best
    matches the reference; an IMU series that was rotated by ``+a`` yields
    ``-a``.
    """
    ref = np.asarray(ref_accel, dtype=float)
    imu = np.asarray(imu_accel, dtype=float)
    if ref.shape != imu.shape:
        raise ValueError("reference and IMU series must have the same shape")
    if len(ref) == 0:
        raise ValueError("empty series")
    grid = -np.pi + grid_step * np.arange(int(np.ceil(2 * np.pi / grid_step)))
    # mean squared xy error expands to const - (cos(psi) A + sin(psi) B) terms
    rx, ry, ix, iy = ref[:, 0], ref[:, 1], imu[:, 0], imu[:, 1]
    const = np.sum(rx**2 + ry**2 + ix**2 + iy**2)
    a = np.sum(rx * ix + ry * iy)
    b = np.sum(ry * ix - rx * iy)
    cost = const - 2.0 * (np.cos(grid) * a + np.sin(grid) * b)
    return float(grid[int(np.argmin(cost))])


def apply_yaw(q: ArrayLike, yaw: float) -> NDArray:
    """Rotate world-from-segment orientations by ``yaw`` about the world z-axis."""
    return quat_multiply(np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)]), q)


def preprocess(
    raw: RawImuTrack,
    offsets: ArrayLike | None = None,
    gravity: ArrayLike = GRAVITY,
    events: StepEvents | None = None,
    window: float = DEFAULT_WINDOW,
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[ImuTrack, StepEvents]:
    """Segment orientations, world inertial accelerations and contact flags for a trial.

    ``offsets`` holds one sensor-in-segment quaternion per sensor (identity
    when omitted). Step events are detected on the ankle accelerations
    unless ``events`` is given.
    """
    if offsets is None:
        offsets = np.tile(IDENTITY, (3, 1))
    offsets = np.asarray(offsets, dtype=float)
    accel = world_inertial_accel(raw.orientation, raw.accel, gravity)
    ori = segment_orientation(raw.orientation, offsets[None, :, :])
    if events is None:
        dt = np.median(np.diff(raw.t)) if len(raw) > 1 else 0.01
        events = detect_steps({"left": accel[:, 1], "right": accel[:, 2]}, 1.0 / dt, window, threshold)
    contact = np.column_stack([events.mask("left", len(raw)), events.mask("right", len(raw))])
    return ImuTrack(np.asarray(raw.t, dtype=float), accel, ori, contact), events
