"""Lower-body kinematic model.

The filter state tracks three points (mid-pelvis and both ankles). Hips,
knees and thigh orientations are reconstructed from those points plus the
measured pelvis and shank orientations.

World frame: z up. Segment frames: x anterior, y to the subject's left,
z along the segment's long axis pointing proximally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateGeometryError
from .so3 import quat_to_rotation, rotation_to_quat

Side = Literal["left", "right"]

# state vector layout: [p_mp, p_la, p_ra, v_mp, v_la, v_ra]
STATE_DIM = 18
POS_MP = slice(0, 3)
POS_LA = slice(3, 6)
POS_RA = slice(6, 9)
VEL_MP = slice(9, 12)
VEL_LA = slice(12, 15)
VEL_RA = slice(15, 18)

JOINTS = ("mp", "lh", "rh", "lk", "rk", "la", "ra")
SEGMENTS = ("pelvis", "lthigh", "rthigh", "lshank", "rshank")


def ankle_slice(side: Side) -> slice:
    return POS_LA if side == "left" else POS_RA


@dataclass(frozen=True)
class BodyDimensions:
    """Segment lengths (joint to joint) and reference heights, all in meters.

    ``z_pelvis_standing`` is the pelvis height the pseudo-measurement pulls
    towards; ``z_floor`` is the ankle height while the foot is on the floor.
    """

    d_pelvis: float = 0.24
    d_lthigh: float = 0.45
    d_rthigh: float = 0.45
    d_lshank: float = 0.42
    d_rshank: float = 0.42
    z_pelvis_standing: float = 0.95
    z_floor: float = 0.08

    def __post_init__(self):
        for name in ("d_pelvis", "d_lthigh", "d_rthigh", "d_lshank", "d_rshank"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.z_pelvis_standing > self.z_floor:
            raise ValueError("z_pelvis_standing must be above z_floor")

    def thigh(self, side: Side) -> float:
        return self.d_lthigh if side == "left" else self.d_rthigh

    def shank(self, side: Side) -> float:
        return self.d_lshank if side == "left" else self.d_rshank

    @classmethod
    def standing(cls, d_pelvis=0.24, d_thigh=0.45, d_shank=0.42, z_floor=0.08) -> "BodyDimensions":
        """Symmetric body whose standing pelvis height is a fully extended leg above the floor."""
        return cls(d_pelvis, d_thigh, d_thigh, d_shank, d_shank, z_floor + d_thigh + d_shank, z_floor)


@dataclass(frozen=True)
class SegmentOrientations:
    """World-from-segment unit quaternions. Thighs are filled in by post-processing."""

    pelvis: NDArray
    lshank: NDArray
    rshank: NDArray
    lthigh: NDArray | None = None
    rthigh: NDArray | None = None

    def shank(self, side: Side) -> NDArray:
        return self.lshank if side == "left" else self.rshank


@dataclass(frozen=True)
class PoseSnapshot:
    """Joint positions (rows ordered as ``JOINTS``) and segment quaternions
    (rows ordered as ``SEGMENTS``) at one instant."""

    timestamp: float
    positions: NDArray = field(repr=False)
    orientations: NDArray = field(repr=False)

    def joint(self, name: str) -> NDArray:
        return self.positions[JOINTS.index(name)]

    def segment(self, name: str) -> NDArray:
        return self.orientations[SEGMENTS.index(name)]


@dataclass
class PoseTrack:
    """A trial of poses stored as stacked arrays: ``t (N,)``, ``positions (N, 7, 3)``,
    ``orientations (N, 5, 4)``."""

    t: NDArray
    positions: NDArray
    orientations: NDArray

    def __len__(self) -> int:
        return len(self.t)

    def joint(self, name: str) -> NDArray:
        return self.positions[:, JOINTS.index(name)]

    def segment(self, name: str) -> NDArray:
        return self.orientations[:, SEGMENTS.index(name)]

    def __getitem__(self, k: int) -> PoseSnapshot:
        return PoseSnapshot(float(self.t[k]), self.positions[k], self.orientations[k])

    @classmethod
    def from_snapshots(cls, poses) -> "PoseTrack":
        poses = list(poses)
        return cls(
            np.array([p.timestamp for p in poses]),
            np.stack([p.positions for p in poses]),
            np.stack([p.orientations for p in poses]),
        )


def hip_position(mid_pelvis: ArrayLike, pelvis_q: ArrayLike, d_pelvis: float, side: Side) -> NDArray:
    r_y = quat_to_rotation(pelvis_q)[:, 1]
    sign = 1.0 if side == "left" else -1.0
    return np.asarray(mid_pelvis, dtype=float) + sign * 0.5 * d_pelvis * r_y


def knee_position(ankle: ArrayLike, shank_q: ArrayLike, d_shank: float) -> NDArray:
    r_z = quat_to_rotation(shank_q)[:, 2]
    return np.asarray(ankle, dtype=float) + d_shank * r_z


def thigh_vector(state, pelvis_q: ArrayLike, shank_q: ArrayLike, dims: BodyDimensions, side: Side) -> NDArray:
    """Hip minus knee for one leg. ``state`` is a FilterState or a raw 18-vector."""
    x = np.asarray(getattr(state, "x", state), dtype=float)
    hip = hip_position(x[POS_MP], pelvis_q, dims.d_pelvis, side)
    knee = knee_position(x[ankle_slice(side)], shank_q, dims.shank(side))
    return hip - knee


def wrap_knee(alpha: ArrayLike) -> NDArray:
    """Map angles into ``[-pi/2, 3pi/2)``."""
    return np.mod(np.asarray(alpha) + 0.5 * np.pi, 2.0 * np.pi) - 0.5 * np.pi


def knee_angle(thigh_dir: ArrayLike, shank_R: ArrayLike) -> float:
    """Knee flexion from the thigh direction projected on the shank x-z plane.

    Zero with the leg straight, positive in flexion, in ``[-pi/2, 3pi/2)``.
    """
    thigh_dir = np.asarray(thigh_dir, dtype=float)
    shank_R = np.asarray(shank_R, dtype=float)
    num = -thigh_dir @ shank_R[:, 2]
    den = -thigh_dir @ shank_R[:, 0]
    if abs(num) < 1e-12 and abs(den) < 1e-12:
        raise DegenerateGeometryError("thigh direction is perpendicular to the shank sagittal plane")
    return float(wrap_knee(np.arctan2(num, den) + 0.5 * np.pi))


def knee_angles(thigh_dirs: NDArray, shank_Rs: NDArray) -> NDArray:
    """Vectorized ``knee_angle`` over stacks ``(N, 3)`` and ``(N, 3, 3)``."""
    num = -np.einsum("ni,ni->n", thigh_dirs, shank_Rs[:, :, 2])
    den = -np.einsum("ni,ni->n", thigh_dirs, shank_Rs[:, :, 0])
    if np.any((np.abs(num) < 1e-12) & (np.abs(den) < 1e-12)):
        raise DegenerateGeometryError("thigh direction is perpendicular to the shank sagittal plane")
    return wrap_knee(np.arctan2(num, den) + 0.5 * np.pi)


def thigh_orientation(thigh_dir: ArrayLike, shank_R: ArrayLike) -> NDArray:
    """Thigh rotation sharing the shank's hinge (y) axis.

    The thigh direction is orthogonalized against the hinge axis first, so
    the result is a proper rotation even when the hinge constraint holds
    only approximately.
    """
    shank_R = np.asarray(shank_R, dtype=float)
    r_y = shank_R[:, 1]
    t = np.asarray(thigh_dir, dtype=float)
    t = t / np.linalg.norm(t)
    if np.linalg.norm(np.cross(r_y, t)) < 1e-6:
        raise DegenerateGeometryError("thigh direction is parallel to the knee hinge axis")
    z = t - (t @ r_y) * r_y
    z /= np.linalg.norm(z)
    x = np.cross(r_y, z)
    return np.column_stack([x, r_y, z])


def thigh_orientations(thigh_dirs: NDArray, shank_Rs: NDArray) -> NDArray:
    """Vectorized ``thigh_orientation`` over ``(N, 3)`` directions and ``(N, 3, 3)`` shanks."""
    r_y = shank_Rs[:, :, 1]
    t = thigh_dirs / np.linalg.norm(thigh_dirs, axis=1, keepdims=True)
    if np.any(np.linalg.norm(np.cross(r_y, t), axis=1) < 1e-6):
        raise DegenerateGeometryError("thigh direction is parallel to the knee hinge axis")
    z = t - np.einsum("ni,ni->n", t, r_y)[:, None] * r_y
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return np.stack([np.cross(r_y, z), r_y, z], axis=-1)


def assemble_track(states: ArrayLike, orientations: ArrayLike, dims: BodyDimensions, t: ArrayLike) -> PoseTrack:
    """``assemble_pose`` over a whole trial.

    ``states`` is ``(N, 18)`` and ``orientations`` holds the measured pelvis,
    left shank and right shank quaternions as ``(N, 3, 4)``.
    """
    X = np.asarray(states, dtype=float)
    Q = np.asarray(orientations, dtype=float)
    R = quat_to_rotation(Q)
    mp, la, ra = X[:, POS_MP], X[:, POS_LA], X[:, POS_RA]
    half = 0.5 * dims.d_pelvis * R[:, 0, :, 1]
    lh, rh = mp + half, mp - half
    lk = la + dims.d_lshank * R[:, 1, :, 2]
    rk = ra + dims.d_rshank * R[:, 2, :, 2]
    lt = rotation_to_quat(thigh_orientations(lh - lk, R[:, 1]))
    rt = rotation_to_quat(thigh_orientations(rh - rk, R[:, 2]))
    positions = np.stack([mp, lh, rh, lk, rk, la, ra], axis=1)
    oris = np.stack([Q[:, 0], lt, rt, Q[:, 1], Q[:, 2]], axis=1)
    return PoseTrack(np.asarray(t, dtype=float).copy(), positions, oris)


def assemble_pose(state, measured: SegmentOrientations, dims: BodyDimensions, timestamp: float = 0.0) -> PoseSnapshot:
    x = np.asarray(getattr(state, "x", state), dtype=float)
    mp = x[POS_MP]
    lh = hip_position(mp, measured.pelvis, dims.d_pelvis, "left")
    rh = hip_position(mp, measured.pelvis, dims.d_pelvis, "right")
    lk = knee_position(x[POS_LA], measured.lshank, dims.d_lshank)
    rk = knee_position(x[POS_RA], measured.rshank, dims.d_rshank)
    lt = rotation_to_quat(thigh_orientation(lh - lk, quat_to_rotation(measured.lshank)))
    rt = rotation_to_quat(thigh_orientation(rh - rk, quat_to_rotation(measured.rshank)))
    positions = np.stack([mp, lh, rh, lk, rk, x[POS_LA], x[POS_RA]])
    orientations = np.stack([measured.pelvis, lt, rt, measured.lshank, measured.rshank])
    return PoseSnapshot(float(timestamp), positions, orientations)
