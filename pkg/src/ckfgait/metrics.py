"""Accuracy metrics comparing an estimated trial against a reference trial."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from .body import JOINTS, PoseTrack, knee_angles
from .errors import UndefinedMetricError
from .preprocess import StepEvents
from .so3 import quat_angle, quat_from_rotvec, quat_inverse, quat_multiply, quat_to_rotation

# body points scored by the position error (the root is excluded)
SCORED_JOINTS = ("lh", "rh", "lk", "rk", "la", "ra")
THIGHS = ("lthigh", "rthigh")
ANGLE_NAMES = tuple(
    f"{joint}_{side}_{plane}"
    for side in ("left", "right")
    for joint, planes in (("knee", ("sagittal",)), ("hip", ("sagittal", "frontal", "transverse")))
    for plane in planes
)


@dataclass
class TrialComparison:
    """Frame-aligned estimated and reference trials.

    Positions are root-anchored: every estimated frame is translated so its
    mid-pelvis coincides with the reference mid-pelvis.
    """

    estimated: PoseTrack
    reference: PoseTrack

    def __post_init__(self):
        if len(self.estimated) != len(self.reference):
            raise ValueError(
                f"trial lengths differ: {len(self.estimated)} estimated vs {len(self.reference)} reference frames"
            )
        if len(self.reference) == 0:
            raise ValueError("empty trials")

    def anchored_positions(self) -> NDArray:
        est = self.estimated.positions
        shift = self.reference.positions[:, :1] - est[:, :1]
        return est + shift


def _rms(values: NDArray) -> float:
    return float(np.sqrt(np.mean(np.square(values))))


def position_errors(cmp: TrialComparison) -> NDArray:
    """Per-frame mean Euclidean error over the six scored joints."""
    idx = [JOINTS.index(j) for j in SCORED_JOINTS]
    diff = cmp.anchored_positions()[:, idx] - cmp.reference.positions[:, idx]
    return np.linalg.norm(diff, axis=2).mean(axis=1)


def position_rmse(cmp: TrialComparison) -> float:
    """Root-anchored position error, RMS over frames."""
    return _rms(position_errors(cmp))


def _thigh_quats(track: PoseTrack) -> NDArray:
    return np.stack([track.segment(s) for s in THIGHS], axis=1)  # (N, 2, 4)


def _offset_angles(q_ref: NDArray, q_est: NDArray, bias: NDArray | None = None) -> NDArray:
    """``|log(q_ref ⊗ (q_est ⊗ bias)⁻¹)|`` elementwise."""
    if bias is not None:
        q_est = quat_multiply(q_est, bias)
    return quat_angle(quat_multiply(q_ref, quat_inverse(q_est)))


def _chordal_mean(q: NDArray) -> NDArray:
    """Quaternion maximizing the summed squared inner product with ``q`` (sign-invariant)."""
    M = np.einsum("ni,nj->ij", q, q)
    w, V = np.linalg.eigh(M)
    mean = V[:, -1]
    return mean if mean[0] >= 0 else -mean


def orientation_errors(cmp: TrialComparison, bias: NDArray | None = None) -> NDArray:
    """Per-frame mean thigh orientation error (radians); ``bias`` is ``(2, 4)`` body-frame offsets."""
    ref, est = _thigh_quats(cmp.reference), _thigh_quats(cmp.estimated)
    if bias is None:
        return _offset_angles(ref, est).mean(axis=1)
    return _offset_angles(ref, est, np.asarray(bias)[None, :, :]).mean(axis=1)


def thigh_bias(cmp: TrialComparison) -> NDArray:
    """Constant per-thigh body-frame rotation that best aligns estimate and reference.

    Seeds a local search from the chordal mean of ``q_est⁻¹ ⊗ q_ref`` per side
    and from the identity, and keeps whichever candidate (including the
    identity itself) gives the lowest RMS error.
    """
    ref, est = _thigh_quats(cmp.reference), _thigh_quats(cmp.estimated)
    rel = quat_multiply(quat_inverse(est), ref)
    seeds = [np.stack([_chordal_mean(rel[:, j]) for j in range(2)]), np.tile([1.0, 0.0, 0.0, 0.0], (2, 1))]

    def cost(rv):
        b = quat_from_rotvec(rv.reshape(2, 3))
        return float(np.mean(_offset_angles(ref, est, b[None]).mean(axis=1) ** 2))

    best_b, best_c = seeds[1], cost(np.zeros(6))
    for seed in seeds:
        rv0 = Rotation.from_quat(seed[:, [1, 2, 3, 0]]).as_rotvec().ravel()
        res = minimize(cost, rv0, method="BFGS", options={"gtol": 1e-12})
        for rv in (rv0, res.x):
            c = cost(rv)
            if c < best_c:
                best_b, best_c = quat_from_rotvec(rv.reshape(2, 3)), c
    return best_b


def orientation_rmse(cmp: TrialComparison, remove_bias: bool = False) -> float:
    """Mean thigh orientation error (radians), RMS over frames.

    With ``remove_bias`` a constant body-frame offset per thigh is removed
    first (see ``thigh_bias``), so the result never exceeds the biased value.
    """
    if not remove_bias:
        return _rms(orientation_errors(cmp))
    return min(_rms(orientation_errors(cmp, thigh_bias(cmp))), _rms(orientation_errors(cmp)))


def joint_angle_series(track: PoseTrack, hip_sequence: str = "ZXY", flexion_sign: float = -1.0) -> dict[str, NDArray]:
    """Knee sagittal angles and hip angles in radians, keyed by ``ANGLE_NAMES``.

    Hip angles come from the intrinsic ``hip_sequence`` decomposition of the
    pelvis-to-thigh rotation; the Y component is sagittal, X frontal and Z
    transverse. Rotation about +Y moves the knee backwards, so the default
    ``flexion_sign`` of -1 makes hip flexion positive, matching the knee.
    """
    if sorted(hip_sequence) != ["X", "Y", "Z"]:
        raise ValueError("hip_sequence must be an intrinsic permutation of XYZ, e.g. 'ZXY'")
    out: dict[str, NDArray] = {}
    R_pelvis = quat_to_rotation(track.segment("pelvis"))
    for side in ("left", "right"):
        tag = side[0]
        R_thigh = quat_to_rotation(track.segment(f"{tag}thigh"))
        R_shank = quat_to_rotation(track.segment(f"{tag}shank"))
        tau = track.joint(f"{tag}h") - track.joint(f"{tag}k")
        norm = np.linalg.norm(tau, axis=1)
        if np.any(norm < 1e-9):
            raise ValueError(f"degenerate {side} thigh: hip and knee coincide")
        out[f"knee_{side}_sagittal"] = knee_angles(tau / norm[:, None], R_shank)
        rel = np.einsum("nji,njk->nik", R_pelvis, R_thigh)
        eul = Rotation.from_matrix(rel).as_euler(hip_sequence)
        comp = {axis: eul[:, i] for i, axis in enumerate(hip_sequence)}
        out[f"hip_{side}_sagittal"] = flexion_sign * comp["Y"]
        out[f"hip_{side}_frontal"] = comp["X"]
        out[f"hip_{side}_transverse"] = comp["Z"]
    return out


def correlation_coefficient(a: ArrayLike, b: ArrayLike) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be one-dimensional and of equal length")
    if len(a) < 2:
        raise ValueError("need at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise UndefinedMetricError("correlation is undefined for a constant series")
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def travelled_distance(xy: NDArray, indices: ArrayLike) -> float:
    """Sum of XY distances between consecutive event samples."""
    idx = np.asarray(indices, dtype=int)
    if len(idx) < 2:
        return 0.0
    pts = np.asarray(xy)[idx, :2]
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def ttd_deviation(estimated: PoseTrack, reference: PoseTrack, events: StepEvents) -> dict[str, float]:
    """Relative total-travelled-distance error per tracked point.

    Distances are summed between consecutive stance onsets: left onsets for
    the pelvis and left ankle, right onsets for the right ankle.
    """
    n = len(reference)
    if len(estimated) != n:
        raise ValueError("trial lengths differ")
    out = {}
    for point, side in (("mp", "left"), ("la", "left"), ("ra", "right")):
        idx = events.starts(side)
        if any(i < 0 or i >= n for i in idx):
            raise ValueError(f"{side} step event outside the trial")
        ref = travelled_distance(reference.joint(point), idx)
        if ref == 0.0:
            raise UndefinedMetricError(f"reference travelled distance of {point} is zero")
        out[point] = abs(travelled_distance(estimated.joint(point), idx) - ref) / ref
    return out


@dataclass
class AngleScore:
    rmse_biased: float
    rmse_unbiased: float
    cc: float | None  # None when either series is constant


@dataclass
class MetricReport:
    e_pos: float
    e_ori_biased: float
    e_ori_unbiased: float | None  # None when bias removal is switched off
    joint_angles: dict[str, AngleScore] = field(default_factory=dict)
    ttd_deviation: dict[str, float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _angle_score(est: NDArray, ref: NDArray) -> AngleScore:
    diff = est - ref
    try:
        cc = correlation_coefficient(est, ref) if len(est) > 1 else None
    except UndefinedMetricError:
        cc = None
    return AngleScore(_rms(diff), _rms(diff - diff.mean()), cc)


def evaluate(
    estimated: PoseTrack,
    reference: PoseTrack,
    events: StepEvents | None = None,
    hip_sequence: str = "ZXY",
    remove_bias: bool = True,
) -> MetricReport:
    """All metrics for one trial. TTD deviation needs step ``events``."""
    cmp = TrialComparison(estimated, reference)
    est_angles = joint_angle_series(estimated, hip_sequence)
    ref_angles = joint_angle_series(reference, hip_sequence)
    report = MetricReport(
        e_pos=position_rmse(cmp),
        e_ori_biased=orientation_rmse(cmp, False),
        e_ori_unbiased=orientation_rmse(cmp, True) if remove_bias else None,
        joint_angles={k: _angle_score(est_angles[k], ref_angles[k]) for k in ANGLE_NAMES},
    )
    if events is not None:
        try:
            report.ttd_deviation = ttd_deviation(estimated, reference, events)
        except UndefinedMetricError:
            report.ttd_deviation = None
    return report


def aggregate(reports: list[MetricReport]) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation of the scalar metrics across trials."""
    if not reports:
        raise ValueError("no reports to aggregate")
    columns: dict[str, list[float]] = {}

    def add(key, value):
        if value is not None:
            columns.setdefault(key, []).append(float(value))

    for r in reports:
        add("e_pos", r.e_pos)
        add("e_ori_biased", r.e_ori_biased)
        add("e_ori_unbiased", r.e_ori_unbiased)
        for name, s in r.joint_angles.items():
            add(f"{name}.rmse_biased", s.rmse_biased)
            add(f"{name}.rmse_unbiased", s.rmse_unbiased)
            add(f"{name}.cc", s.cc)
        for point, v in (r.ttd_deviation or {}).items():
            add(f"ttd.{point}", v)
    return {
        k: {"mean": float(np.mean(v)), "sd": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0, "n": len(v)}
        for k, v in columns.items()
    }
