"""Synthetic walking trials that satisfy the lower-body model exactly.

Pelvis and ankle trajectories are built first from smooth analytic pieces:

* the pelvis travels at constant speed along a heading profile (straight,
  figure-eight or zigzag) and bobs vertically at step frequency;
* each ankle rests on a footprint during stance and follows a minimum-jerk
  transfer with a polynomial lift during swing.

Knees come from closed-form two-link inverse kinematics in the plane that
contains the hip-ankle line and the walking direction, so thigh length and
the hinge-knee condition hold to machine precision. Accelerations of the
three tracked points are exact derivatives of the analytic trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq

from .body import JOINTS, BodyDimensions, PoseTrack
from .errors import InfeasibleGaitError
from .preprocess import GRAVITY, ImuTrack, RawImuTrack, StepEvents
from .so3 import quat_from_rotvec, quat_inverse, quat_multiply, rotate_vector, rotation_to_quat, yaw_quat

PATHS = ("straight", "figure-eight", "zigzag")
# first zero of J0: a heading swing of this amplitude closes the figure-eight
_J0_ZERO = 2.404825557695773
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)
# exponent of the (1 - phi) factor in the swing lift; 6 peaks a third of the way into swing
_LIFT_SHAPE = 6


@dataclass(frozen=True)
class GaitParams:
    """Walking parameters. ``cadence`` in steps/s, lengths in meters, angles in radians.

    ``cadence == 0`` or ``stride_length == 0`` produces a still N-pose trial.
    """

    cadence: float = 1.8
    stride_length: float = 1.0
    stance_fraction: float = 0.6
    peak_knee_flexion: float = math.radians(60.0)
    path: str = "straight"
    duration: float = 30.0
    sample_rate: float = 100.0
    dims: BodyDimensions = field(default_factory=BodyDimensions.standing)
    rng_seed: int = 0
    stance_knee_flexion: float = math.radians(20.0)
    # path length of one figure-eight, or of one zigzag leg
    turn_length: float = 24.0
    zigzag_amplitude: float = math.radians(40.0)

    def __post_init__(self):
        if not 0.0 < self.stance_fraction < 1.0:
            raise ValueError("stance_fraction must lie in (0, 1)")
        if not 0.0 < self.peak_knee_flexion < math.pi:
            raise ValueError("peak_knee_flexion must lie in (0, pi)")
        if self.path not in PATHS:
            raise ValueError(f"path must be one of {PATHS}")
        if self.cadence < 0 or self.stride_length < 0:
            raise ValueError("cadence and stride_length must be non-negative")
        if not self.duration > 0 or not self.sample_rate > 0:
            raise ValueError("duration and sample_rate must be positive")

    @property
    def static(self) -> bool:
        return self.cadence == 0 or self.stride_length == 0


@dataclass
class GroundTruthTrial:
    params: GaitParams
    dims: BodyDimensions  # z_pelvis_standing set to the pelvis height at the first frame
    poses: PoseTrack
    imu: ImuTrack  # noiseless, contact flags from the true stance phases
    events: StepEvents
    velocities: NDArray  # (N, 3, 3) of mp, la, ra
    travelled: dict[str, float]

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def x0(self) -> NDArray:
        """Filter state at the first frame: positions then velocities of mp, la, ra."""
        pos = self.poses.positions[0, [JOINTS.index("mp"), JOINTS.index("la"), JOINTS.index("ra")]]
        return np.concatenate([pos.reshape(9), self.velocities[0].reshape(9)])


class _Heading:
    """Heading profile of the pelvis and the xy path it traces at constant speed."""

    def __init__(self, kind: str, speed: float, theta0: float, params: GaitParams, t_lo: float, t_hi: float):
        self.kind = kind
        self.speed = speed
        self.theta0 = theta0
        if kind == "figure-eight":
            self.amp = _J0_ZERO
            self.omega = 2 * math.pi * speed / params.turn_length
        elif kind == "zigzag":
            self.amp = params.zigzag_amplitude
            self.omega = math.pi * speed / params.turn_length
        else:
            self.amp = 0.0
            self.omega = 0.0
        self.t_lo = t_lo
        self.h = 0.05
        n = int(math.ceil((t_hi - t_lo) / self.h)) + 2
        self.knots = t_lo + self.h * np.arange(n)
        steps = self._integrate(self.knots[:-1], self.knots[1:])
        self.knot_pos = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "figure-eight":
            return self.theta0 + self.amp * (1.0 - np.cos(self.omega * t))
        if self.kind == "zigzag":
            return self.theta0 + self.amp * np.sin(self.omega * t)
        return np.full_like(t, self.theta0)

    def theta_dot(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "figure-eight":
            return self.amp * self.omega * np.sin(self.omega * t)
        if self.kind == "zigzag":
            return self.amp * self.omega * np.cos(self.omega * t)
        return np.zeros_like(t)

    def _integrate(self, a, b):
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        th = self.theta(nodes)
        w = half[:, None] * _GL_WEIGHTS[None, :] * self.speed
        return np.column_stack([(w * np.cos(th)).sum(axis=1), (w * np.sin(th)).sum(axis=1)])

    def position(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "straight":
            d = self.speed * (t - self.t_lo)
            return np.column_stack([d * math.cos(self.theta0), d * math.sin(self.theta0)])
        j = np.clip(np.floor((t - self.t_lo) / self.h).astype(int), 0, len(self.knots) - 2)
        return self.knot_pos[j] + self._integrate(self.knots[j], t)

    def velocity(self, t):
        th = self.theta(t)
        return self.speed * np.column_stack([np.cos(th), np.sin(th)])

    def acceleration(self, t):
        th = self.theta(t)
        return self.speed * self.theta_dot(t)[:, None] * np.column_stack([-np.sin(th), np.cos(th)])


def _min_jerk(phi):
    s = phi**3 * (10 - 15 * phi + 6 * phi**2)
    ds = 30 * phi**2 * (1 - phi) ** 2
    dds = 60 * phi - 180 * phi**2 + 120 * phi**3
    return s, ds, dds


def _lift(phi, m=3):
    """Normalized ``phi^3 (1-phi)^m`` bump; larger ``m`` peaks earlier (at ``3 / (3 + m)``)."""
    peak = 3.0 / (3.0 + m)
    c = 1.0 / (peak**3 * (1 - peak) ** m)
    q = 1 - phi
    b = c * phi**3 * q**m
    db = c * (3 * phi**2 * q**m - m * phi**3 * q ** (m - 1))
    ddb = c * (6 * phi * q**m - 6 * m * phi**2 * q ** (m - 1) + m * (m - 1) * phi**3 * q ** (m - 2))
    return b, db, ddb


def leg_ik(hip: NDArray, ankle: NDArray, forward: NDArray, d_thigh: float, d_shank: float):
    """Place the knee for stacks of hip/ankle points.

    The knee lies in the plane spanned by the hip-ankle line and
    ``forward`` and bends so that it sits in front of that line. Returns
    knee positions and shank/thigh rotation matrices, each leading axis
    ``N``.
    """
    d = hip - ankle
    rho = np.linalg.norm(d, axis=1)
    if np.any(rho >= d_thigh + d_shank + 1e-12) or np.any(rho <= abs(d_thigh - d_shank)):
        raise InfeasibleGaitError("hip-ankle distance outside the reachable range of the leg")
    u = d / rho[:, None]
    y = np.cross(d, forward)
    ny = np.linalg.norm(y, axis=1)
    if np.any(ny < 1e-9):
        raise InfeasibleGaitError("leg is parallel to the walking direction")
    y = y / ny[:, None]
    w = np.cross(y, u)
    cos_b = np.clip((rho**2 + d_shank**2 - d_thigh**2) / (2 * rho * d_shank), -1.0, 1.0)
    sin_b = np.sqrt(1.0 - cos_b**2)
    knee = ankle + d_shank * (cos_b[:, None] * u + sin_b[:, None] * w)
    zs = (knee - ankle) / d_shank
    zs /= np.linalg.norm(zs, axis=1, keepdims=True)
    zt = (hip - knee) / d_thigh
    zt /= np.linalg.norm(zt, axis=1, keepdims=True)
    shank_R = np.stack([np.cross(y, zs), y, zs], axis=-1)
    thigh_R = np.stack([np.cross(y, zt), y, zt], axis=-1)
    return knee, shank_R, thigh_R


def knee_flexion_for_distance(rho, d_thigh: float, d_shank: float):
    """Knee flexion that puts hip and ankle ``rho`` apart (zero when straight)."""
    c = (np.asarray(rho) ** 2 - d_thigh**2 - d_shank**2) / (2 * d_thigh * d_shank)
    return np.arccos(np.clip(c, -1.0, 1.0))


def distance_for_knee_flexion(alpha, d_thigh: float, d_shank: float):
    return np.sqrt(d_thigh**2 + d_shank**2 + 2 * d_thigh * d_shank * np.cos(alpha))


class _Ankle:
    """Footprints and swing transfers for one foot."""

    def __init__(self, centers, half_stance, footprints, lift_height, z_floor):
        self.c = centers
        self.hs = half_stance
        self.F = footprints
        self.h = lift_height
        self.z_floor = z_floor

    def evaluate(self, t):
        n_idx = np.searchsorted(self.c, t, side="right") - 1
        c0 = self.c[n_idx]
        c1 = self.c[n_idx + 1]
        pos = np.empty((len(t), 3))
        vel = np.zeros((len(t), 3))
        acc = np.zeros((len(t), 3))
        in_first = t <= c0 + self.hs
        in_second = t >= c1 - self.hs
        stance = in_first | in_second
        which = np.where(in_first, n_idx, n_idx + 1)
        pos[stance, :2] = self.F[which[stance]]
        pos[stance, 2] = self.z_floor
        sw = ~stance
        if np.any(sw):
            start = c0[sw] + self.hs
            dur = (c1[sw] - self.hs) - start
            phi = (t[sw] - start) / dur
            s, ds, dds = _min_jerk(phi)
            b, db, ddb = _lift(phi, _LIFT_SHAPE)
            delta = self.F[n_idx[sw] + 1] - self.F[n_idx[sw]]
            pos[sw, :2] = self.F[n_idx[sw]] + delta * s[:, None]
            pos[sw, 2] = self.z_floor + self.h * b
            vel[sw, :2] = delta * (ds / dur)[:, None]
            vel[sw, 2] = self.h * db / dur
            acc[sw, :2] = delta * (dds / dur**2)[:, None]
            acc[sw, 2] = self.h * ddb / dur**2
        return pos, vel, acc, stance


def _static_trial(params: GaitParams) -> GroundTruthTrial:
    dims = params.dims
    n = max(int(round(params.duration * params.sample_rate)), 1)
    t = np.arange(n) / params.sample_rate
    rng = np.random.default_rng(params.rng_seed)
    theta = float(rng.uniform(-math.pi, math.pi))
    fwd = np.array([math.cos(theta), math.sin(theta), 0.0])
    left = np.array([-math.sin(theta), math.cos(theta), 0.0])
    z_p = dims.z_floor + min(dims.d_lthigh + dims.d_lshank, dims.d_rthigh + dims.d_rshank)
    mp = np.array([0.0, 0.0, z_p])
    pos = {"mp": mp}
    rot = {"pelvis": yaw_quat(theta)}
    for side, s in (("left", 1.0), ("right", -1.0)):
        tag = side[0]
        hip = mp + s * 0.5 * dims.d_pelvis * left
        ankle = np.array([hip[0], hip[1], dims.z_floor])
        knee, shank_R, thigh_R = leg_ik(hip[None], ankle[None], fwd[None], dims.thigh(side), dims.shank(side))
        pos[f"{tag}h"], pos[f"{tag}k"], pos[f"{tag}a"] = hip, knee[0], ankle
        rot[f"{tag}shank"] = rotation_to_quat(shank_R[0])
        rot[f"{tag}thigh"] = rotation_to_quat(thigh_R[0])
    positions = np.tile(np.stack([pos[j] for j in JOINTS]), (n, 1, 1))
    orientations = np.tile(
        np.stack([rot[s] for s in ("pelvis", "lthigh", "rthigh", "lshank", "rshank")]), (n, 1, 1)
    )
    poses = PoseTrack(t, positions, orientations)
    accel = np.zeros((n, 3, 3))
    imu = ImuTrack(t, accel, orientations[:, [0, 3, 4]].copy(), np.ones((n, 2), dtype=bool))
    events = StepEvents([(0, n - 1)], [(0, n - 1)])
    return GroundTruthTrial(
        params,
        replace(dims, z_pelvis_standing=float(z_p)),
        poses,
        imu,
        events,
        np.zeros((n, 3, 3)),
        {"mp": 0.0, "la": 0.0, "ra": 0.0},
    )


def generate_gait(params: GaitParams) -> GroundTruthTrial:
    """Generate a noiseless trial with ground-truth poses, inputs and stance events."""
    if params.static:
        return _static_trial(params)
    dims = params.dims
    rng = np.random.default_rng(params.rng_seed)
    n = int(round(params.duration * params.sample_rate))
    t = np.arange(n) / params.sample_rate
    T = 2.0 / params.cadence  # stride period
    speed = params.stride_length / T
    hs = 0.5 * params.stance_fraction * T
    t0 = float(rng.uniform(0.0, T))  # a left mid-stance instant
    theta0 = float(rng.uniform(-math.pi, math.pi))
    heading = _Heading(params.path, speed, theta0, params, -2 * T, params.duration + 2 * T)

    def hip_xy(times, sign):
        th = heading.theta(times)
        lat = np.column_stack([-np.sin(th), np.cos(th)])
        return heading.position(times) + sign * 0.5 * dims.d_pelvis * lat

    # pelvis height: knee at stance_knee_flexion at mid-stance, leg no straighter than that
    # (and at least 3% short of full extension) at the stance edges
    L = min(dims.d_lthigh + dims.d_lshank, dims.d_rthigh + dims.d_rshank)
    rho_mid = min(
        distance_for_knee_flexion(params.stance_knee_flexion, dims.d_lthigh, dims.d_lshank),
        distance_for_knee_flexion(params.stance_knee_flexion, dims.d_rthigh, dims.d_rshank),
    )
    rho_edge = max(0.97 * L, rho_mid + 1e-3)
    omega_z = 4 * math.pi / T
    tau = np.linspace(-hs, hs, 401)
    horiz = speed * np.abs(tau)
    if horiz.max() >= 0.9 * rho_edge:
        raise InfeasibleGaitError("stride too long for the leg length")

    def max_rho(amp):
        z = rho_mid - amp + amp * np.cos(omega_z * tau)
        return np.sqrt(horiz**2 + z**2).max() - rho_edge

    amp = 0.0 if max_rho(0.0) <= 0 else brentq(max_rho, 0.0, 0.5 * rho_mid, xtol=1e-12)
    z0 = dims.z_floor + rho_mid - amp

    def pelvis_z(times, base):
        ph = omega_z * (times - t0)
        return base + amp * np.cos(ph), -amp * omega_z * np.sin(ph), -amp * omega_z**2 * np.cos(ph)

    k_lo = int(math.floor((-2 * T - t0) / T)) - 1
    k_hi = int(math.ceil((params.duration + 2 * T - t0) / T)) + 1
    ks = np.arange(k_lo, k_hi + 1)
    centers = {"left": t0 + ks * T, "right": t0 + 0.5 * T + ks * T}
    footprints = {side: hip_xy(centers[side], 1.0 if side == "left" else -1.0) for side in centers}

    th = heading.theta(t)
    fwd = np.column_stack([np.cos(th), np.sin(th), np.zeros(n)])
    lat = np.column_stack([-np.sin(th), np.cos(th), np.zeros(n)])
    mp_xy = heading.position(t)
    mp_vel = np.column_stack([heading.velocity(t), np.zeros(n)])
    mp_acc = np.column_stack([heading.acceleration(t), np.zeros(n)])

    def legs(lift):
        return {side: _Ankle(centers[side], hs, footprints[side], lift, dims.z_floor).evaluate(t) for side in centers}

    def rhos(hips, lift):
        return {side: np.linalg.norm(hips[side] - pos, axis=1) for side, (pos, _, _, _) in legs(lift).items()}

    def peak_flexion(hips, lift):
        return max(
            knee_flexion_for_distance(r, dims.thigh(side), dims.shank(side)).max()
            for side, r in rhos(hips, lift).items()
        )

    # the swing foot trails the hip at lift-off, so lower the pelvis until no
    # frame comes within 0.5% of full leg extension
    for _ in range(50):
        z, zd, zdd = pelvis_z(t, z0)
        mp = np.column_stack([mp_xy, z])
        hips = {"left": mp + 0.5 * dims.d_pelvis * lat, "right": mp - 0.5 * dims.d_pelvis * lat}
        base = peak_flexion(hips, 0.0)
        if base >= params.peak_knee_flexion:
            raise InfeasibleGaitError(
                f"peak_knee_flexion {math.degrees(params.peak_knee_flexion):.1f} deg is below the "
                f"{math.degrees(base):.1f} deg already reached without foot lift"
            )
        top = z0 - dims.z_floor - amp
        if peak_flexion(hips, top) < params.peak_knee_flexion:
            raise InfeasibleGaitError("peak_knee_flexion not reachable by lifting the foot")
        lift = brentq(lambda h: peak_flexion(hips, h) - params.peak_knee_flexion, 0.0, top, xtol=1e-12)
        excess = max(
            (r / (dims.thigh(side) + dims.shank(side))).max() for side, r in rhos(hips, lift).items()
        ) - 0.995
        if excess <= 0:
            break
        z0 -= excess * L + 1e-4
    else:
        raise InfeasibleGaitError("could not fit the swing within the leg length")
    mp_vel[:, 2] = zd
    mp_acc[:, 2] = zdd

    ankles = legs(lift)
    positions = {"mp": mp}
    quats = {"pelvis": yaw_quat(th)}
    for side in ("left", "right"):
        tag = side[0]
        pos = ankles[side][0]
        knee, shank_R, thigh_R = leg_ik(hips[side], pos, fwd, dims.thigh(side), dims.shank(side))
        positions[f"{tag}h"] = hips[side]
        positions[f"{tag}k"] = knee
        positions[f"{tag}a"] = pos
        quats[f"{tag}shank"] = rotation_to_quat(shank_R)
        quats[f"{tag}thigh"] = rotation_to_quat(thigh_R)
    poses = PoseTrack(
        t,
        np.stack([positions[j] for j in JOINTS], axis=1),
        np.stack([quats[s] for s in ("pelvis", "lthigh", "rthigh", "lshank", "rshank")], axis=1),
    )
    stance = np.column_stack([ankles["left"][3], ankles["right"][3]])
    events = StepEvents.from_masks(stance[:, 0], stance[:, 1])
    accel = np.stack([mp_acc, ankles["left"][2], ankles["right"][2]], axis=1)
    vel = np.stack([mp_vel, ankles["left"][1], ankles["right"][1]], axis=1)
    imu = ImuTrack(t, accel, poses.orientations[:, [0, 3, 4]].copy(), stance)
    travelled = {
        key: float(np.linalg.norm(np.diff(positions[key][:, :2], axis=0), axis=1).sum())
        for key in ("mp", "la", "ra")
    }
    return GroundTruthTrial(
        params, replace(dims, z_pelvis_standing=float(z[0])), poses, imu, events, vel, travelled
    )


def corrupt(track: ImuTrack, accel_noise_sd: float, ori_noise_sd: float, seed: int = 0) -> ImuTrack:
    """Add white Gaussian noise to accelerations and small random rotations to orientations."""
    if accel_noise_sd < 0 or ori_noise_sd < 0:
        raise ValueError("noise levels must be non-negative")
    rng = np.random.default_rng(seed)
    accel = track.accel_world.copy()
    ori = track.orientation.copy()
    if accel_noise_sd > 0:
        accel = accel + rng.normal(0.0, accel_noise_sd, size=accel.shape)
    if ori_noise_sd > 0:
        delta = rng.normal(0.0, ori_noise_sd, size=ori.shape[:-1] + (3,))
        ori = quat_multiply(quat_from_rotvec(delta), ori)
    return ImuTrack(track.t.copy(), accel, ori, track.contact.copy())


def to_raw(track: ImuTrack, gravity=GRAVITY) -> RawImuTrack:
    """Sensor-frame specific force for sensors aligned with their segments."""
    accel = rotate_vector(quat_inverse(track.orientation), track.accel_world + np.asarray(gravity))
    return RawImuTrack(track.t.copy(), accel, track.orientation.copy())
