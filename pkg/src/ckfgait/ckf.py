"""Constrained Kalman filter for pelvis and ankle kinematics.

Each step runs a constant-acceleration prediction, a pseudo-measurement
update (pelvis position, zero velocity and flat floor while a foot is
down), a covariance limiter, and finally an iterated projection of the
state onto the thigh-length, hinge-knee and knee range-of-motion
constraints.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .body import (
    POS_LA,
    POS_MP,
    POS_RA,
    STATE_DIM,
    BodyDimensions,
    PoseSnapshot,
    PoseTrack,
    SegmentOrientations,
    Side,
    assemble_pose,
    assemble_track,
    hip_position,
    wrap_knee,
)
from .errors import DegenerateGeometryError, NumericalFailureError
from .preprocess import ImuFrame, ImuTrack
from .so3 import quat_to_rotation

log = logging.getLogger(__name__)

SIDES: tuple[Side, Side] = ("left", "right")
_ANKLE_COL = {"left": 3, "right": 6}
_VEL_COL = {"left": 12, "right": 15}
PROJECTIONS = ("position", "covariance")


@dataclass(frozen=True)
class NoiseConfig:
    """Process and measurement variances plus projection settings.

    Defaults reproduce the published parameter table: accelerometer and
    limiter variances of 100, pelvis pseudo-measurement variances
    ``[100, 100, 0.1]`` m², ankle ZUPT/floor variances ``[0.01]*3 + [1e-4]``
    and a projection threshold of 100.
    """

    sigma2_acc: tuple[float, ...] = (100.0,) * 9
    sigma2_mp: tuple[float, ...] = (100.0, 100.0, 0.1)
    sigma2_ls: tuple[float, ...] = (0.01, 0.01, 0.01, 1e-4)
    sigma2_rs: tuple[float, ...] = (0.01, 0.01, 0.01, 1e-4)
    sigma2_lim: tuple[float, ...] = (100.0,) * 9
    sckf_threshold: float = 100.0
    max_sckf_iterations: int = 200
    dt: float = 0.01
    # initial constraint variance as a fraction of D P Dᵀ; decays by e per iteration
    sckf_weight: float = 0.1
    # stop outright below feasibility_tol; otherwise require every termination
    # ratio to pass with all residuals below residual_tol (m)
    feasibility_tol: float = 1e-9
    residual_tol: float = 1e-6
    covariance_limiter: bool = True
    # metric the projection minimizes: "position" weighs all nine position
    # coordinates equally and leaves velocities alone, "covariance" starts
    # from the a posteriori covariance
    projection: str = "position"
    # relative position weight of an ankle in contact ("position" mode only);
    # below 1 the projection prefers to move the pelvis and swing foot
    stance_weight: float = 0.3

    def __post_init__(self):
        for name, n in (("sigma2_acc", 9), ("sigma2_mp", 3), ("sigma2_ls", 4), ("sigma2_rs", 4), ("sigma2_lim", 9)):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != n:
                raise ValueError(f"{name} needs {n} entries, got {len(v)}")
            if not all(a > 0 for a in v):
                raise ValueError(f"{name} must be strictly positive")
            object.__setattr__(self, name, v)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.sckf_threshold > 1:
            raise ValueError("sckf_threshold must exceed 1")
        if self.max_sckf_iterations < 1:
            raise ValueError("max_sckf_iterations must be at least 1")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"projection must be one of {PROJECTIONS}")
        if not self.stance_weight > 0:
            raise ValueError("stance_weight must be positive")

    def sigma2_step(self, side: Side) -> tuple[float, ...]:
        return self.sigma2_ls if side == "left" else self.sigma2_rs


@dataclass
class ProjectionInfo:
    iterations: int
    converged: bool
    active_rom: tuple[bool, bool] = (False, False)


@dataclass
class FilterState:
    x: NDArray
    P: NDArray
    projection: ProjectionInfo | None = field(default=None, repr=False)

    def copy(self) -> "FilterState":
        return FilterState(self.x.copy(), self.P.copy(), self.projection)


@dataclass(frozen=True)
class SystemMatrices:
    F: NDArray
    G: NDArray
    Q: NDArray


@dataclass(frozen=True)
class MeasurementModel:
    H: NDArray
    y: NDArray
    sigma2: NDArray


@dataclass(frozen=True)
class ConstraintSystem:
    D: NDArray
    d: NDArray
    labels: tuple[str, ...]

    def residual(self, x: NDArray) -> NDArray:
        return self.D @ x - self.d


def _sym(P: NDArray) -> NDArray:
    return 0.5 * (P + P.T)


def build_system_matrices(cfg: NoiseConfig, dt: float | None = None) -> SystemMatrices:
    dt = cfg.dt if dt is None else float(dt)
    I9 = np.eye(9)
    F = np.block([[I9, dt * I9], [np.zeros((9, 9)), I9]])
    G = np.vstack([0.5 * dt**2 * I9, dt * I9])
    Q = _sym(G @ np.diag(cfg.sigma2_acc) @ G.T)
    return SystemMatrices(F, G, Q)


def initialize(x0: ArrayLike, p0_scale: float = 0.5) -> FilterState:
    if not p0_scale > 0:
        raise ValueError("p0_scale must be positive")
    x0 = np.array(x0, dtype=float).reshape(STATE_DIM)
    return FilterState(x0, p0_scale * np.eye(STATE_DIM))


def upright_state(orientation: ArrayLike, dims: BodyDimensions) -> NDArray:
    """Still state with the pelvis at ``z_pelvis_standing`` over the origin.

    Each thigh hangs straight down from its hip and each shank follows its
    measured orientation (``orientation`` is ``(3, 4)``: pelvis, lshank,
    rshank). Used when a trial comes without a known initial state.
    """
    q = np.asarray(orientation, dtype=float)
    x = np.zeros(STATE_DIM)
    x[POS_MP] = (0.0, 0.0, dims.z_pelvis_standing)
    down = np.array([0.0, 0.0, -1.0])
    for k, side in enumerate(SIDES):
        hip = hip_position(x[POS_MP], q[0], dims.d_pelvis, side)
        knee = hip + dims.thigh(side) * down
        c = _ANKLE_COL[side]
        x[c : c + 3] = knee - dims.shank(side) * quat_to_rotation(q[k + 1])[:, 2]
    return x


def predict(state: FilterState, u: ArrayLike, sys: SystemMatrices) -> FilterState:
    x = sys.F @ state.x + sys.G @ np.asarray(u, dtype=float)
    P = _sym(sys.F @ state.P @ sys.F.T + sys.Q)
    return FilterState(x, P)


def build_measurement(contact: tuple[bool, bool], dims: BodyDimensions, cfg: NoiseConfig) -> MeasurementModel:
    """Stack the pelvis pseudo-measurement with a ZUPT/floor block per foot in contact."""
    H_mp = np.zeros((3, STATE_DIM))
    H_mp[0, [0, 3, 6]] = (1.0, -0.5, -0.5)
    H_mp[1, [1, 4, 7]] = (1.0, -0.5, -0.5)
    H_mp[2, 2] = 1.0
    rows = [H_mp]
    ys = [np.array([0.0, 0.0, dims.z_pelvis_standing])]
    s2 = [np.asarray(cfg.sigma2_mp)]
    for side, on in zip(SIDES, contact):
        if not on:
            continue
        H = np.zeros((4, STATE_DIM))
        v = _VEL_COL[side]
        H[0:3, v : v + 3] = np.eye(3)
        H[3, _ANKLE_COL[side] + 2] = 1.0
        rows.append(H)
        ys.append(np.array([0.0, 0.0, 0.0, dims.z_floor]))
        s2.append(np.asarray(cfg.sigma2_step(side)))
    return MeasurementModel(np.vstack(rows), np.concatenate(ys), np.concatenate(s2))


def _gain(P: NDArray, H: NDArray, sigma2: NDArray) -> NDArray:
    HP = H @ P
    S = HP @ H.T
    S[np.diag_indices_from(S)] += sigma2
    try:
        K = np.linalg.solve(S, HP).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("innovation covariance is singular") from exc
    if not np.all(np.isfinite(K)):
        raise NumericalFailureError("non-finite Kalman gain")
    return K


def measurement_update(state: FilterState, meas: MeasurementModel) -> FilterState:
    """Kalman state update; the covariance is left for ``covariance_limit``."""
    K = _gain(state.P, meas.H, meas.sigma2)
    x = state.x + K @ (meas.y - meas.H @ state.x)
    return FilterState(x, state.P)


def covariance_limit(state: FilterState, meas: MeasurementModel, cfg: NoiseConfig) -> FilterState:
    """Covariance update with an extra zero-innovation position pseudo-measurement.

    The pseudo-measurement equals the current position estimate, so it
    bounds the position covariance without moving the state.
    """
    if cfg.covariance_limiter:
        H_lim = np.hstack([np.eye(9), np.zeros((9, 9))])
        H = np.vstack([meas.H, H_lim])
        sigma2 = np.concatenate([meas.sigma2, cfg.sigma2_lim])
    else:
        H, sigma2 = meas.H, meas.sigma2
    K = _gain(state.P, H, sigma2)
    P = _sym((np.eye(STATE_DIM) - K @ H) @ state.P)
    return FilterState(state.x.copy(), P)


class _LegGeometry:
    """Orientation-dependent terms of the constraints for one leg.

    The thigh vector is ``p_mp - p_ankle + offset``; only positions vary
    while the state is projected.
    """

    __slots__ = ("side", "tag", "col", "offset", "r_x", "r_y", "r_z", "d_thigh", "hinge_d")

    def __init__(self, side: Side, pelvis_R: NDArray, shank_R: NDArray, dims: BodyDimensions):
        sign = 1.0 if side == "left" else -1.0
        self.side = side
        self.tag = side[0]
        self.col = _ANKLE_COL[side]
        self.r_x = shank_R[:, 0]
        self.r_y = shank_R[:, 1]
        self.r_z = shank_R[:, 2]
        self.offset = sign * 0.5 * dims.d_pelvis * pelvis_R[:, 1] - dims.shank(side) * self.r_z
        self.d_thigh = dims.thigh(side)
        self.hinge_d = -float(self.offset @ self.r_y)

    def thigh(self, x: NDArray) -> NDArray:
        return x[0:3] - x[self.col : self.col + 3] + self.offset

    def knee_angle(self, tau_hat: NDArray) -> float | None:
        num = -float(tau_hat @ self.r_z)
        den = -float(tau_hat @ self.r_x)
        if abs(num) < 1e-12 and abs(den) < 1e-12:
            return None
        return (math.atan2(num, den) + math.pi) % (2.0 * math.pi) - 0.5 * math.pi


def _legs_from_rotations(R: NDArray, dims: BodyDimensions) -> tuple[_LegGeometry, _LegGeometry]:
    """``R`` stacks the pelvis, left shank and right shank rotation matrices."""
    return _LegGeometry("left", R[0], R[1], dims), _LegGeometry("right", R[0], R[2], dims)


def _geometry(oris: SegmentOrientations, dims: BodyDimensions) -> tuple[_LegGeometry, _LegGeometry]:
    return _legs_from_rotations(quat_to_rotation(np.stack([oris.pelvis, oris.lshank, oris.rshank])), dims)




# the range-of-motion row targets this far inside the range so iterates that
# stop at residual_tol still satisfy it
ROM_MARGIN = 1e-5  # rad


def _clamp_knee_max(value: float) -> float:
    # a straight leg still gets a range of 2 * ROM_MARGIN to land in
    return min(max(value, 2.0 * ROM_MARGIN), math.pi)


def rom_target(alpha: float, alpha_max: float) -> float:
    """Knee angle the range-of-motion row pulls an out-of-range ``alpha`` to."""
    m = min(ROM_MARGIN, 0.5 * alpha_max)
    return min(alpha_max - m, max(m, alpha))


# one constraint row: D has +v on the pelvis columns and -v on the ankle columns
_Row = tuple[NDArray, int, float, str]


def _rows(x: NDArray, legs, knee_max: dict) -> list[_Row]:
    rows = []
    for g in legs:
        tau = g.thigh(x)
        norm = math.sqrt(float(tau @ tau))
        if norm < 1e-6:
            raise DegenerateGeometryError(f"{g.side} thigh vector has zero length")
        tau_hat = tau / norm
        # linearized thigh length: d = -c(x) + D x
        rows.append((tau_hat, g.col, g.d_thigh - float(tau_hat @ g.offset), f"{g.tag}_thigh_length"))
        rows.append((g.r_y, g.col, g.hinge_d, f"{g.tag}_hinge"))
        alpha = g.knee_angle(tau_hat)
        alpha_max = _clamp_knee_max(knee_max[g.side])
        if alpha is not None and (alpha < 0.0 or alpha > alpha_max):
            target = rom_target(alpha, alpha_max)
            psi = g.r_z * math.sin(target) + g.r_x * math.cos(target)
            rows.append((psi, g.col, -float(g.offset @ psi), f"{g.tag}_rom"))
    return rows


def _dense(rows: list[_Row], width: int) -> ConstraintSystem:
    D = np.zeros((len(rows), width))
    for i, (v, col, _, _) in enumerate(rows):
        D[i, 0:3] = v
        D[i, col : col + 3] = -v
    return ConstraintSystem(D, np.array([r[2] for r in rows]), tuple(r[3] for r in rows))


def _constraints(x: NDArray, legs, knee_max: dict) -> ConstraintSystem:
    return _dense(_rows(x, legs, knee_max), len(x))


def build_constraints(
    state, oris: SegmentOrientations, dims: BodyDimensions, knee_max: dict[str, float] | None = None
) -> ConstraintSystem:
    """Linearized constraint rows ``D x = d`` at the current state.

    Per leg: thigh length and hinge rows always, plus a range-of-motion row
    when the knee angle lies outside ``[0, min(pi, knee_max[side])]``.
    """
    x = np.asarray(getattr(state, "x", state), dtype=float)
    if knee_max is None:
        knee_max = {"left": math.pi, "right": math.pi}
    return _constraints(x, _geometry(oris, dims), knee_max)


def knee_angles_of(state, oris: SegmentOrientations, dims: BodyDimensions, legs=None) -> dict[str, float | None]:
    x = np.asarray(getattr(state, "x", state), dtype=float)
    out = {}
    for g in legs or _geometry(oris, dims):
        tau = g.thigh(x)
        n = math.sqrt(float(tau @ tau))
        out[g.side] = g.knee_angle(tau / n) if n > 1e-6 else None
    return out


def sckf_termination_ratios(D: NDArray, P: NDArray) -> NDArray:
    """Per-row ratio ``max_j(D_ij² P_jj) / (D_i P D_iᵀ)``."""
    num = np.max(D**2 * np.diag(P)[None, :], axis=1)
    den = np.einsum("ij,jk,ik->i", D, P, D)
    with np.errstate(divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)


def _projection_start(state: FilterState, cfg: NoiseConfig, contact) -> tuple[NDArray, NDArray]:
    if cfg.projection == "covariance":
        return state.x.copy(), state.P.copy()
    w = np.ones(9)
    for side, on in zip(SIDES, contact):
        if on:
            c = _ANKLE_COL[side]
            w[c : c + 3] = cfg.stance_weight
    return state.x[:9].copy(), np.diag(w)


def sckf_project(
    state: FilterState,
    oris: SegmentOrientations | None,
    dims: BodyDimensions,
    knee_max: dict[str, float] | None,
    cfg: NoiseConfig,
    legs=None,
    contact: tuple[bool, bool] = (False, False),
) -> FilterState:
    """Project the state onto the body constraints by iterated soft updates.

    Each pass relinearizes the constraints at the current iterate and
    applies them one row at a time as measurements whose variance starts at
    ``sckf_weight`` times the row's current variance and shrinks by a
    factor of e per pass. The weighting comes from ``cfg.projection``; in
    position mode ankles flagged in ``contact`` get ``cfg.stance_weight``.
    Iteration stops once the residuals vanish, once every row's
    termination ratio reaches ``sckf_threshold`` with residuals below
    ``residual_tol``, or at ``max_sckf_iterations`` (flagged as not
    converged). The covariance passed in is returned untouched.
    """
    if knee_max is None:
        knee_max = {"left": math.pi, "right": math.pi}
    if legs is None:
        legs = _geometry(oris, dims)
    x, Pc = _projection_start(state, cfg, contact)
    n = len(x)
    converged = False
    it = 0
    rows: list[_Row] = []
    while it < cfg.max_sckf_iterations:
        rows = _rows(x, legs, knee_max)
        cs = _dense(rows, n)
        r = cs.d - cs.D @ x
        worst = float(np.max(np.abs(r)))
        if worst <= cfg.feasibility_tol:
            converged = True
            break
        PDt = Pc @ cs.D.T
        S = cs.D @ PDt
        if it > 0 and worst <= cfg.residual_tol and _ratios_pass(cs.D, Pc, S, cfg.sckf_threshold):
            converged = True
            break
        # every row is a measurement with variance sckf_weight * e^-it * D_i P D_iᵀ
        S[np.diag_indices_from(S)] *= 1.0 + cfg.sckf_weight * math.exp(-it)
        it += 1
        try:
            K = np.linalg.solve(S, PDt.T).T
        except np.linalg.LinAlgError:
            # duplicated rows (e.g. a straight knee makes ROM and length coincide)
            K = PDt @ np.linalg.pinv(S)
        x = x + K @ r
        Pc = Pc - K @ PDt.T
    if not converged:
        log.warning("constraint projection stopped after %d iterations without converging", it)
    if len(x) < STATE_DIM:
        x = np.concatenate([x, state.x[len(x) :]])
    rom = tuple(any(r[3] == f"{s[0]}_rom" for r in rows) for s in SIDES)
    return FilterState(x, state.P, ProjectionInfo(max(it, 1), converged, rom))


def _ratios_pass(D: NDArray, P: NDArray, DPD: NDArray, threshold: float) -> bool:
    num = np.max(D**2 * np.diagonal(P)[None, :], axis=1)
    den = np.diagonal(DPD)
    return bool(np.all((den <= 0.0) | (num >= threshold * den)))


@dataclass
class StepDiagnostics:
    """Per-frame residuals after projection, for debugging output."""

    thigh_length_residual: NDArray  # (N, 2) meters
    hinge_residual: NDArray  # (N, 2) |tau_hat . r_y|
    knee_angle: NDArray  # (N, 2) radians
    sckf_iterations: NDArray  # (N,)
    sckf_converged: NDArray  # (N,) bool


class ConstrainedKalmanFilter:
    """Stateful filter driving one trial.

    Examples
    --------
    >>> ckf = ConstrainedKalmanFilter(BodyDimensions.standing(), NoiseConfig())
    >>> poses, diag = ckf.run(track, x0)                     # doctest: +SKIP
    """

    def __init__(self, dims: BodyDimensions, cfg: NoiseConfig | None = None):
        self.dims = dims
        self.cfg = cfg or NoiseConfig()
        self.state: FilterState | None = None
        self.last_time: float | None = None
        self._systems: dict[float, SystemMatrices] = {}
        self._models: dict[tuple[bool, bool], tuple[MeasurementModel, MeasurementModel]] = {}

    def initialize(self, x0: ArrayLike, p0_scale: float = 0.5, timestamp: float | None = None) -> FilterState:
        self.state = initialize(x0, p0_scale)
        self.last_time = timestamp
        return self.state

    def _system(self, dt: float) -> SystemMatrices:
        key = round(dt, 12)
        sys = self._systems.get(key)
        if sys is None:
            sys = self._systems[key] = build_system_matrices(self.cfg, dt)
        return sys

    def _model(self, contact: tuple[bool, bool]) -> tuple[MeasurementModel, MeasurementModel]:
        """Measurement model and its limiter-augmented counterpart for a contact case."""
        pair = self._models.get(contact)
        if pair is None:
            meas = build_measurement(contact, self.dims, self.cfg)
            if self.cfg.covariance_limiter:
                H = np.vstack([meas.H, np.hstack([np.eye(9), np.zeros((9, 9))])])
                lim = MeasurementModel(H, np.zeros(len(H)), np.concatenate([meas.sigma2, self.cfg.sigma2_lim]))
            else:
                lim = meas
            pair = self._models[contact] = (meas, lim)
        return pair

    def _advance(self, u: NDArray, contact: tuple[bool, bool], timestamp: float, legs) -> FilterState:
        if self.state is None:
            raise RuntimeError("filter is not initialized")
        dt = self.cfg.dt if self.last_time is None else timestamp - self.last_time
        if not dt > 0:
            raise ValueError(f"non-increasing timestamp at t={timestamp}")
        self.last_time = timestamp
        prior = predict(self.state, u, self._system(dt))
        meas, lim = self._model(contact)
        K = _gain(prior.P, meas.H, meas.sigma2)
        x = prior.x + K @ (meas.y - meas.H @ prior.x)
        K = _gain(prior.P, lim.H, lim.sigma2)
        post = FilterState(x, _sym(prior.P - K @ (lim.H @ prior.P)))
        # the knee may bend during prediction/update but not during projection
        knee_max = {
            side: _clamp_knee_max(a if a is not None else math.pi)
            for side, a in knee_angles_of(post, None, self.dims, legs).items()
        }
        self.state = sckf_project(post, None, self.dims, knee_max, self.cfg, legs, contact)
        return self.state

    def step(self, frame: ImuFrame, oris: SegmentOrientations | None = None) -> PoseSnapshot:
        """Advance by one frame and return the constrained pose."""
        oris = oris or frame.segments()
        legs = _geometry(oris, self.dims)
        self._advance(frame.u, (frame.contact_left, frame.contact_right), frame.timestamp, legs)
        return assemble_pose(self.state, oris, self.dims, frame.timestamp)

    def run(
        self,
        track: ImuTrack,
        x0: ArrayLike,
        p0_scale: float = 0.5,
        on_step: Callable[[int, FilterState], None] | None = None,
    ) -> tuple[PoseTrack, StepDiagnostics]:
        """Filter a whole trial, starting from ``x0`` at the first frame.

        ``on_step(k, state)``, if given, sees the filter state after every
        frame; it must not modify it.
        """
        n = len(track)
        if n == 0:
            raise ValueError("empty track")
        self.initialize(x0, p0_scale, float(track.t[0]))
        R = quat_to_rotation(track.orientation)  # (N, 3, 3, 3)
        U = track.accel_world.reshape(n, 9)
        contact = np.asarray(track.contact, dtype=bool)
        X = np.empty((n, STATE_DIM))
        # the initial state is only projected; there is nothing to predict from
        legs = _legs_from_rotations(R[0], self.dims)
        knee0 = {side: _clamp_knee_max(a if a is not None else math.pi)
                 for side, a in knee_angles_of(self.state, None, self.dims, legs).items()}
        c0 = (bool(contact[0, 0]), bool(contact[0, 1]))
        self.state = sckf_project(self.state, None, self.dims, knee0, self.cfg, legs, c0)
        X[0] = self.state.x
        if on_step is not None:
            on_step(0, self.state)
        iters = np.zeros(n, dtype=int)
        conv = np.ones(n, dtype=bool)
        iters[0] = self.state.projection.iterations
        conv[0] = self.state.projection.converged
        for k in range(1, n):
            legs = _legs_from_rotations(R[k], self.dims)
            st = self._advance(U[k], (bool(contact[k, 0]), bool(contact[k, 1])), float(track.t[k]), legs)
            X[k] = st.x
            iters[k] = st.projection.iterations
            conv[k] = st.projection.converged
            if on_step is not None:
                on_step(k, st)
        pt = assemble_track(X, track.orientation, self.dims, track.t)
        return pt, constraint_diagnostics(pt, self.dims, iters, conv)


def constraint_diagnostics(poses: PoseTrack, dims: BodyDimensions, iterations=None, converged=None) -> StepDiagnostics:
    """Thigh-length, hinge and knee-angle checks evaluated on assembled poses."""
    from .body import knee_angles

    n = len(poses)
    length = np.zeros((n, 2))
    hinge = np.zeros((n, 2))
    knee = np.zeros((n, 2))
    for j, (side, hip, kn, shank) in enumerate((("left", "lh", "lk", "lshank"), ("right", "rh", "rk", "rshank"))):
        tau = poses.joint(hip) - poses.joint(kn)
        norm = np.linalg.norm(tau, axis=1)
        tau_hat = tau / norm[:, None]
        R = quat_to_rotation(poses.segment(shank))
        length[:, j] = norm - dims.thigh(side)
        hinge[:, j] = np.einsum("ni,ni->n", tau_hat, R[:, :, 1])
        knee[:, j] = knee_angles(tau_hat, R)
    if iterations is None:
        iterations = np.zeros(n, dtype=int)
    if converged is None:
        converged = np.ones(n, dtype=bool)
    return StepDiagnostics(length, hinge, knee, np.asarray(iterations), np.asarray(converged))
