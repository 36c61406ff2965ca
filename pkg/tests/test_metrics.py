import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckfgait.body import JOINTS, SEGMENTS, PoseTrack, knee_angle
from ckfgait.errors import UndefinedMetricError
from ckfgait.metrics import (
    ANGLE_NAMES,
    TrialComparison,
    aggregate,
    correlation_coefficient,
    evaluate,
    joint_angle_series,
    orientation_rmse,
    position_rmse,
    ttd_deviation,
)
from ckfgait.preprocess import StepEvents
from ckfgait.so3 import quat_from_axis_angle, quat_multiply, quat_to_rotation, yaw_quat

from conftest import random_quats, trial

SCORED = ("lh", "rh", "lk", "rk", "la", "ra")


def random_track(rng, n=50):
    return PoseTrack(np.arange(n) * 0.01, rng.normal(size=(n, 7, 3)), random_quats(rng, n * 5).reshape(n, 5, 4))


def copy_track(tr, positions=None, orientations=None):
    return PoseTrack(
        tr.t.copy(),
        tr.positions.copy() if positions is None else positions,
        tr.orientations.copy() if orientations is None else orientations,
    )


# ------------------------------------------------------------------ naive oracles


def naive_position_rmse(est, ref):
    total = 0.0
    for k in range(len(ref.t)):
        shift = [ref.positions[k, 0, i] - est.positions[k, 0, i] for i in range(3)]
        frame = 0.0
        for j in SCORED:
            c = JOINTS.index(j)
            d = [est.positions[k, c, i] + shift[i] - ref.positions[k, c, i] for i in range(3)]
            frame += math.sqrt(sum(v * v for v in d))
        frame /= len(SCORED)
        total += frame * frame
    return math.sqrt(total / len(ref.t))


def _hamilton(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def naive_orientation_rmse(est, ref):
    total = 0.0
    for k in range(len(ref.t)):
        frame = 0.0
        for s in ("lthigh", "rthigh"):
            c = SEGMENTS.index(s)
            e = est.orientations[k, c]
            w, x, y, z = _hamilton(ref.orientations[k, c], (e[0], -e[1], -e[2], -e[3]))
            frame += 2 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))
        frame /= 2
        total += frame * frame
    return math.sqrt(total / len(ref.t))


def naive_cc(a, b):
    ma = sum(a) / len(a)
    mb = sum(b) / len(b)
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    da = math.sqrt(sum((x - ma) ** 2 for x in a))
    db = math.sqrt(sum((y - mb) ** 2 for y in b))
    return num / (da * db)


def naive_ttd(est, ref, events):
    out = {}
    for point, side in (("mp", "left"), ("la", "left"), ("ra", "right")):
        c = JOINTS.index(point)
        idx = [a for a, _ in events.intervals(side)]

        def dist(track):
            s = 0.0
            for i0, i1 in zip(idx, idx[1:]):
                s += math.hypot(track.positions[i1, c, 0] - track.positions[i0, c, 0],
                                track.positions[i1, c, 1] - track.positions[i0, c, 1])
            return s

        out[point] = abs(dist(est) - dist(ref)) / dist(ref)
    return out


def test_metrics_match_naive_oracles(rng):
    for _ in range(20):
        ref, est = random_track(rng), random_track(rng)
        cmp = TrialComparison(est, ref)
        assert position_rmse(cmp) == pytest.approx(naive_position_rmse(est, ref), rel=1e-12, abs=1e-12)
        assert orientation_rmse(cmp) == pytest.approx(naive_orientation_rmse(est, ref), rel=1e-12, abs=1e-12)
        a, b = rng.normal(size=40), rng.normal(size=40)
        assert correlation_coefficient(a, b) == pytest.approx(naive_cc(a, b), rel=1e-12, abs=1e-12)
        ev = StepEvents(sorted((int(i), int(i) + 2) for i in rng.choice(45, 6, replace=False)),
                        sorted((int(i), int(i) + 1) for i in rng.choice(45, 5, replace=False)))
        got, want = ttd_deviation(est, ref, ev), naive_ttd(est, ref, ev)
        for k in want:
            assert got[k] == pytest.approx(want[k], rel=1e-12, abs=1e-12)


# ------------------------------------------------------------------ position


def test_position_examples(rng):
    ref = random_track(rng)
    assert position_rmse(TrialComparison(copy_track(ref), ref)) == 0.0
    pos = ref.positions.copy()
    pos[:, 1:] += [0.0, 0.03, 0.0]
    assert position_rmse(TrialComparison(copy_track(ref, pos), ref)) == pytest.approx(0.03, rel=1e-12)
    with pytest.raises(ValueError):
        TrialComparison(random_track(rng, 10), ref)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.tuples(*[st.floats(-100, 100)] * 3))
def test_position_translation_invariant(seed, offset):
    r = np.random.default_rng(seed)
    ref, est = random_track(r, 20), random_track(r, 20)
    moved = copy_track(est, est.positions + np.array(offset))
    assert position_rmse(TrialComparison(moved, ref)) == pytest.approx(position_rmse(TrialComparison(est, ref)), abs=1e-9)


# ------------------------------------------------------------------ orientation


def test_orientation_examples(rng):
    ref = random_track(rng, 80)
    assert orientation_rmse(TrialComparison(copy_track(ref), ref)) == pytest.approx(0.0, abs=1e-7)
    r10 = quat_from_axis_angle([1.0, 2.0, -0.5], math.radians(10))
    est = copy_track(ref, orientations=quat_multiply(ref.orientations, r10))
    cmp = TrialComparison(est, ref)
    assert orientation_rmse(cmp) == pytest.approx(math.radians(10), abs=1e-9)
    assert orientation_rmse(cmp, remove_bias=True) < 1e-6


def test_orientation_invariant_to_common_world_rotation(rng):
    ref, est = random_track(rng, 40), random_track(rng, 40)
    W = random_quats(rng, 1)[0]
    ref2 = copy_track(ref, orientations=quat_multiply(W, ref.orientations))
    est2 = copy_track(est, orientations=quat_multiply(W, est.orientations))
    for bias in (False, True):
        assert orientation_rmse(TrialComparison(est2, ref2), bias) == pytest.approx(
            orientation_rmse(TrialComparison(est, ref), bias), abs=1e-7
        )


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.5))
def test_unbiased_never_exceeds_biased(seed, spread):
    r = np.random.default_rng(seed)
    ref = random_track(r, 30)
    noise = quat_from_axis_angle(r.normal(size=(30, 5, 3)), r.uniform(0, spread, size=(30, 5)))
    est = copy_track(ref, orientations=quat_multiply(ref.orientations, noise))
    cmp = TrialComparison(est, ref)
    assert orientation_rmse(cmp, True) <= orientation_rmse(cmp, False) + 1e-9


# ------------------------------------------------------------------ joint angles


def _standing_track(n=20):
    tr = trial("straight", 0, n / 100, cadence=0.0)
    return tr.poses


def test_standing_angles_are_zero():
    angles = joint_angle_series(_standing_track())
    assert set(angles) == set(ANGLE_NAMES)
    for name, a in angles.items():
        assert np.abs(a).max() < 1e-6, name


def test_scripted_hip_flexion_is_recovered():
    base = _standing_track(200)
    n = len(base)
    peak = math.radians(45)
    flex = peak * np.sin(np.linspace(0, math.pi, n)) ** 2
    heading = yaw_quat(np.linspace(0.0, 1.0, n))
    oris = base.orientations.copy()
    pos = base.positions.copy()
    # rotate the pelvis heading and swing the left thigh forward about the pelvis y axis
    oris[:, 0] = heading
    thigh = quat_multiply(heading, quat_from_axis_angle([0.0, 1.0, 0.0], -flex))
    oris[:, 1] = thigh
    oris[:, 2] = heading
    d = np.linalg.norm(base.joint("lh")[0] - base.joint("lk")[0])
    R_p = quat_to_rotation(heading)
    R_t = quat_to_rotation(thigh)
    pos[:, JOINTS.index("lh")] = pos[:, 0] + 0.5 * np.linalg.norm(base.joint("lh")[0] - base.joint("rh")[0]) * R_p[:, :, 1]
    pos[:, JOINTS.index("lk")] = pos[:, JOINTS.index("lh")] - d * R_t[:, :, 2]
    track = PoseTrack(base.t, pos, oris)
    hip = joint_angle_series(track)["hip_left_sagittal"]
    assert np.degrees(hip.max()) == pytest.approx(45.0, abs=0.1)
    assert np.allclose(hip, flex, atol=1e-9)


def test_knee_series_is_framewise_knee_angle():
    tr = trial("zigzag", 3, 3.0).poses
    series = joint_angle_series(tr)["knee_right_sagittal"]
    R = quat_to_rotation(tr.segment("rshank"))
    for k in range(0, len(tr), 17):
        tau = tr.joint("rh")[k] - tr.joint("rk")[k]
        assert series[k] == pytest.approx(knee_angle(tau / np.linalg.norm(tau), R[k]), abs=1e-12)


# ------------------------------------------------------------------ correlation


def test_correlation_examples(rng):
    a = rng.normal(size=30)
    assert correlation_coefficient(a, a) == pytest.approx(1.0, abs=1e-15)
    z = a - a.mean()
    assert correlation_coefficient(z, -z) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(UndefinedMetricError):
        correlation_coefficient(np.ones(5), a[:5])
    with pytest.raises(ValueError):
        correlation_coefficient([1.0], [2.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-100, 100), st.floats(0.01, 100), st.floats(-100, 100))
def test_correlation_affine_invariant(seed, s1, o1, s2, o2):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(2, 25))
    assert correlation_coefficient(s1 * a + o1, s2 * b + o2) == pytest.approx(correlation_coefficient(a, b), abs=1e-9)


# ------------------------------------------------------------------ travelled distance


def test_ttd_examples():
    ref = trial("straight", 1, 10.0)
    assert all(v == 0.0 for v in ttd_deviation(ref.poses, ref.poses, ref.events).values())
    pos = ref.poses.positions.copy()
    start = pos[0, :, :2].copy()
    pos[:, :, :2] = start + 1.05 * (pos[:, :, :2] - start)
    dev = ttd_deviation(copy_track(ref.poses, pos), ref.poses, ref.events)
    for v in dev.values():
        assert v == pytest.approx(0.05, abs=1e-12)
    with pytest.raises(UndefinedMetricError):
        ttd_deviation(ref.poses, ref.poses, StepEvents([(3, 4)], [(3, 4)]))


def test_ttd_on_noisy_walk_matches_hand_sum(rng):
    ref = trial("straight", 2, 10.0)
    est = copy_track(ref.poses, ref.poses.positions + rng.normal(scale=0.02, size=ref.poses.positions.shape))
    got, want = ttd_deviation(est, ref.poses, ref.events), naive_ttd(est, ref.poses, ref.events)
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-9)


# ------------------------------------------------------------------ reports


def test_evaluate_and_aggregate():
    tr = trial("straight", 0, 5.0)
    rep = evaluate(tr.poses, tr.poses, tr.events)
    assert rep.e_pos == 0.0 and rep.e_ori_biased < 1e-7 and rep.e_ori_unbiased < 1e-7
    assert rep.joint_angles["knee_left_sagittal"].cc == pytest.approx(1.0)
    assert all(0 <= s.rmse_biased for s in rep.joint_angles.values())
    json.dumps(rep.to_dict())
    assert evaluate(tr.poses, tr.poses, remove_bias=False).e_ori_unbiased is None
    agg = aggregate([rep, rep])
    assert agg["e_pos"] == {"mean": 0.0, "sd": 0.0, "n": 2}
    with pytest.raises(ValueError):
        aggregate([])
