"""Acceptance criteria, one test per criterion.

Each test prints a ``CRITERION n: PASS|FAIL`` line; the lines are repeated
in the terminal summary. Run alone with ``pytest tests/test_acceptance.py``.
"""

import math
import os
import subprocess
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from ckfgait.ckf import (
    ConstrainedKalmanFilter,
    FilterState,
    MeasurementModel,
    NoiseConfig,
    build_constraints,
    knee_angles_of,
    measurement_update,
    rom_target,
)
from ckfgait.cli import main as cli_main
from ckfgait.metrics import TrialComparison, correlation_coefficient, orientation_rmse, position_rmse, ttd_deviation
from ckfgait.pipeline import estimate, prepare, score, synthesize
from ckfgait.preprocess import yaw_offset_search
from ckfgait.so3 import quat_from_axis_angle, quat_to_rotation, rotate_vector
from ckfgait.synth import GaitParams, corrupt

import conftest
from conftest import ACCEL_NOISE, ORI_NOISE, trial
from test_ckf import _c_hinge, _c_length, _fd, oris_at, random_psd, true_state
from test_metrics import naive_cc, naive_orientation_rmse, naive_position_rmse, naive_ttd, random_track
from test_preprocess import _coverage

SEEDS = range(5)
PATHS = ("straight", "figure-eight", "zigzag")
LONG = 300.0  # s


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


@lru_cache(maxsize=None)
def run_trial(path, seed, noisy, duration=30.0, cadence=None):
    kw = {} if cadence is None else {"cadence": cadence}
    params = GaitParams(path=path, rng_seed=seed, duration=duration, **kw)
    tr = synthesize(params, ACCEL_NOISE if noisy else 0.0, ORI_NOISE if noisy else 0.0)
    poses, diag, _ = estimate(tr, tr.config)
    return tr, poses, diag, score(poses, tr.reference, tr.events, tr.config)


# ---------------------------------------------------------------- 1


def test_criterion_01_kf_oracle(rng):
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        m = int(rng.choice([3, 7, 11]))
        P = random_psd(rng, 18)
        H = rng.normal(size=(m, 18))
        s2 = rng.uniform(0.01, 10.0, m)
        x, y = rng.normal(size=18), rng.normal(size=m)
        got = measurement_update(FilterState(x, P), MeasurementModel(H, y, s2)).x
        S = H @ P @ H.T + np.diag(s2)
        ref = x + P @ H.T @ np.linalg.inv(S) @ (y - H @ x)
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-8 and elapsed < 10, f"KF update vs textbook: max rel err {worst:.2e}, {elapsed:.2f} s")


# ---------------------------------------------------------------- 2


def _c_psi(x, oris, dims, side, target):
    R = quat_to_rotation(oris.shank(side))
    psi = R[:, 2] * math.sin(target) + R[:, 0] * math.cos(target)
    from ckfgait.body import thigh_vector

    return thigh_vector(x, oris.pelvis, oris.shank(side), dims, side) @ psi


def test_criterion_02_jacobians(rng):
    worst, rom_rows = 0.0, 0
    trials = [trial(p, 1, 3.0) for p in PATHS]
    for i in range(500):
        tr = trials[i % 3]
        k = int(rng.integers(len(tr)))
        oris = oris_at(tr, k)
        x = true_state(tr, k) + np.r_[rng.normal(scale=0.05, size=9), np.zeros(9)]
        alpha = knee_angles_of(x, oris, tr.dims)
        # force a range-of-motion row on sides that are bent
        kmax = {s: (a * rng.uniform(0.2, 0.9) if a is not None and a > 0.05 else math.pi) for s, a in alpha.items()}
        cs = build_constraints(x, oris, tr.dims, kmax)
        rows = {l: cs.D[j] for j, l in enumerate(cs.labels)}
        for side in ("left", "right"):
            t = side[0]
            checks = [
                (rows[f"{t}_thigh_length"], lambda z: _c_length(z, oris, tr.dims, side)),
                (rows[f"{t}_hinge"], lambda z: _c_hinge(z, oris, tr.dims, side)),
            ]
            if f"{t}_rom" in rows:
                target = rom_target(alpha[side], kmax[side])
                checks.append((rows[f"{t}_rom"], lambda z: _c_psi(z, oris, tr.dims, side, target)))
                rom_rows += 1
            for row, fn in checks:
                worst = max(worst, np.abs(row - _fd(fn, x)).max())
    report(2, worst <= 1e-5 and rom_rows > 100,
           f"constraint Jacobians vs central differences: max abs err {worst:.2e} ({rom_rows} ROM rows)")


# ---------------------------------------------------------------- 3, 6


@lru_cache(maxsize=None)
def long_walk(limiter: bool):
    """The noisy 5-minute walk, recording diag(P) and cond(P) after every frame."""
    tr = synthesize(GaitParams(path="straight", rng_seed=11, duration=LONG), ACCEL_NOISE, ORI_NOISE)
    track, _ = prepare(tr, tr.config)
    n = len(track)
    var = np.empty((n, 18))
    cond = np.empty(n)

    def record(k, state):
        var[k] = np.diag(state.P)
        cond[k] = np.linalg.cond(state.P)

    cfg = NoiseConfig(covariance_limiter=limiter)
    poses, diag = ConstrainedKalmanFilter(tr.config.body, cfg).run(track, tr.config.initial_state, on_step=record)
    return tr, poses, diag, var, cond


def test_criterion_03_constraint_satisfaction():
    worst_len = worst_hinge = 0.0
    knee_lo, knee_hi = math.inf, -math.inf
    diags = [run_trial("straight", 0, noisy, 10.0, cadence=0.0)[2] for noisy in (False, True)]
    diags += [run_trial(p, s, noisy)[2] for p in PATHS for s in SEEDS for noisy in (False, True)]
    diags.append(long_walk(True)[2])
    for d in diags:
        worst_len = max(worst_len, np.abs(d.thigh_length_residual).max())
        worst_hinge = max(worst_hinge, np.abs(d.hinge_residual).max())
        knee_lo, knee_hi = min(knee_lo, d.knee_angle.min()), max(knee_hi, d.knee_angle.max())
    ok = worst_len <= 1e-3 and worst_hinge <= 1e-3 and knee_lo >= 0.0 and knee_hi <= math.pi
    report(3, ok, f"{len(diags)} trials: max |len| {worst_len:.1e} m, max hinge {worst_hinge:.1e}, "
                  f"knee [{math.degrees(knee_lo):.2f}, {math.degrees(knee_hi):.2f}] deg")


def test_criterion_04_noiseless_reconstruction():
    reps = [run_trial("straight", s, False)[3] for s in SEEDS]
    e_pos = max(r.e_pos for r in reps)
    e_ori = math.degrees(max(r.e_ori_unbiased for r in reps))
    cc = min(r.joint_angles[f"knee_{side}_sagittal"].cc for r in reps for side in ("left", "right"))
    report(4, e_pos <= 0.06 and e_ori <= 18 and cc >= 0.90,
           f"straight x{len(reps)}: max e_pos {100 * e_pos:.2f} cm, max unbiased e_ori {e_ori:.2f} deg, min knee CC {cc:.3f}")


def test_criterion_05_noise_robustness():
    deltas = [run_trial("straight", s, True)[3].e_pos - run_trial("straight", s, False)[3].e_pos for s in SEEDS]
    report(5, max(deltas) <= 0.03, f"max e_pos degradation {100 * max(deltas):.2f} cm over {len(deltas)} trials")


def test_criterion_06_covariance_limiter():
    _, _, _, var, cond = long_walk(True)
    ratio = (var[1000:] / var[999]).max(axis=0)
    envelope = (var[1000:].max(axis=0) / var[:1000].max(axis=0)).max()
    _, _, _, var_off, _ = long_walk(False)
    growth = (var_off[-1, :2] / var_off[999, :2]).min()  # pelvis x, y; z has its own pseudo-measurement
    ok = ratio.max() < 10 and cond.max() < 1e8 and growth >= 10
    report(6, ok, f"{len(var)} frames: max diag(P)/frame-1000 {ratio.max():.3g} (entry {int(ratio.argmax())}), "
                  f"vs first-1000-frame envelope {envelope:.3g}, max cond(P) {cond.max():.3g}; "
                  f"no limiter pelvis growth {growth:.3g}x")


def test_criterion_07_ttd():
    worst, where = 0.0, None
    for p in PATHS:
        for s in SEEDS:
            ttd = run_trial(p, s, True)[3].ttd_deviation
            for point in ("la", "ra"):
                if ttd[point] > worst:
                    worst, where = ttd[point], (p, s, point)
    report(7, worst <= 0.10, f"noisy trials x{len(PATHS) * len(SEEDS)}: max ankle TTD deviation {100 * worst:.2f}% at {where}")


TIMING = """
import time
from ckfgait.pipeline import estimate, synthesize
from ckfgait.synth import GaitParams
tr = synthesize(GaitParams(rng_seed=0, duration=10.0), 0.5, 0.0174533)
assert len(tr) == 1000
estimate(tr, tr.config)
best = []
for _ in range(3):
    t0 = time.perf_counter()
    estimate(tr, tr.config)
    best.append(time.perf_counter() - t0)
print(sorted(best)[1])
"""


def test_criterion_08_runtime():
    env = {**os.environ, "OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}
    out = subprocess.run([sys.executable, "-c", TIMING], capture_output=True, text=True, env=env, check=True)
    elapsed = float(out.stdout.split()[-1])
    report(8, elapsed < 1.0, f"1000-frame estimate incl. preprocessing, single thread: {elapsed:.3f} s (median of 3)")


def test_criterion_09_metrics_oracles(rng):
    worst = 0.0
    for _ in range(50):
        ref, est = random_track(rng), random_track(rng)
        cmp = TrialComparison(est, ref)
        a, b = rng.normal(size=(2, 40))
        ev = trial("straight", 1, 10.0).events
        long_ref, long_est = trial("straight", 1, 10.0).poses, trial("straight", 2, 10.0).poses
        got_ttd, want_ttd = ttd_deviation(long_est, long_ref, ev), naive_ttd(long_est, long_ref, ev)
        pairs = [
            (position_rmse(cmp), naive_position_rmse(est, ref)),
            (orientation_rmse(cmp), naive_orientation_rmse(est, ref)),
            (correlation_coefficient(a, b), naive_cc(a, b)),
        ] + [(got_ttd[k], want_ttd[k]) for k in want_ttd]
        worst = max(worst, max(abs(g - w) for g, w in pairs))
    z = a - a.mean()
    ones = (correlation_coefficient(a, a), correlation_coefficient(z, -z))
    ok = worst <= 1e-12 and ones[0] == pytest.approx(1.0, abs=1e-15) and ones[1] == pytest.approx(-1.0, abs=1e-15)
    report(9, ok, f"max deviation from naive metrics {worst:.1e}; CC(a,a)={ones[0]:.15f}, CC(z,-z)={ones[1]:.15f}")


def test_criterion_10_step_detection():
    worst_cov, worst_fp = 1.0, 0.0
    for p in PATHS:
        for s in SEEDS:
            for noisy in (False, True):
                tr = synthesize(GaitParams(path=p, rng_seed=s, duration=20.0),
                                ACCEL_NOISE if noisy else 0.0, ORI_NOISE if noisy else 0.0)
                _, ev = prepare(tr, tr.config)
                cov, fp = _coverage(ev, tr.events, len(tr))
                worst_cov, worst_fp = min(worst_cov, cov), max(worst_fp, fp)
    report(10, worst_cov >= 0.9 and worst_fp <= 0.05,
           f"{2 * len(PATHS) * len(SEEDS)} trials: min coverage {100 * worst_cov:.1f}%, max false positives {100 * worst_fp:.2f}%")


def test_criterion_11_yaw_calibration():
    step = math.radians(0.1)
    tr = trial("figure-eight", 5, 20.0)
    ref = tr.imu.accel_world[:, 1]
    noisy = corrupt(tr.imu, ACCEL_NOISE, 0.0, seed=9).accel_world[:, 1]
    worst = 0.0
    for deg in (5, -5, 20, -20, 90, -90):
        a = math.radians(deg)
        # the sensor series is the reference yawed by a; the search returns the correcting yaw
        psi = yaw_offset_search(ref, rotate_vector(quat_from_axis_angle([0.0, 0.0, 1.0], a), noisy), step)
        err = abs((psi + a + math.pi) % (2 * math.pi) - math.pi)
        worst = max(worst, err)
    report(11, worst <= step, f"offsets +-5/20/90 deg: max error {math.degrees(worst):.3f} deg (grid {math.degrees(step):.1f} deg)")


def test_criterion_12_determinism(tmp_path):
    args = ["pipeline", "--duration", "10", "--seed", "21", "--path", "zigzag", "--accel-noise", "0.5", "--ori-noise", "1"]
    for d in ("a", "b"):
        assert cli_main([*args, "--output", str(tmp_path / d)]) == 0
    files = {d: {p.relative_to(tmp_path / d): p.read_bytes() for p in sorted((tmp_path / d).rglob("*")) if p.is_file()}
             for d in ("a", "b")}
    same = files["a"] == files["b"]
    report(12, same and len(files["a"]) >= 7, f"{len(files['a'])} files compared, byte-identical: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
