"""End-to-end workflows shared by the command line and the tests."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .body import PoseTrack
from .ckf import ConstrainedKalmanFilter, StepDiagnostics, upright_state
from .io import RunConfig, TrialData
from .metrics import MetricReport, evaluate
from .preprocess import ImuTrack, StepEvents, preprocess
from .synth import GaitParams, corrupt, generate_gait, to_raw


def synthesize(
    params: GaitParams,
    accel_noise_sd: float = 0.0,
    ori_noise_sd: float = 0.0,
    base: RunConfig | None = None,
) -> TrialData:
    """Synthetic trial with raw sensor data, reference poses, true events and a matching config.

    Sensor noise is seeded from ``params.rng_seed`` so a seed fixes the whole
    trial. Body dimensions and the true initial state go into the config;
    everything else comes from ``base``.
    """
    truth = generate_gait(params)
    imu = truth.imu
    if accel_noise_sd > 0 or ori_noise_sd > 0:
        imu = corrupt(imu, accel_noise_sd, ori_noise_sd, seed=params.rng_seed + 1)
    base = base or RunConfig()
    cfg = replace(
        base,
        body=truth.dims,
        initial_state=tuple(float(v) for v in truth.x0),
        filter=replace(base.filter, dt=1.0 / params.sample_rate),
        sensor_offsets=((1.0, 0.0, 0.0, 0.0),) * 3,
    )
    return TrialData(to_raw(imu, np.asarray(cfg.gravity)), truth.poses, truth.events, cfg)


def prepare(trial: TrialData, cfg: RunConfig, events: StepEvents | None = None) -> tuple[ImuTrack, StepEvents]:
    """Filter inputs for a trial; step events are detected unless given."""
    sd = cfg.step_detection
    return preprocess(
        trial.raw,
        np.asarray(cfg.sensor_offsets),
        np.asarray(cfg.gravity),
        events,
        sd.window,
        sd.threshold,
    )


def estimate(
    trial: TrialData, cfg: RunConfig, events: StepEvents | None = None
) -> tuple[PoseTrack, StepDiagnostics, StepEvents]:
    track, used = prepare(trial, cfg, events)
    x0 = cfg.initial_state if cfg.initial_state is not None else upright_state(track.orientation[0], cfg.body)
    poses, diag = ConstrainedKalmanFilter(cfg.body, cfg.filter).run(track, x0, cfg.p0_scale)
    return poses, diag, used


def score(estimated: PoseTrack, reference: PoseTrack, events: StepEvents | None, cfg: RunConfig) -> MetricReport:
    m = cfg.metrics
    return evaluate(estimated, reference, events, hip_sequence=m.hip_sequence, remove_bias=m.remove_bias)
