"""Lower-body kinematics from three IMUs with a constrained Kalman filter."""

from .body import BodyDimensions, PoseSnapshot, PoseTrack, SegmentOrientations
from .ckf import ConstrainedKalmanFilter, NoiseConfig, sckf_project
from .errors import (
    CkfGaitError,
    DegenerateGeometryError,
    InfeasibleGaitError,
    NumericalFailureError,
    TrialFormatError,
    UndefinedMetricError,
)
from .io import RunConfig, TrialData, load_trial, save_trial
from .metrics import MetricReport, evaluate
from .preprocess import ImuFrame, ImuTrack, RawImuTrack, StepEvents, detect_steps, preprocess, yaw_offset_search
from .synth import GaitParams, generate_gait

__all__ = [
    "BodyDimensions",
    "CkfGaitError",
    "ConstrainedKalmanFilter",
    "DegenerateGeometryError",
    "GaitParams",
    "ImuFrame",
    "ImuTrack",
    "InfeasibleGaitError",
    "MetricReport",
    "NoiseConfig",
    "NumericalFailureError",
    "PoseSnapshot",
    "PoseTrack",
    "RawImuTrack",
    "RunConfig",
    "SegmentOrientations",
    "StepEvents",
    "TrialData",
    "TrialFormatError",
    "UndefinedMetricError",
    "detect_steps",
    "evaluate",
    "generate_gait",
    "load_trial",
    "preprocess",
    "save_trial",
    "sckf_project",
    "yaw_offset_search",
]
__version__ = "0.1.0"
