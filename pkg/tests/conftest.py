import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import strategies as st

from ckfgait.synth import GaitParams, corrupt, generate_gait

ACCEL_NOISE = 0.5
ORI_NOISE = math.radians(1.0)


def unit_quats():
    """Hypothesis strategy for unit quaternions (w >= 0 not enforced)."""
    comp = st.floats(-1.0, 1.0, allow_nan=False)
    return (
        st.tuples(comp, comp, comp, comp)
        .filter(lambda v: sum(c * c for c in v) > 1e-2)
        .map(lambda v: np.array(v) / np.linalg.norm(v))
    )


def vectors(scale=10.0):
    comp = st.floats(-scale, scale, allow_nan=False)
    return st.tuples(comp, comp, comp).map(np.array)


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


@lru_cache(maxsize=None)
def trial(path="straight", seed=0, duration=30.0, **kw):
    """Cached ground-truth trial; treat as read-only."""
    return generate_gait(GaitParams(path=path, duration=duration, rng_seed=seed, **kw))


@lru_cache(maxsize=None)
def noisy_imu(path="straight", seed=0, duration=30.0):
    return corrupt(trial(path, seed, duration).imu, ACCEL_NOISE, ORI_NOISE, seed=seed + 100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
