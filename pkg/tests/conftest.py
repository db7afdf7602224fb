from __future__ import annotations

import numpy as np
import pytest

import pipeline
from stages.classify import TrainedModel
from stages.ingest import RunnerProfile
from stages.moments import FeatureSeries
from stages.synth import SynthSpec, generate_feature_series
from stages.utils.constants import FEATURE_COUNT

EPOCH = '1700000000'


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240917)


@pytest.fixture
def source_date_epoch(monkeypatch: pytest.MonkeyPatch) -> str:
    monkeypatch.setenv('SOURCE_DATE_EPOCH', EPOCH)
    return EPOCH


def exact_spec(N: int = 20, runs: int = 2) -> SynthSpec:
    """Noise-free runs whose every feature trends with its own non-zero slope."""
    j = np.arange(FEATURE_COUNT, dtype=np.float64)
    return SynthSpec(
        N=N,
        slopes=0.05 + 0.01 * j,
        intercepts=5.0 + j,
        noise_std=np.zeros(FEATURE_COUNT),
        speeds=np.linspace(3.6, 3.0, N),
        runs=runs,
    )


@pytest.fixture(scope='session')
def exact_model() -> tuple[TrainedModel, FeatureSeries]:
    """A model trained on two identical noise-free runs, and a third such run."""
    spec = exact_spec()
    series = [generate_feature_series(spec, run) for run in range(spec.runs)]
    profile = RunnerProfile(spec.mass, spec.subinterval_distance, spec.N)
    return pipeline.build_model(series, profile, spec.speeds), generate_feature_series(spec, spec.runs)


@pytest.fixture(scope='session')
def reference_model() -> tuple[TrainedModel, FeatureSeries]:
    return pipeline.reference_model(44)
