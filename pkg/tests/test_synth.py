from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from stages.ingest import write_stream
from stages.moments import feature_series
from stages.synth import (
    OutputFormat,
    SynthSpec,
    consistent_trend_spec,
    generate_feature_series,
    generate_labeled_run,
    generate_raw_run,
    oracle_moments,
    oracle_procedure1,
    oracle_riccati,
    reference_runners,
    with_seed,
)
from stages.utils.constants import FEATURE_COUNT, RUNNER_PRESETS
from stages.utils.errors import ConfigError, OracleFailure


def test_feature_series_is_deterministic():
    spec = SynthSpec.from_mapping({'segments': 10, 'seed': 7})
    first = generate_feature_series(spec, 1)
    np.testing.assert_array_equal(first.values, generate_feature_series(spec, 1).values)
    assert not np.array_equal(first.values, generate_feature_series(spec, 2).values)
    assert not np.array_equal(first.values, generate_feature_series(with_seed(spec, 8), 1).values)


def test_noise_free_series_follow_their_lines():
    spec = SynthSpec.from_mapping({'segments': 12, 'slopes': 0.5, 'intercepts': 2.0, 'noise_std': 0.0})
    series, truth = generate_labeled_run(spec)
    k = np.arange(1, 13, dtype=np.float64)
    np.testing.assert_allclose(series.values, np.broadcast_to((0.5 * k + 2.0)[:, None], (12, FEATURE_COUNT)))
    assert truth.tolist() == list(range(1, 13))


def test_noise_has_the_requested_spread():
    spec = SynthSpec.from_mapping({'segments': 2000, 'noise_std': 0.5, 'intercepts': 0.0})
    values = generate_feature_series(spec).values
    assert values.std() == pytest.approx(0.5, rel=0.02)
    assert abs(values.mean()) < 0.02


def test_raw_run_is_deterministic(tmp_path: Path):
    spec = SynthSpec.from_mapping({'segments': 4, 'output': 'raw', 'sample_noise': 0.05, 'seed': 3})
    for name in ('first', 'second'):
        knee, _, _ = generate_raw_run(spec, 0)
        write_stream(knee, tmp_path / f'{name}.csv')
    assert (tmp_path / 'first.csv').read_bytes() == (tmp_path / 'second.csv').read_bytes()


def test_raw_run_segments_tile_the_recording():
    spec = SynthSpec.from_mapping({'segments': 5, 'output': 'raw', 'noise_std': 0.0})
    knee, ankle, segments = generate_raw_run(spec)
    assert len(knee) == len(ankle)
    assert segments[0].knee[0] == 0
    assert segments[-1].knee[1] == len(knee)
    assert [s.k for s in segments] == [1, 2, 3, 4, 5]
    np.testing.assert_allclose([s.duration for s in segments], spec.durations)


def test_raw_variances_hit_their_targets():
    intercepts = np.linspace(1.0, 3.0, FEATURE_COUNT)
    spec = SynthSpec.from_mapping({'segments': 3, 'output': 'raw', 'noise_std': 0.0, 'intercepts': intercepts.tolist()})
    knee, ankle, segments = generate_raw_run(spec)
    series = feature_series(segments, knee, ankle)
    for j in (0, 1, 2, 9, 10, 11):
        np.testing.assert_allclose(series.column(j), intercepts[j], rtol=1e-9)


def test_spec_mapping():
    spec = SynthSpec.from_mapping({'segments': 6, 'speeds': {'start': 4.0, 'end': 3.0}, 'output': 'raw'})
    assert spec.N == 6
    assert spec.output is OutputFormat.raw
    assert spec.speeds[0] == 4.0
    assert spec.speeds[-1] == 3.0

    restored = SynthSpec.from_mapping(spec.to_mapping())
    assert restored.to_mapping() == spec.to_mapping()


def test_spec_loads_from_file(tmp_path: Path):
    path = tmp_path / 'spec.json'
    path.write_text(json.dumps({'segments': 8, 'noise_std': 0.25}), encoding='utf-8')
    spec = SynthSpec.load(path)
    assert spec.N == 8
    np.testing.assert_array_equal(spec.noise_std, np.full(FEATURE_COUNT, 0.25))


@pytest.mark.parametrize(
    'mapping',
    [
        {'segment': 10},
        {'segments': 1},
        {'slopes': [1.0, 2.0]},
        {'noise_std': -1.0},
        {'segments': 3, 'speeds': [3.0, 0.0, 3.0]},
        {'output': 'video'},
        {'segments': 'many'},
    ],
)
def test_invalid_specs(mapping: dict):
    with pytest.raises(ConfigError):
        SynthSpec.from_mapping(mapping)


def test_consistent_trend_spec():
    spec = consistent_trend_spec(trend_features=(1, 4), slope=0.3, trend_noise=0.1, background_noise=2.0, N=10)
    assert np.flatnonzero(spec.slopes).tolist() == [1, 4]
    assert spec.noise_std[1] == 0.1
    assert spec.noise_std[0] == 2.0


def test_reference_runners_use_preset_masses():
    runners = reference_runners(44)
    assert [runner.name for runner in runners] == ['runner1', 'runner2', 'runner3']
    for runner in runners:
        assert runner.spec.mass == RUNNER_PRESETS[runner.name]['mass']
        assert runner.spec.N == 44
        assert np.count_nonzero(runner.spec.slopes) == 3
    assert len({runner.spec.seed for runner in runners}) == 3


def test_oracles():
    assert oracle_moments([0, 0, 2, 2]) == (1.0, 0.0, 1.0)
    assert oracle_riccati(0.0, 1.0, 1.0) == pytest.approx(1.0)
    assert oracle_procedure1([0.25] * 4) == (2, [0.5, 0.5])
    assert oracle_procedure1([0.1, 0.7, 0.2])[0] == 3

    with pytest.raises(OracleFailure):
        oracle_moments([1.0, 1.0])
