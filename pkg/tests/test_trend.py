from __future__ import annotations

import numpy as np
import pytest

from stages.moments import FeatureSeries
from stages.trend import TrendModel, fit_line, fit_normalization, fit_trend, line_matrix, normalize, predict_line
from stages.utils.constants import FEATURE_COUNT
from stages.utils.errors import DegenerateFeatureError, RangeError, ShapeError


def series(rng: np.random.Generator, N: int = 12) -> FeatureSeries:
    k = np.arange(1, N + 1, dtype=np.float64)[:, None]
    return FeatureSeries(0.1 * k * np.arange(FEATURE_COUNT) + 3.0 + rng.standard_normal((N, FEATURE_COUNT)))


def test_scale_of_known_variance():
    column = np.array([-2.0, 2.0, -2.0, 2.0])
    scales = fit_normalization(column)
    assert scales.tolist() == [0.5]
    assert np.var(column * scales) == 1.0


def test_normalization_is_idempotent(rng: np.random.Generator):
    values = rng.standard_normal((40, FEATURE_COUNT)) * 3.0 + 1.0
    normalized = values * fit_normalization(values)
    np.testing.assert_allclose(fit_normalization(normalized), 1.0, rtol=0.0, atol=1e-12)


def test_merged_runs_have_unit_variance(rng: np.random.Generator):
    runs = [series(rng), series(rng)]
    scales = fit_normalization(runs)
    merged = np.vstack([normalize(run, scales).values for run in runs])
    np.testing.assert_allclose(merged.var(axis=0), 1.0, rtol=0.0, atol=1e-12)


def test_flat_feature_is_degenerate(rng: np.random.Generator):
    values = rng.standard_normal((10, FEATURE_COUNT))
    values[:, 4] = 2.5
    with pytest.raises(DegenerateFeatureError, match='skew_s1_a2'):
        fit_normalization(FeatureSeries(values))


def test_exact_line():
    k = np.arange(1, 11)
    fit = fit_line(2.0 * k + 1.0)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(1.0, abs=1e-12)
    assert fit.residual_variance == pytest.approx(0.0, abs=1e-20)


def test_constant_line():
    fit = fit_line(np.full(7, 4.25))
    assert fit.slope == 0.0
    assert fit.intercept == 4.25


def test_noisy_line_slope(rng: np.random.Generator):
    k = np.arange(1, 45)
    fit = fit_line(2.0 * k + 1.0 + rng.standard_normal(44))
    # the slope's standard error is about 0.0118 at N = 44
    assert fit.slope == pytest.approx(2.0, abs=0.15)


def test_least_squares_is_optimal(rng: np.random.Generator):
    k = np.arange(1, 31, dtype=np.float64)
    y = 0.7 * k - 4.0 + rng.standard_normal(30)
    fit = fit_line(y)

    def sse(slope: float, intercept: float) -> float:
        return float(np.sum((y - slope * k - intercept) ** 2))

    best = sse(fit.slope, fit.intercept)
    assert fit.residual_variance == pytest.approx(best / 30)
    for ds in (-1e-3, 0.0, 1e-3):
        for di in (-1e-3, 0.0, 1e-3):
            assert sse(fit.slope + ds, fit.intercept + di) >= best


def trend_model(N: int = 10) -> TrendModel:
    j = np.arange(FEATURE_COUNT, dtype=np.float64)
    return TrendModel(
        scales=np.ones(FEATURE_COUNT),
        slopes=np.where(j == 0, 2.0, 0.0),
        intercepts=np.where(j == 0, 1.0, 7.5),
        residual_variances=np.zeros(FEATURE_COUNT),
        N=N,
    )


def test_predict_line():
    trend = trend_model()
    assert predict_line(trend, 3, [0]).tolist() == [7.0]
    assert predict_line(trend, 9, [5, 6]).tolist() == [7.5, 7.5]
    assert predict_line(trend, 1).shape == (FEATURE_COUNT,)

    with pytest.raises(RangeError):
        predict_line(trend, 0)
    with pytest.raises(RangeError):
        predict_line(trend, 11)


def test_prediction_reproduces_exact_lines():
    k = np.arange(1, 16, dtype=np.float64)[:, None]
    values = 0.3 * k * np.linspace(1, 2, FEATURE_COUNT) + np.linspace(-1, 5, FEATURE_COUNT)
    exact = FeatureSeries(values)
    trend = fit_trend([exact, exact], np.ones(FEATURE_COUNT))

    for step in range(1, 16):
        np.testing.assert_allclose(predict_line(trend, step), values[step - 1], rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(trend.residual_variances, 0.0, atol=1e-20)


def test_lines_are_affine_in_k(rng: np.random.Generator):
    trend = fit_trend([series(rng), series(rng)])
    steps = np.diff(line_matrix(trend), axis=0)
    np.testing.assert_allclose(steps, np.broadcast_to(trend.slopes, steps.shape), rtol=0.0, atol=1e-12)


def test_trend_fits_the_mean_and_pools_residuals(rng: np.random.Generator):
    first, second = series(rng), series(rng)
    scales = fit_normalization([first, second])
    trend = fit_trend([first, second], scales)

    mean = (first.values * scales + second.values * scales) / 2
    for j in (0, 9, 17):
        fit = fit_line(mean[:, j])
        assert trend.slopes[j] == pytest.approx(fit.slope, rel=1e-12, abs=1e-12)
        assert trend.intercepts[j] == pytest.approx(fit.intercept, rel=1e-12, abs=1e-12)

    lines = line_matrix(trend)
    pooled = np.mean(np.concatenate([first.values * scales - lines, second.values * scales - lines]) ** 2, axis=0)
    np.testing.assert_allclose(trend.residual_variances, pooled, rtol=1e-12)
    assert trend.levels == pytest.approx(lines.mean(axis=0), rel=1e-12, abs=1e-12)


def test_runs_must_agree_on_length(rng: np.random.Generator):
    with pytest.raises(ShapeError):
        fit_trend([series(rng, 12), series(rng, 13)])


def test_trend_records_round_trip(rng: np.random.Generator):
    trend = fit_trend([series(rng), series(rng)])
    restored = TrendModel.from_records(trend.to_records(), trend.N)
    for name in ('scales', 'slopes', 'intercepts', 'residual_variances'):
        np.testing.assert_array_equal(getattr(restored, name), getattr(trend, name))
