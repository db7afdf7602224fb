from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stages.moments import FeatureSeries
from stages.select import (
    Metric,
    RelevanceDistribution,
    SelectionMode,
    argmax_entropy_rate,
    discrepancy,
    entropy_rate,
    line_fit_discrepancy,
    nearness,
    select,
    select_argmax,
    select_features,
    selection_frame,
    selection_report,
    sort_probabilities,
)
from stages.synth import oracle_procedure1
from stages.trend import fit_trend, line_matrix
from stages.utils.constants import FEATURE_COUNT
from stages.utils.errors import ArityError, ShapeError, ValidationError


def test_single_differing_feature():
    u = np.zeros((5, 3))
    v = u.copy()
    v[:, 0] = 1.0
    assert discrepancy(u, v).tolist() == [1.0, 0.0, 0.0]


def test_discrepancy_normalises_distances():
    u = np.zeros((1, 3))
    v = np.array([[3.0, 1.0, -1.0]])
    np.testing.assert_allclose(discrepancy(u, v), [0.6, 0.2, 0.2], rtol=0.0, atol=1e-15)


def test_identical_runs_fall_back_to_uniform(caplog: pytest.LogCaptureFixture):
    u = np.arange(12.0).reshape(4, 3)
    with caplog.at_level(logging.WARNING, logger='stages.select'):
        d = discrepancy(u, u)
    np.testing.assert_array_equal(d, np.full(3, 1 / 3))
    assert 'uniform' in caplog.text


def test_discrepancy_shapes_must_match():
    with pytest.raises(ShapeError):
        discrepancy(np.zeros((4, 3)), np.zeros((5, 3)))


def test_diagonal_mahalanobis_divides_by_variances():
    u = np.zeros((1, 2))
    v = np.array([[2.0, 2.0]])
    d = discrepancy(u, v, Metric.mahalanobis_diag, variances=np.array([4.0, 1.0]))
    np.testing.assert_allclose(d, [1 / 3, 2 / 3], rtol=1e-15)

    with pytest.raises(ValidationError):
        discrepancy(u, v, Metric.mahalanobis_diag)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1), c=st.floats(min_value=0.01, max_value=100.0))
def test_discrepancy_is_scale_invariant(seed: int, c: float):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((10, 6)), rng.standard_normal((10, 6))
    np.testing.assert_allclose(discrepancy(c * u, c * v), discrepancy(u, v), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize(
    ('d', 'expected'),
    [((1.0, 0.0, 0.0), (0.0, 0.5, 0.5)), ((0.6, 0.2, 0.2), (0.2, 0.4, 0.4)), ((0.25,) * 4, (0.25,) * 4)],
)
def test_nearness(d: tuple[float, ...], expected: tuple[float, ...]):
    np.testing.assert_allclose(nearness(d), expected, rtol=0.0, atol=1e-15)


def test_nearness_needs_two_features():
    with pytest.raises(ArityError):
        nearness([1.0])
    with pytest.raises(ValidationError):
        nearness([0.5, 0.7])


def test_sort_probabilities():
    p, perm = sort_probabilities([0.2, 0.5, 0.3])
    assert p.tolist() == [0.5, 0.3, 0.2]
    assert perm.tolist() == [1, 2, 0]

    for already in ([0.25] * 4, [0.4, 0.3, 0.2, 0.1]):
        assert sort_probabilities(already)[1].tolist() == [0, 1, 2, 3]


@pytest.mark.parametrize(
    ('p', 'L', 'expected'),
    [((0.5, 0.5), 2, 0.5 * math.log(2)), ((1 / 3,) * 3, 3, math.log(3) / 3), ((1.0,), 1, 0.0), ((0.7, 0.3), 0, 0.0)],
)
def test_entropy_rate(p: tuple[float, ...], L: int, expected: float):
    assert entropy_rate(p, L) == pytest.approx(expected, abs=1e-12)


def test_entropy_rate_needs_positive_probabilities():
    with pytest.raises(ValidationError):
        entropy_rate([0.5, 0.5, 0.0], 3)


def renormalised(p: np.ndarray, L: int) -> np.ndarray:
    return p[:L] / p[:L].sum()


def test_entropy_rate_bound(rng: np.random.Generator):
    for _ in range(1000):
        n = int(rng.integers(2, FEATURE_COUNT + 1))
        p = np.sort(rng.dirichlet(np.full(n, rng.uniform(0.2, 5.0))))[::-1]
        p = np.maximum(p, 1e-300)
        for L in range(1, n + 1):
            assert entropy_rate(renormalised(p, L), L) <= math.log(L) / L + 1e-12

    for L in range(1, FEATURE_COUNT + 1):
        assert entropy_rate(np.full(L, 1 / L), L) == pytest.approx(math.log(L) / L, abs=1e-12)


def test_uniform_distribution_trims_to_two():
    relevance = select_features(np.full(4, 0.25))
    assert relevance.L_selected == 2
    assert relevance.selected.tolist() == [0, 1]
    np.testing.assert_array_equal(relevance.p_selected, [0.5, 0.5])
    assert [step.L for step in relevance.trace] == [4, 3, 2]
    assert [step.stopped for step in relevance.trace] == [False, False, True]
    assert oracle_procedure1([0.25] * 4)[0] == 2


def test_dominant_feature_stops_immediately():
    relevance = select_features([0.1, 0.7, 0.2])
    assert relevance.L_selected == 3
    assert relevance.selected.tolist() == [1, 2, 0]
    first = relevance.trace[0]
    assert first.retained_mean == pytest.approx(0.5 * (0.7 * math.log(0.7) + 0.2 * math.log(0.2)))
    assert first.retained_mean == pytest.approx(-0.2858, abs=1e-4)
    assert first.last_term == pytest.approx(-0.2303, abs=1e-4)
    assert first.stopped


def test_two_features_are_kept():
    assert select_features([0.9, 0.1]).L_selected == 2
    assert argmax_entropy_rate([0.9, 0.1]) == 2


@pytest.mark.parametrize('n', [4, 5, 11, 18])
def test_argmax_of_uniform_is_three(n: int):
    assert argmax_entropy_rate(np.full(n, 1 / n)) == 3
    assert select_argmax(np.full(n, 1 / n)).L_selected == 3


def test_argmax_matches_exhaustive_search():
    d_bar = np.array([0.1, 0.7, 0.2])
    p, _ = sort_probabilities(d_bar)
    rates = {L: entropy_rate(renormalised(p, L), L) for L in (2, 3)}
    assert argmax_entropy_rate(d_bar) == max(rates, key=rates.get)


def test_argmax_handles_zero_nearness():
    d = discrepancy(np.zeros((5, 3)), np.column_stack([np.ones(5), np.zeros(5), np.zeros(5)]))
    assert d.tolist() == [1.0, 0.0, 0.0]
    d_bar = nearness(d)
    assert d_bar.tolist() == [0.0, 0.5, 0.5]

    assert argmax_entropy_rate(d_bar) == 2
    relevance = select(d, SelectionMode.argmax)
    assert relevance.L_selected == 2
    assert relevance.selected.tolist() == [1, 2]
    np.testing.assert_allclose(relevance.p_selected, [0.5, 0.5])
    rates = {step.L: step.entropy_rate for step in relevance.trace}
    assert rates[2] == pytest.approx(math.log(2) / 2)
    assert rates[3] == pytest.approx(math.log(2) / 3)


def test_selection_matches_literal_trace(rng: np.random.Generator):
    for _ in range(1000):
        n = int(rng.integers(3, FEATURE_COUNT + 1))
        d_bar = rng.dirichlet(np.full(n, rng.uniform(0.3, 5.0)))
        relevance = select_features(d_bar)
        L, p_selected = oracle_procedure1(d_bar.tolist())

        assert relevance.L_selected == L
        np.testing.assert_allclose(relevance.p_selected, p_selected, rtol=0.0, atol=1e-12)
        for probabilities in (relevance.d_bar, relevance.p, relevance.p_selected):
            assert abs(probabilities.sum() - 1.0) <= 1e-12
        assert np.all(np.diff(relevance.p) <= 0)


def test_permuting_features_permutes_the_selection(rng: np.random.Generator):
    u, v = rng.standard_normal((20, 8)), rng.standard_normal((20, 8))
    order = rng.permutation(8)

    relevance = select(discrepancy(u, v))
    permuted = select(discrepancy(u[:, order], v[:, order]))

    np.testing.assert_allclose(permuted.d, relevance.d[order], rtol=1e-12)
    np.testing.assert_allclose(permuted.d_bar, relevance.d_bar[order], rtol=1e-12)
    assert permuted.L_selected == relevance.L_selected
    assert order[permuted.selected].tolist() == relevance.selected.tolist()


def test_line_fit_discrepancy_finds_the_noisy_feature(rng: np.random.Generator):
    k = np.arange(1, 21, dtype=np.float64)[:, None]
    clean = 0.2 * k * np.linspace(1, 2, FEATURE_COUNT) + 4.0
    noisy = clean.copy()
    noisy[:, 5] += rng.standard_normal(20)
    runs = [FeatureSeries(noisy), FeatureSeries(clean)]
    trend = fit_trend(runs)

    d = line_fit_discrepancy(runs, trend)
    assert int(np.argmax(d)) == 5
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(d >= 0)
    assert line_matrix(trend).shape == (20, FEATURE_COUNT)


def test_select_logs_and_reports(caplog: pytest.LogCaptureFixture):
    d = np.array([0.05, 0.3, 0.05, 0.6])
    with caplog.at_level(logging.INFO, logger='stages.select'):
        relevance = select(d)
    assert 'Selected' in caplog.text

    report = selection_report(relevance)
    assert report.startswith(f'Selected {relevance.L_selected} of 4 features by procedure1')
    assert 'f1' in report

    frame = selection_frame(relevance)
    assert frame.columns.tolist() == ['feature', 'name', 'd', 'd_bar', 'rank', 'selected']
    assert frame['selected'].sum() == relevance.L_selected
    assert sorted(frame['rank']) == [1, 2, 3, 4]


def test_argmax_mode_through_select():
    relevance = select(np.full(6, 1 / 6), SelectionMode.argmax)
    assert relevance.mode is SelectionMode.argmax
    assert relevance.L_selected == 3


def test_relevance_round_trip():
    relevance = select(np.array([0.1, 0.2, 0.3, 0.4]))
    restored = RelevanceDistribution.from_dict(relevance.to_dict())
    assert restored.to_dict() == relevance.to_dict()
    assert restored.trace == relevance.trace
