"""Maximum-entropy-rate feature selection.

Features are ranked by how closely two training runs agree on them, the
nearness probabilities are sorted, and the trailing features are trimmed
while the entropy-rate test says the last one is irrelevant.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
import pandas as pd

from stages.moments import FeatureSeries
from stages.trend import TrendModel, line_matrix
from stages.utils.constants import FEATURE_NAMES, TRACE_LEVEL
from stages.utils.errors import ArityError, ShapeError, ValidationError
from stages.utils.formats import TabularData, human_join

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)

_SUM_TOLERANCE = 1e-9


class Metric(enum.Enum):
    """Distance measure between two feature trajectories."""

    euclidean = 'euclidean'
    mahalanobis_diag = 'mahalanobis-diag'


class SelectionMode(enum.Enum):
    """How the selected feature count is chosen."""

    procedure1 = 'procedure1'
    argmax = 'argmax'


class DiscrepancySource(enum.Enum):
    """What the per-feature discrepancies compare."""

    runs = 'runs'
    fit = 'fit'


@dataclass(frozen=True)
class SelectionStep:
    """One iteration of the trimming procedure."""

    L: int
    entropy_rate: float
    retained_mean: Optional[float]
    last_term: Optional[float]
    stopped: bool


@dataclass(frozen=True, eq=False)
class RelevanceDistribution:
    """Outcome of feature selection.

    ``perm`` maps sorted position ``i`` to the 0-based original feature index;
    the selected features are ``perm[:L_selected]``.
    """

    d: np.ndarray
    d_bar: np.ndarray
    perm: np.ndarray
    p: np.ndarray
    L_selected: int
    p_selected: np.ndarray
    mode: SelectionMode = SelectionMode.procedure1
    trace: tuple[SelectionStep, ...] = field(default=())

    def __post_init__(self) -> None:
        n = self.d_bar.shape[0]
        if not 2 <= self.L_selected <= n:
            raise ValidationError(f'selected feature count must lie in [2, {n}], got {self.L_selected}')
        if sorted(self.perm.tolist()) != list(range(n)):
            raise ValidationError('perm must be a permutation of the feature indices')
        if self.p_selected.shape != (self.L_selected,):
            raise ShapeError('p_selected must hold one weight per selected feature')

    @property
    def n(self) -> int:
        return int(self.d_bar.shape[0])

    @property
    def selected(self) -> np.ndarray:
        """0-based original indices of the selected features, most relevant first."""
        return self.perm[: self.L_selected]

    @property
    def selected_names(self) -> list[str]:
        return [feature_name(j, self.n) for j in self.selected]

    def to_dict(self) -> dict:
        return {
            'mode': self.mode.value,
            'd': self.d.tolist(),
            'd_bar': self.d_bar.tolist(),
            'perm': self.perm.tolist(),
            'p': self.p.tolist(),
            'L_selected': self.L_selected,
            'p_selected': self.p_selected.tolist(),
            'trace': [
                {
                    'L': step.L,
                    'entropy_rate': step.entropy_rate,
                    'retained_mean': step.retained_mean,
                    'last_term': step.last_term,
                    'stopped': step.stopped,
                }
                for step in self.trace
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> RelevanceDistribution:
        return cls(
            d=np.asarray(data['d'], dtype=np.float64),
            d_bar=np.asarray(data['d_bar'], dtype=np.float64),
            perm=np.asarray(data['perm'], dtype=np.intp),
            p=np.asarray(data['p'], dtype=np.float64),
            L_selected=int(data['L_selected']),
            p_selected=np.asarray(data['p_selected'], dtype=np.float64),
            mode=SelectionMode(data['mode']),
            trace=tuple(SelectionStep(**step) for step in data.get('trace', ())),
        )


def feature_name(j: int, n: int) -> str:
    return FEATURE_NAMES[j] if n == len(FEATURE_NAMES) else f'f{j + 1}'


def _values(series: FeatureSeries | np.ndarray) -> np.ndarray:
    return series.values if isinstance(series, FeatureSeries) else np.asarray(series, dtype=np.float64)


def _trajectory_distances(
    u: np.ndarray,
    v: np.ndarray,
    metric: Metric,
    variances: Optional[np.ndarray],
) -> np.ndarray:
    diff = u - v
    squared = np.sum(diff * diff, axis=0)
    if metric is Metric.mahalanobis_diag:
        if variances is None:
            raise ValidationError('the diagonal Mahalanobis metric needs per-feature variances')
        variances = np.asarray(variances, dtype=np.float64)
        if variances.shape != (u.shape[1],) or np.any(variances <= 0):
            raise ShapeError('Mahalanobis variances must be positive, one per feature')
        squared = squared / variances
    return np.sqrt(squared)


def _normalise_distances(distances: np.ndarray) -> np.ndarray:
    n = distances.shape[0]
    total = distances.sum()
    if not total > 0:
        log.warning('All %d per-feature distances are zero, falling back to a uniform discrepancy', n)
        return np.full(n, 1.0 / n)
    return distances / total


def discrepancy(
    u: FeatureSeries | np.ndarray,
    v: FeatureSeries | np.ndarray,
    metric: Metric = Metric.euclidean,
    *,
    variances: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Normalised per-feature distance between two runs' trajectories.

    ``d_j = D(u_j, v_j) / sum_k D(u_k, v_k)``, where ``u_j`` collects feature
    ``j`` over every subinterval. Identical runs give a uniform ``d``.

    ``variances`` are the per-feature variances the diagonal Mahalanobis
    metric divides by.
    """
    u_values, v_values = _values(u), _values(v)
    if u_values.shape != v_values.shape or u_values.ndim != 2:
        raise ShapeError(f'runs must have the same N x n shape, got {u_values.shape} and {v_values.shape}')

    return _normalise_distances(_trajectory_distances(u_values, v_values, metric, variances))


def line_fit_discrepancy(
    runs: Sequence[FeatureSeries],
    trend: TrendModel,
    metric: Metric = Metric.euclidean,
) -> np.ndarray:
    """Per-feature distance between the normalised runs and their fitted lines.

    Distances are pooled over the runs as the root of the summed squares.
    """
    if not runs:
        raise ArityError('at least one run is needed')

    lines = line_matrix(trend)
    variances = np.where(trend.residual_variances > 0, trend.residual_variances, 1.0)
    squared = np.zeros(lines.shape[1])
    for run in runs:
        if run.N != trend.N:
            raise ShapeError(f'run has {run.N} subintervals, the trend model {trend.N}')
        squared += _trajectory_distances(run.values * trend.scales, lines, metric, variances) ** 2

    return _normalise_distances(np.sqrt(squared))


def nearness(d: Sequence[float] | np.ndarray) -> np.ndarray:
    """Complement-normalised discrepancies ``(1 - d_j) / sum_k (1 - d_k)``.

    Raises
    ------
    ArityError
        Fewer than two features, where the denominator vanishes.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.shape[0] < 2:
        raise ArityError('nearness probabilities need at least two features')
    if np.any(d < 0) or abs(d.sum() - 1.0) > _SUM_TOLERANCE:
        raise ValidationError('d must be a probability vector')

    complement = 1.0 - d
    return complement / complement.sum()


def sort_probabilities(d_bar: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorts into non-increasing order, ties kept in ascending original index.

    Returns ``(p, perm)`` with ``p[i] == d_bar[perm[i]]``.
    """
    d_bar = np.asarray(d_bar, dtype=np.float64)
    perm = np.argsort(-d_bar, kind='stable')
    return d_bar[perm], perm


def entropy_rate(p: Sequence[float] | np.ndarray, L: int) -> float:
    """Average per-feature entropy ``-(1/L) sum_{i<=L} p_i ln p_i``; zero for an empty prefix.

    Raises
    ------
    ValidationError
        A probability in the prefix is not in ``(0, 1]`` or ``L`` exceeds ``len(p)``.
    """
    p = np.asarray(p, dtype=np.float64)
    if L == 0:
        return 0.0
    if not 1 <= L <= p.shape[0]:
        raise ArityError(f'L={L} must lie in [1, {p.shape[0]}]')

    prefix = p[:L]
    if np.any(prefix <= 0) or np.any(prefix > 1):
        raise ValidationError('entropy needs probabilities in (0, 1]')
    return float(-np.sum(prefix * np.log(prefix)) / L)


def _plogp(p: np.ndarray) -> np.ndarray:
    """Elementwise p ln p with 0 ln 0 = 0."""
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe), 0.0)


def _renormalised_prefix(sorted_d_bar: np.ndarray, L: int) -> np.ndarray:
    prefix = sorted_d_bar[:L]
    return prefix / prefix.sum()


def _prefix_entropy_rate(sorted_d_bar: np.ndarray, L: int) -> float:
    # zero nearness is a valid probability here, 0 ln 0 = 0
    return float(-np.sum(_plogp(_renormalised_prefix(sorted_d_bar, L))) / L)


def select_features(d_bar: Sequence[float] | np.ndarray, *, d: Optional[np.ndarray] = None) -> RelevanceDistribution:
    """Trims the sorted probabilities until the entropy-rate test stops.

    Starting from ``L = n``, the iteration stops at ``L = 2`` or when the mean
    of ``p_i ln p_i`` over the first ``L - 1`` entries is strictly below
    ``p_L ln p_L``. Otherwise ``L`` is decremented and ``p`` becomes the
    renormalised top-``L`` prefix of the sorted nearness probabilities.
    """
    d_bar = np.asarray(d_bar, dtype=np.float64)
    n = d_bar.shape[0]
    if n < 2:
        raise ArityError('selection needs at least two features')

    sorted_d_bar, perm = sort_probabilities(d_bar)
    p = sorted_d_bar.copy()
    L = n
    trace: list[SelectionStep] = []
    while True:
        terms = _plogp(p)
        H = float(-np.sum(terms[:L]) / L)
        if L == 2:
            trace.append(SelectionStep(L, H, None, None, True))
            break

        retained_mean = float(np.sum(terms[: L - 1]) / (L - 1))
        last_term = float(terms[L - 1])
        # summed differences stay exactly zero on ties, a rounded mean may not
        stop = float(np.sum(terms[: L - 1] - last_term)) < 0
        trace.append(SelectionStep(L, H, retained_mean, last_term, stop))
        log.log(TRACE_LEVEL, 'L=%d H=%.6f retained=%.6f last=%.6f stop=%s', L, H, retained_mean, last_term, stop)
        if stop:
            break

        L -= 1
        p = _renormalised_prefix(sorted_d_bar, L)

    return RelevanceDistribution(
        d=np.full(n, np.nan) if d is None else np.asarray(d, dtype=np.float64),
        d_bar=d_bar,
        perm=perm,
        p=sorted_d_bar,
        L_selected=L,
        p_selected=p[:L].copy(),
        mode=SelectionMode.procedure1,
        trace=tuple(trace),
    )


def argmax_entropy_rate(d_bar: Sequence[float] | np.ndarray) -> int:
    """The ``L`` in ``[2, n]`` whose renormalised top-``L`` prefix has the largest entropy rate.

    The smallest ``L`` wins ties; zero probabilities contribute ``0 ln 0 = 0``.
    """
    d_bar = np.asarray(d_bar, dtype=np.float64)
    n = d_bar.shape[0]
    if n < 2:
        raise ArityError('selection needs at least two features')

    sorted_d_bar, _ = sort_probabilities(d_bar)
    best_L, best_H = 2, -math.inf
    for L in range(2, n + 1):
        H = _prefix_entropy_rate(sorted_d_bar, L)
        if H > best_H:
            best_L, best_H = L, H
    return best_L


def select_argmax(d_bar: Sequence[float] | np.ndarray, *, d: Optional[np.ndarray] = None) -> RelevanceDistribution:
    """Selection by direct maximisation of the entropy rate."""
    d_bar = np.asarray(d_bar, dtype=np.float64)
    sorted_d_bar, perm = sort_probabilities(d_bar)
    n = d_bar.shape[0]
    L = argmax_entropy_rate(d_bar)
    trace = tuple(
        SelectionStep(size, _prefix_entropy_rate(sorted_d_bar, size), None, None, size == L)
        for size in range(n, 1, -1)
    )
    return RelevanceDistribution(
        d=np.full(n, np.nan) if d is None else np.asarray(d, dtype=np.float64),
        d_bar=d_bar,
        perm=perm,
        p=sorted_d_bar,
        L_selected=L,
        p_selected=_renormalised_prefix(sorted_d_bar, L),
        mode=SelectionMode.argmax,
        trace=trace,
    )


def select(
    d: np.ndarray,
    mode: SelectionMode = SelectionMode.procedure1,
) -> RelevanceDistribution:
    """Nearness, sorting and selection from a discrepancy vector."""
    d_bar = nearness(d)
    if mode is SelectionMode.argmax:
        relevance = select_argmax(d_bar, d=d)
    else:
        relevance = select_features(d_bar, d=d)

    log.info(
        'Selected %d of %d features (%s): %s',
        relevance.L_selected, relevance.n, mode.value, human_join(relevance.selected_names),
    )
    return relevance


def selection_frame(relevance: RelevanceDistribution) -> pd.DataFrame:
    """Per-feature selection report in original feature order."""
    rank = np.empty(relevance.n, dtype=np.intp)
    rank[relevance.perm] = np.arange(1, relevance.n + 1)
    return pd.DataFrame({
        'feature': np.arange(1, relevance.n + 1),
        'name': [feature_name(j, relevance.n) for j in range(relevance.n)],
        'd': relevance.d,
        'd_bar': relevance.d_bar,
        'rank': rank,
        'selected': rank <= relevance.L_selected,
    })


def selection_report(relevance: RelevanceDistribution) -> str:
    """Renders the selection report and the entropy-rate trace as tables."""
    table = TabularData()
    table.set_columns(['#', 'Feature', 'd_j', 'd̄_j', 'Rank', 'Selected'])
    frame = selection_frame(relevance).sort_values('rank')
    for row in frame.itertuples(index=False):
        table.add_row([row.feature, row.name, f'{row.d:.6f}', f'{row.d_bar:.6f}', row.rank, 'yes' if row.selected else ''])

    trace = TabularData()
    trace.set_columns(['L', 'H_L', 'mean p ln p (L-1)', 'p_L ln p_L', 'Stop'])
    for step in relevance.trace:
        trace.add_row([
            step.L,
            f'{step.entropy_rate:.6f}',
            '' if step.retained_mean is None else f'{step.retained_mean:.6f}',
            '' if step.last_term is None else f'{step.last_term:.6f}',
            'yes' if step.stopped else '',
        ])

    header = (
        f'Selected {relevance.L_selected} of {relevance.n} features by {relevance.mode.value}: '
        f'{human_join(relevance.selected_names)}'
    )
    return '\n'.join([header, '', table.render(), '', trace.render()])
