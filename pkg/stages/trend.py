"""Unit-variance normalisation and least-squares trend lines of training features."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple, Optional, Sequence

import numpy as np

from stages.moments import FeatureSeries
from stages.utils.constants import FEATURE_COUNT, FEATURE_NAMES
from stages.utils.errors import ArityError, DegenerateFeatureError, RangeError, ShapeError

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)


class LineFit(NamedTuple):
    slope: float
    intercept: float
    residual_variance: float


@dataclass(frozen=True, eq=False)
class TrendModel:
    """Per-feature normalisation scale and fitted line over ``k = 1..N``.

    Lines live in normalised units: ``x̄_{j,k} = slope_j * k + intercept_j``.
    """

    scales: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    residual_variances: np.ndarray
    N: int

    def __post_init__(self) -> None:
        for name in ('scales', 'slopes', 'intercepts', 'residual_variances'):
            if getattr(self, name).shape != (FEATURE_COUNT,):
                raise ShapeError(f'trend {name} must hold {FEATURE_COUNT} entries')
        if np.any(self.scales <= 0):
            raise ShapeError('normalisation scales must be positive')
        if np.any(self.residual_variances < 0):
            raise ShapeError('residual variances must be non-negative')

    @property
    def levels(self) -> np.ndarray:
        """Mean of each fitted line over ``k = 1..N`` in normalised units."""
        return self.slopes * (self.N + 1) / 2.0 + self.intercepts

    def to_records(self) -> list[dict[str, float | str]]:
        return [
            {
                'feature': FEATURE_NAMES[j],
                'scale': float(self.scales[j]),
                'slope': float(self.slopes[j]),
                'intercept': float(self.intercepts[j]),
                'residual_variance': float(self.residual_variances[j]),
            }
            for j in range(FEATURE_COUNT)
        ]

    @classmethod
    def from_records(cls, records: Sequence[dict], N: int) -> TrendModel:
        if len(records) != FEATURE_COUNT:
            raise ShapeError(f'a trend model holds {FEATURE_COUNT} feature records, got {len(records)}')

        def column(key: str) -> np.ndarray:
            return np.array([float(r[key]) for r in records], dtype=np.float64)

        return cls(column('scale'), column('slope'), column('intercept'), column('residual_variance'), int(N))


def _stack(series: Sequence[FeatureSeries] | FeatureSeries | np.ndarray) -> np.ndarray:
    if isinstance(series, FeatureSeries):
        return series.values
    if isinstance(series, np.ndarray):
        return series
    return np.vstack([s.values for s in series])


def fit_normalization(series: Sequence[FeatureSeries] | FeatureSeries | np.ndarray) -> np.ndarray:
    """Reciprocal standard deviation of each feature over all training rows.

    Several runs are merged row-wise before the statistics are taken.

    Raises
    ------
    DegenerateFeatureError
        A feature does not vary over the training rows.
    """
    values = _stack(series)
    if values.ndim == 1:
        values = values[:, None]

    std = values.std(axis=0)
    flat = np.flatnonzero(~(std > 0))
    if flat.size:
        j = int(flat[0])
        raise DegenerateFeatureError(FEATURE_NAMES[j] if values.shape[1] == FEATURE_COUNT else f'column {j}')
    return 1.0 / std


def normalize(series: FeatureSeries, scales: np.ndarray) -> FeatureSeries:
    return FeatureSeries(series.values * scales)


def fit_line(values: Sequence[float] | np.ndarray) -> LineFit:
    """Ordinary least squares of ``values`` against ``k = 1..N``.

    The residual variance is the population variance of the residuals.
    """
    y = np.asarray(values, dtype=np.float64)
    N = y.shape[0]
    if N < 2:
        raise ArityError(f'a line needs at least 2 points, got {N}')

    k = np.arange(1, N + 1, dtype=np.float64)
    k_mean = (N + 1) / 2.0
    dk = k - k_mean
    y_mean = y.mean()
    slope = float(np.dot(dk, y - y_mean) / np.dot(dk, dk))
    intercept = float(y_mean - slope * k_mean)
    residuals = y - (slope * k + intercept)
    return LineFit(slope, intercept, float(np.mean(residuals * residuals)))


def fit_trend(runs: Sequence[FeatureSeries], scales: Optional[np.ndarray] = None) -> TrendModel:
    """Fits one line per feature to the per-k mean of the normalised training runs.

    Residual variances pool every run's deviations from the fitted line.
    """
    if not runs:
        raise ArityError('at least one training run is needed')

    N = runs[0].N
    if any(run.N != N for run in runs):
        raise ShapeError('training runs must have the same number of subintervals')

    if scales is None:
        scales = fit_normalization(runs)

    normalized = np.stack([run.values * scales for run in runs])
    mean = normalized.mean(axis=0)

    slopes = np.empty(FEATURE_COUNT)
    intercepts = np.empty(FEATURE_COUNT)
    for j in range(FEATURE_COUNT):
        slopes[j], intercepts[j], _ = fit_line(mean[:, j])

    k = np.arange(1, N + 1, dtype=np.float64)[:, None]
    lines = slopes * k + intercepts
    residual_variances = ((normalized - lines) ** 2).mean(axis=(0, 1))

    return TrendModel(scales, slopes, intercepts, residual_variances, N)


def predict_line(trend: TrendModel, k: int, features: Optional[Sequence[int]] = None) -> np.ndarray:
    """Fitted values ``slope * k + intercept`` of the given 0-based features (all by default).

    Raises
    ------
    RangeError
        ``k`` is outside ``[1, N]``.
    """
    if not 1 <= k <= trend.N:
        raise RangeError(f'k={k} is outside [1, {trend.N}]')

    index = slice(None) if features is None else np.asarray(features, dtype=np.intp)
    return trend.slopes[index] * k + trend.intercepts[index]


def line_matrix(trend: TrendModel, features: Optional[Sequence[int]] = None) -> np.ndarray:
    """Fitted values for every ``k = 1..N`` as an ``N x len(features)`` matrix."""
    index = slice(None) if features is None else np.asarray(features, dtype=np.intp)
    k = np.arange(1, trend.N + 1, dtype=np.float64)[:, None]
    return trend.slopes[index] * k + trend.intercepts[index]
