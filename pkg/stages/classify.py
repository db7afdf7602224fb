"""Weighted minimum-distance classification of subinterval indices.

Observations of the selected features are compared against the fitted
training lines; the index of the nearest line point (or window of
consecutive points when a measurement lag is used) is the estimate.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from stages.filtering import FeatureFilter, FilterParams
from stages.ingest import RunnerProfile
from stages.moments import FeatureSeries
from stages.select import Metric, RelevanceDistribution
from stages.trend import TrendModel, line_matrix
from stages.utils.constants import CSV_FLOAT_FORMAT, DEFAULT_LAGS, RMS_CONVENTION
from stages.utils.errors import ArityError, LagError, NumericalError, RangeError, ShapeError, ValidationError
from stages.utils.formats import TabularData, percent

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Everything the on-line classifier needs from training.

    ``filter_params`` holds one entry per selected feature, in selection
    order; ``None`` marks a feature whose observations are used unfiltered.
    """

    profile: RunnerProfile
    trend: TrendModel
    relevance: RelevanceDistribution
    filter_params: tuple[Optional[FilterParams], ...]
    speeds: np.ndarray
    metric: Metric = Metric.euclidean
    templates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        selected = self.relevance.selected
        if self.relevance.L_selected > self.relevance.n or len(set(selected.tolist())) != len(selected):
            raise ValidationError('selected feature indices must be distinct')
        if len(self.filter_params) != self.relevance.L_selected:
            raise ShapeError('one filter parameter record is needed per selected feature')
        if self.speeds.shape != (self.N,) or np.any(self.speeds <= 0):
            raise ValidationError(f'speeds must hold {self.N} positive values')
        if self.profile.segment_count != self.N:
            raise ValidationError('profile segment count and trend model disagree')

        object.__setattr__(self, 'templates', line_matrix(self.trend, selected))

    @property
    def N(self) -> int:
        return self.trend.N

    @property
    def selected(self) -> np.ndarray:
        return self.relevance.selected

    @property
    def weights(self) -> np.ndarray:
        return self.relevance.p_selected

    @property
    def weight_scales(self) -> np.ndarray:
        """Per-feature factors the weighted distance multiplies differences by."""
        if self.metric is Metric.mahalanobis_diag:
            variances = self.trend.residual_variances[self.selected]
            return self.weights / np.sqrt(np.where(variances > 0, variances, 1.0))
        return self.weights

    def make_filters(self, first: np.ndarray) -> list[Optional[FeatureFilter]]:
        """Fresh per-feature filter states for one run, started at the first observation."""
        filters: list[Optional[FeatureFilter]] = []
        for params, x0 in zip(self.filter_params, first):
            filters.append(None if params is None else FeatureFilter(params, x0=float(x0)))
        return filters


@dataclass(frozen=True, eq=False)
class ClassificationResult:
    """Per-step estimates of one run."""

    k_hat: np.ndarray
    distance_m: np.ndarray
    energy_J: np.ndarray
    fatigue_pct: np.ndarray
    lag: int
    k_true: Optional[np.ndarray] = None
    rms_error_pct: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({'step': np.arange(1, self.k_hat.shape[0] + 1)})
        if self.k_true is not None:
            frame['k_true'] = self.k_true
        frame['k_hat'] = self.k_hat
        frame['distance_m'] = self.distance_m
        frame['energy_J'] = self.energy_J
        frame['fatigue_pct'] = self.fatigue_pct
        return frame

    def write_csv(self, path: str | os.PathLike[str]) -> None:
        self.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def _weighted_distances(window: np.ndarray, templates: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Root of summed squared weighted differences for every candidate end index.

    ``window`` is ``(lag + 1) x L``; entry ``i`` of the result belongs to the
    candidate ``k = lag + 1 + i``.
    """
    rows = window.shape[0]
    blocks = sliding_window_view(templates, rows, axis=0)
    # blocks: (N - lag) x L x (lag + 1)
    diff = (window.T[None, :, :] - blocks) * scales[None, :, None]
    return np.sqrt(np.sum(diff * diff, axis=(1, 2)))


def _check_observation(x: np.ndarray, model: TrainedModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.relevance.L_selected:
        raise ShapeError(f'observations hold {x.shape[-1]} features, the model selected {model.relevance.L_selected}')
    return x


def classify_single(x: Sequence[float] | np.ndarray, model: TrainedModel) -> int:
    """Index ``k`` in ``[1, N]`` whose fitted point is nearest to ``x`` under the weights.

    ``x`` holds the filtered, normalised selected features. The smallest ``k``
    wins exact ties.
    """
    x = _check_observation(x, model)
    if x.ndim != 1:
        raise ShapeError('classify_single takes one observation vector')
    distances = _weighted_distances(x[None, :], model.templates, model.weight_scales)
    return int(np.argmin(distances)) + 1


def classify_lagged(window: Sequence[Sequence[float]] | np.ndarray, model: TrainedModel, lag: int) -> int:
    """Index ``k`` in ``[lag + 1, N]`` whose fitted window ``k - lag .. k`` is nearest.

    ``window`` holds the last ``lag + 1`` observations, oldest first.

    Raises
    ------
    LagError
        ``lag`` is negative or not below ``N``.
    """
    if not 0 <= lag < model.N:
        raise LagError(f'lag {lag} must lie in [0, {model.N - 1}]')

    window = _check_observation(window, model)
    if window.ndim != 2 or window.shape[0] != lag + 1:
        raise ShapeError(f'a lag-{lag} window holds {lag + 1} observations')

    distances = _weighted_distances(window, model.templates, model.weight_scales)
    return int(np.argmin(distances)) + lag + 1


def rms_index_error(k_hat: Sequence[int] | np.ndarray, truth: Sequence[int] | np.ndarray, N: int) -> float:
    """``100 * sqrt(mean((k_hat - k)^2)) / N``."""
    k_hat = np.asarray(k_hat, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if k_hat.shape[0] == 0:
        raise ArityError('RMS error of an empty series is undefined')
    if k_hat.shape != truth.shape:
        raise ShapeError(f'{k_hat.shape[0]} estimates but {truth.shape[0]} true indices')

    diff = k_hat - truth
    return float(100.0 * math.sqrt(np.mean(diff * diff)) / N)


def _check_k(k: int, speeds: np.ndarray) -> None:
    if not 1 <= k <= speeds.shape[0]:
        raise RangeError(f'k={k} is outside [1, {speeds.shape[0]}]')


def _fatigue_curve(speeds: np.ndarray) -> np.ndarray:
    # mass cancels, so the ratio is taken on the running sum of v^2 alone
    accumulated = np.cumsum(speeds * speeds)
    if not accumulated[-1] > 0:
        raise NumericalError('total kinetic energy is zero, the fatigue index is undefined')
    return 100.0 * (accumulated / accumulated[-1])


def kinetic_energy(profile: RunnerProfile, speeds: Sequence[float] | np.ndarray, k: int) -> float:
    """Accumulated kinetic energy ``sum_{i<=k} 0.5 m v_i^2`` in joules."""
    speeds = np.asarray(speeds, dtype=np.float64)
    _check_k(k, speeds)
    return float(0.5 * profile.mass * np.cumsum(speeds * speeds)[k - 1])


def fatigue_index(profile: RunnerProfile, speeds: Sequence[float] | np.ndarray, k: int) -> float:
    """Share of the run's total kinetic energy expended by subinterval ``k``, in percent.

    Raises
    ------
    NumericalError
        The run's total energy is zero.
    """
    speeds = np.asarray(speeds, dtype=np.float64)
    _check_k(k, speeds)
    return float(_fatigue_curve(speeds)[k - 1])


def energy_curve(profile: RunnerProfile, speeds: Sequence[float] | np.ndarray) -> pd.DataFrame:
    """Accumulated energy and fatigue index for every ``k``."""
    speeds = np.asarray(speeds, dtype=np.float64)
    fatigue = _fatigue_curve(speeds)
    k = np.arange(1, speeds.shape[0] + 1)
    return pd.DataFrame({
        'k': k,
        'speed_mps': speeds,
        'distance_m': k * profile.subinterval_distance,
        'energy_J': 0.5 * profile.mass * np.cumsum(speeds * speeds),
        'fatigue_pct': fatigue,
    })


def prepare_observations(model: TrainedModel, series: FeatureSeries) -> np.ndarray:
    """Runs the on-line front end over a whole run.

    The selected raw features are filtered around the training level with
    per-feature streaming filters, then normalised with the training scales.
    """
    selected = model.selected
    scales = model.trend.scales[selected]
    levels = model.trend.levels[selected] / scales
    raw = series.values[:, selected] - levels

    filters = model.make_filters(raw[0])
    filtered = np.empty_like(raw)
    for step, row in enumerate(raw):
        for j, (state, value) in enumerate(zip(filters, row)):
            filtered[step, j] = value if state is None else state.update(float(value))

    return (filtered + levels) * scales


def classify_observations(observations: np.ndarray, model: TrainedModel, lag: int) -> np.ndarray:
    """Estimates for every step; the first ``lag`` steps use the longest window available."""
    if not 0 <= lag < model.N:
        raise LagError(f'lag {lag} must lie in [0, {model.N - 1}]')

    k_hat = np.empty(observations.shape[0], dtype=np.int64)
    for step in range(observations.shape[0]):
        effective = min(lag, step)
        window = observations[step - effective: step + 1]
        k_hat[step] = classify_lagged(window, model, effective)
    return k_hat


def classify_run(
    model: TrainedModel,
    series: FeatureSeries,
    lag: int,
    truth: Optional[Sequence[int] | np.ndarray] = None,
) -> ClassificationResult:
    """Classifies every subinterval observation of a run and maps the estimates to energy."""
    observations = prepare_observations(model, series)
    k_hat = classify_observations(observations, model, lag)

    energy = 0.5 * model.profile.mass * np.cumsum(model.speeds * model.speeds)
    fatigue = _fatigue_curve(model.speeds)
    idx = k_hat - 1
    k_true = None if truth is None else np.asarray(truth, dtype=np.int64)
    rms = None if k_true is None else rms_index_error(k_hat, k_true, model.N)

    if rms is not None:
        log.info('Lag %d RMS index error %s', lag, percent(rms))

    return ClassificationResult(
        k_hat=k_hat,
        distance_m=k_hat * model.profile.subinterval_distance,
        energy_J=energy[idx],
        fatigue_pct=fatigue[idx],
        lag=lag,
        k_true=k_true,
        rms_error_pct=rms,
    )


def lag_sweep(
    model: TrainedModel,
    series: FeatureSeries,
    truth: Sequence[int] | np.ndarray,
    lags: Sequence[int] = DEFAULT_LAGS,
) -> dict[int, float]:
    """RMS index error of the same run for each lag."""
    observations = prepare_observations(model, series)
    return {
        lag: rms_index_error(classify_observations(observations, model, lag), truth, model.N)
        for lag in lags
    }


def lag_table(rows: Mapping[str, Mapping[int, float]], lags: Sequence[int] = DEFAULT_LAGS) -> str:
    """Renders RMS errors per run and lag with a final mean row."""
    table = TabularData()
    table.set_columns(['Run', *(f'Lag {lag}' for lag in lags)])
    table.add_rows([name, *(percent(errors.get(lag)) for lag in lags)] for name, errors in rows.items())

    if len(rows) > 1:
        means = [float(np.mean([errors[lag] for errors in rows.values()])) for lag in lags]
        table.add_row(['Mean', *(percent(m) for m in means)])

    return f'{table.render()}\n{RMS_CONVENTION}'


def lag_frame(rows: Mapping[str, Mapping[int, float]], lags: Sequence[int] = DEFAULT_LAGS) -> pd.DataFrame:
    return pd.DataFrame(
        [[name, *(errors.get(lag) for lag in lags)] for name, errors in rows.items()],
        columns=['run', *(f'lag_{lag}' for lag in lags)],
    )
