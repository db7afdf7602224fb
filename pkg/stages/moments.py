"""Per-segment statistical moments and the 18-element candidate feature vector."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.stats import kurtosis, skew

from stages.ingest import SampleStream, Segment, Sensor, read_table
from stages.utils.constants import (
    AXIS_COUNT,
    CSV_FLOAT_FORMAT,
    FEATURE_COUNT,
    FEATURE_NAMES,
    KURTOSIS_POSITIONS,
    MIN_SEGMENT_FRAMES,
    VARIANCE_POSITIONS,
)
from stages.utils.errors import (
    ArityError,
    DegenerateSignalError,
    InputError,
    ParseError,
    ShapeError,
    SparsityError,
    ValidationError,
)
from stages.utils.formats import plural

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)

_RESOLUTION = np.finfo(np.float64).resolution


class Moments(NamedTuple):
    variance: float
    skewness: float
    kurtosis: float


def sample_moments(samples: Sequence[float] | np.ndarray) -> Moments:
    """Population variance, skewness and kurtosis (divide-by-n).

    Skewness and kurtosis are the biased estimators of :mod:`scipy.stats`;
    the kurtosis is the plain fourth standardised moment, 3 for a normal signal.

    Raises
    ------
    SparsityError
        Fewer than eight samples.
    DegenerateSignalError
        The samples are constant.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError('moments need a one-dimensional sample sequence')
    if x.shape[0] < MIN_SEGMENT_FRAMES:
        raise SparsityError(f'moments need at least {MIN_SEGMENT_FRAMES} samples, got {x.shape[0]}')
    if not np.all(np.isfinite(x)):
        raise ValidationError('moments need finite samples')

    mean = x.mean()
    dev = x - mean
    m2 = np.mean(dev * dev)
    # rounding of the mean leaves O(resolution * |mean|) deviations on constant input
    if m2 <= (_RESOLUTION * abs(mean)) ** 2:
        raise DegenerateSignalError()

    return Moments(float(m2), float(skew(x, bias=True)), float(kurtosis(x, fisher=False, bias=True)))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """The 18 moment features of subinterval ``k``.

    Positions 0-8 belong to the knee sensor, 9-17 to the ankle sensor; within
    a sensor the variances of axes 1-3 come first, then skewnesses, then kurtoses.
    """

    k: int
    z: np.ndarray

    def __post_init__(self) -> None:
        if self.z.shape != (FEATURE_COUNT,):
            raise ShapeError(f'a feature vector has {FEATURE_COUNT} entries, got shape {self.z.shape}')

    def validate(self) -> None:
        if not np.all(np.isfinite(self.z)):
            raise ValidationError(f'feature vector k={self.k} holds non-finite entries')
        if np.any(self.z[list(VARIANCE_POSITIONS)] < 0):
            raise ValidationError(f'feature vector k={self.k} holds a negative variance')
        if np.any(self.z[list(KURTOSIS_POSITIONS)] <= 0):
            raise ValidationError(f'feature vector k={self.k} holds a non-positive kurtosis')


@dataclass(frozen=True, eq=False)
class FeatureSeries:
    """Feature vectors of consecutive subintervals ``k = 1..N`` as an ``N x 18`` matrix."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != FEATURE_COUNT:
            raise ShapeError(f'a feature series is N x {FEATURE_COUNT}, got shape {self.values.shape}')

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __iter__(self) -> Iterator[FeatureVector]:
        return iter(self.rows)

    @property
    def N(self) -> int:
        return len(self)

    @property
    def rows(self) -> list[FeatureVector]:
        return [FeatureVector(k, row) for k, row in enumerate(self.values, start=1)]

    def column(self, feature: int) -> np.ndarray:
        """Values of the 0-based ``feature`` over ``k = 1..N``."""
        return self.values[:, feature]

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureVector]) -> FeatureSeries:
        for expected, row in enumerate(rows, start=1):
            if row.k != expected:
                raise ValidationError(f'feature rows must have consecutive k starting at 1, got k={row.k}')
        return cls(np.vstack([row.z for row in rows]))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=list(FEATURE_NAMES))
        frame.insert(0, 'k', np.arange(1, self.N + 1))
        return frame

    def write_csv(self, path: str | os.PathLike[str]) -> None:
        self.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')

    @classmethod
    def read_csv(cls, path: str | os.PathLike[str]) -> FeatureSeries:
        """Reads a feature dump written by :meth:`write_csv`."""
        if not os.path.exists(path):
            raise InputError(f'feature file {os.fspath(path)!r} does not exist')

        frame = read_table(path)
        expected = ['k', *FEATURE_NAMES]
        if list(frame.columns) != expected:
            raise ParseError(f'{os.fspath(path)} does not hold a feature dump header', line=1)
        if frame.isna().any(axis=None):
            row = int(np.flatnonzero(frame.isna().any(axis=1).to_numpy())[0])
            raise ParseError(f'{os.fspath(path)} holds an empty or malformed value', line=row + 2)
        if not np.array_equal(frame['k'].to_numpy(), np.arange(1, len(frame) + 1)):
            raise ValidationError(f'{os.fspath(path)} must list k = 1..N in order')

        return cls(frame[list(FEATURE_NAMES)].to_numpy(dtype=np.float64))


def feature_vector(
    knee: Sequence[np.ndarray] | np.ndarray,
    ankle: Sequence[np.ndarray] | np.ndarray,
    k: int,
) -> FeatureVector:
    """Assembles the feature vector from the three axes of each sensor.

    ``knee`` and ``ankle`` are either three per-axis sample sequences or an
    ``n x 3`` array.

    Raises
    ------
    DegenerateSignalError
        An axis is constant; the error names the sensor and axis.
    """
    z = np.empty(FEATURE_COUNT, dtype=np.float64)
    for offset, (sensor, axes) in enumerate(((Sensor.knee, knee), (Sensor.ankle, ankle))):
        columns = _axes(axes, sensor)
        base = offset * 3 * AXIS_COUNT
        for axis, samples in enumerate(columns):
            try:
                variance, skewness, kurtosis = sample_moments(samples)
            except DegenerateSignalError as exc:
                raise exc.located(sensor=sensor.name, axis=axis + 1, k=k) from None
            z[base + axis] = variance
            z[base + AXIS_COUNT + axis] = skewness
            z[base + 2 * AXIS_COUNT + axis] = kurtosis

    vector = FeatureVector(k, z)
    vector.validate()
    return vector


def _axes(axes: Sequence[np.ndarray] | np.ndarray, sensor: Sensor) -> list[np.ndarray]:
    if isinstance(axes, np.ndarray) and axes.ndim == 2:
        if axes.shape[1] != AXIS_COUNT:
            raise ShapeError(f'{sensor.name} samples must have {AXIS_COUNT} columns')
        return [axes[:, j] for j in range(AXIS_COUNT)]

    if len(axes) != AXIS_COUNT:
        raise ArityError(f'{sensor.name} needs {AXIS_COUNT} axes, got {len(axes)}')
    return [np.asarray(a, dtype=np.float64) for a in axes]


def feature_series(segments: Sequence[Segment], knee: SampleStream, ankle: SampleStream) -> FeatureSeries:
    """One feature vector per segment, in ``k`` order."""
    rows = []
    for segment in segments:
        k_start, k_stop = segment.knee
        a_start, a_stop = segment.ankle
        rows.append(feature_vector(knee.a[k_start:k_stop], ankle.a[a_start:a_stop], segment.k))

    series = FeatureSeries.from_rows(rows)
    log.debug('Computed %s', format(plural(series.N), 'feature vector'))
    return series
