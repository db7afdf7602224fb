"""Synthetic runs and reference oracles.

Generators produce feature series with controllable linear trends and
Gaussian noise, or raw two-sensor recordings whose per-segment variances
follow those trends. The oracles at the bottom re-derive moments, the
Riccati solution and the trimming procedure from their definitions with
plain Python arithmetic; they import nothing from the other stages.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Mapping, NamedTuple, Sequence

import numpy as np

from stages.ingest import SampleStream, Segment, Sensor
from stages.moments import FeatureSeries
from stages.utils.config import Config
from stages.utils.constants import (
    AXIS_COUNT,
    DEFAULT_SEGMENTS,
    FEATURE_COUNT,
    NOMINAL_RATE_HZ,
    RUNNER_PRESETS,
    SUBINTERVAL_DISTANCE_M,
)
from stages.utils.errors import ConfigError, OracleFailure

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)

STRIDE_HZ = 2.7
IMPACT_WIDTH = 0.025
ORACLE_TOLERANCE = 1e-12
ORACLE_MAX_ITERATIONS = 1_000_000


class OutputFormat(enum.Enum):
    features = 'features'
    raw = 'raw'


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """Parameters of a synthetic runner.

    Feature values follow ``slope_j * k + intercept_j`` plus independent
    Gaussian noise of standard deviation ``noise_std_j``. Every run draws its
    own noise, and its own slope offset when ``slope_jitter`` is non-zero.
    """

    N: int
    slopes: np.ndarray
    intercepts: np.ndarray
    noise_std: np.ndarray
    speeds: np.ndarray
    seed: int = 0
    slope_jitter: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_COUNT))
    mass: float = RUNNER_PRESETS['runner1']['mass']
    subinterval_distance: float = SUBINTERVAL_DISTANCE_M
    rate_hz: float = NOMINAL_RATE_HZ
    sample_noise: float = 0.0
    runs: int = 3
    output: OutputFormat = OutputFormat.features

    def __post_init__(self) -> None:
        if self.N < 2:
            raise ConfigError(f'segments must be at least 2, got {self.N}')
        for name in ('slopes', 'intercepts', 'noise_std', 'slope_jitter'):
            if getattr(self, name).shape != (FEATURE_COUNT,):
                raise ConfigError(f'{name} must hold {FEATURE_COUNT} values')
        if np.any(self.noise_std < 0) or np.any(self.slope_jitter < 0):
            raise ConfigError('noise_std and slope_jitter must be non-negative')
        if self.speeds.shape != (self.N,) or np.any(self.speeds <= 0):
            raise ConfigError(f'speeds must hold {self.N} positive values')
        if not self.mass > 0 or not self.subinterval_distance > 0 or not self.rate_hz > 0:
            raise ConfigError('mass, subinterval_distance and rate_hz must be positive')
        if self.sample_noise < 0:
            raise ConfigError('sample_noise must be non-negative')
        if self.runs < 1:
            raise ConfigError('at least one run must be generated')

    @property
    def durations(self) -> np.ndarray:
        return self.subinterval_distance / self.speeds

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> SynthSpec:
        """Builds a spec from the key-value document accepted by ``simulate``.

        Per-feature keys take a scalar or 18 values; ``speeds`` takes N values
        or ``{"start": ..., "end": ...}`` for a linear profile.
        """
        unknown = sorted(set(data) - _SPEC_KEYS)
        if unknown:
            raise ConfigError(f'unknown synthetic spec key(s): {", ".join(unknown)}')

        try:
            N = int(data.get('segments', DEFAULT_SEGMENTS))
            speeds = _speed_profile(data.get('speeds', {'start': 3.6, 'end': 3.0}), N)
            return cls(
                N=N,
                slopes=_per_feature(data.get('slopes', 0.0), 'slopes'),
                intercepts=_per_feature(data.get('intercepts', 10.0), 'intercepts'),
                noise_std=_per_feature(data.get('noise_std', 1.0), 'noise_std'),
                slope_jitter=_per_feature(data.get('slope_jitter', 0.0), 'slope_jitter'),
                speeds=speeds,
                seed=int(data.get('seed', 0)),
                mass=float(data.get('mass', RUNNER_PRESETS['runner1']['mass'])),
                subinterval_distance=float(data.get('subinterval_distance', SUBINTERVAL_DISTANCE_M)),
                rate_hz=float(data.get('rate_hz', NOMINAL_RATE_HZ)),
                sample_noise=float(data.get('sample_noise', 0.0)),
                runs=int(data.get('runs', 3)),
                output=OutputFormat(data.get('output', OutputFormat.features.value)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f'invalid synthetic spec: {exc}') from None

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> SynthSpec:
        return cls.from_mapping(Config(path, must_exist=True).all())

    def to_mapping(self) -> dict[str, Any]:
        return {
            'segments': self.N,
            'slopes': self.slopes.tolist(),
            'intercepts': self.intercepts.tolist(),
            'noise_std': self.noise_std.tolist(),
            'slope_jitter': self.slope_jitter.tolist(),
            'speeds': self.speeds.tolist(),
            'seed': self.seed,
            'mass': self.mass,
            'subinterval_distance': self.subinterval_distance,
            'rate_hz': self.rate_hz,
            'sample_noise': self.sample_noise,
            'runs': self.runs,
            'output': self.output.value,
        }


_SPEC_KEYS = frozenset({
    'segments', 'slopes', 'intercepts', 'noise_std', 'slope_jitter', 'speeds', 'seed', 'mass',
    'subinterval_distance', 'rate_hz', 'sample_noise', 'runs', 'output',
})


def _per_feature(value: Any, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim == 0:
        return np.full(FEATURE_COUNT, float(array))
    if array.shape != (FEATURE_COUNT,):
        raise ConfigError(f'{name} must be a number or a list of {FEATURE_COUNT} numbers')
    return array


def _speed_profile(value: Any, N: int) -> np.ndarray:
    if isinstance(value, Mapping):
        return np.linspace(float(value['start']), float(value['end']), N)
    array = np.asarray(value, dtype=np.float64)
    if array.ndim == 0:
        return np.full(N, float(array))
    return array


def _rng(spec: SynthSpec, run: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, run])


def generate_feature_series(spec: SynthSpec, run: int = 0) -> FeatureSeries:
    """Feature series of run number ``run``; deterministic in ``(spec, run)``."""
    rng = _rng(spec, run)
    slopes = spec.slopes + spec.slope_jitter * rng.standard_normal(FEATURE_COUNT)
    k = np.arange(1, spec.N + 1, dtype=np.float64)[:, None]
    noise = rng.standard_normal((spec.N, FEATURE_COUNT)) * spec.noise_std
    return FeatureSeries(slopes * k + spec.intercepts + noise)


def generate_labeled_run(spec: SynthSpec, run: int = 0) -> tuple[FeatureSeries, np.ndarray]:
    """A feature series together with its true indices ``1..N``."""
    return generate_feature_series(spec, run), np.arange(1, spec.N + 1)


def _base_waveform(t: np.ndarray, phase: float, impact: float) -> np.ndarray:
    """Stride-rate oscillation with a heel-strike transient once per stride."""
    cycle = (t * STRIDE_HZ + phase) % 1.0
    strike = np.exp(-0.5 * ((cycle - 0.1) / IMPACT_WIDTH) ** 2)
    return np.sin(2.0 * np.pi * (t * STRIDE_HZ + phase)) + impact * strike


def generate_raw_run(spec: SynthSpec, run: int = 0) -> tuple[SampleStream, SampleStream, list[Segment]]:
    """Two 100 Hz streams and their true segments.

    Only the variance entries of the spec shape the signal: every segment's
    axis is scaled so that its population variance equals the variance
    trend of that axis (plus the spec's noise). Skewness and kurtosis come
    from the waveform and stay flat. ``sample_noise`` adds white noise in g.
    """
    rng = _rng(spec, run)
    edges = np.concatenate(([0.0], np.cumsum(spec.durations)))
    frames = int(round(edges[-1] * spec.rate_hz))
    t = np.arange(frames, dtype=np.float64) / spec.rate_hz
    cuts = np.searchsorted(t, edges, side='left')

    slopes = spec.slopes + spec.slope_jitter * rng.standard_normal(FEATURE_COUNT)
    k = np.arange(1, spec.N + 1, dtype=np.float64)
    streams = []
    for sensor in Sensor:
        a = np.empty((frames, AXIS_COUNT), dtype=np.float64)
        for axis in range(AXIS_COUNT):
            j = (sensor.value - 1) * 3 * AXIS_COUNT + axis
            target = slopes[j] * k + spec.intercepts[j] + spec.noise_std[j] * rng.standard_normal(spec.N)
            target = np.maximum(target, 1e-3)

            wave = _base_waveform(t, phase=0.13 * axis + 0.4 * sensor.value, impact=0.8 + 0.6 * sensor.value + 0.3 * axis)
            for i in range(spec.N):
                piece = wave[cuts[i]:cuts[i + 1]]
                wave[cuts[i]:cuts[i + 1]] = piece * math.sqrt(target[i] / piece.var())
            a[:, axis] = wave

        if spec.sample_noise > 0:
            a += spec.sample_noise * rng.standard_normal(a.shape)
        # gravity on the superior-inferior axis
        a[:, 1] += 1.0
        streams.append(SampleStream(sensor, t.copy(), a, spec.rate_hz))

    segments = [
        Segment(
            k=i + 1,
            knee=(int(cuts[i]), int(cuts[i + 1])),
            ankle=(int(cuts[i]), int(cuts[i + 1])),
            t_start=float(edges[i]),
            t_end=float(edges[i + 1]),
            distance=spec.subinterval_distance,
        )
        for i in range(spec.N)
    ]
    log.debug('Generated raw run %d: %d frames per sensor', run, frames)
    return streams[0], streams[1], segments


class SynthRunner(NamedTuple):
    name: str
    spec: SynthSpec


def consistent_trend_spec(
    *,
    trend_features: Sequence[int] = (10, 13, 16),
    slope: float = 0.1,
    trend_noise: float = 0.25,
    background_noise: float = 1.0,
    mass: float = RUNNER_PRESETS['runner1']['mass'],
    N: int = DEFAULT_SEGMENTS,
    seed: int = 0,
) -> SynthSpec:
    """A spec where only ``trend_features`` trend consistently across runs.

    The remaining features are flat and noisy, so two runs disagree on them.
    """
    slopes = np.zeros(FEATURE_COUNT)
    noise = np.full(FEATURE_COUNT, background_noise)
    slopes[list(trend_features)] = slope
    noise[list(trend_features)] = trend_noise
    return SynthSpec(
        N=N,
        slopes=slopes,
        intercepts=np.full(FEATURE_COUNT, 10.0),
        noise_std=noise,
        speeds=np.linspace(3.6, 3.0, N),
        seed=seed,
        mass=mass,
    )


def reference_runners(N: int = DEFAULT_SEGMENTS) -> list[SynthRunner]:
    """Three runners with the preset masses; runner 2 has the least distinct trends."""
    return [
        SynthRunner('runner1', consistent_trend_spec(
            trend_features=(10, 13, 16), slope=0.12, trend_noise=0.2, mass=90.0, N=N, seed=101,
        )),
        SynthRunner('runner2', consistent_trend_spec(
            trend_features=(2, 7, 16), slope=0.04, trend_noise=0.4, mass=52.0, N=N, seed=202,
        )),
        SynthRunner('runner3', consistent_trend_spec(
            trend_features=(0, 9, 11), slope=0.1, trend_noise=0.25, mass=77.0, N=N, seed=303,
        )),
    ]


def with_seed(spec: SynthSpec, seed: int) -> SynthSpec:
    return replace(spec, seed=seed)


# Oracles. Plain Python only, no shared helpers with the primary stages.


def oracle_moments(samples: Sequence[float]) -> tuple[float, float, float]:
    """Population variance, skewness and kurtosis straight from the expectation definitions."""
    values = [float(v) for v in samples]
    n = len(values)
    mean = math.fsum(values) / n
    second = math.fsum((v - mean) ** 2 for v in values) / n
    third = math.fsum((v - mean) ** 3 for v in values) / n
    fourth = math.fsum((v - mean) ** 4 for v in values) / n
    if second == 0:
        raise OracleFailure('zero variance')
    return second, third / second ** 1.5, fourth / second ** 2


def oracle_riccati(A: float, Q: float, R: float) -> float:
    """Fixed-point iteration ``P <- A^2 P R / (P + R) + Q`` from ``P = Q``."""
    P = Q
    for _ in range(ORACLE_MAX_ITERATIONS):
        nxt = A * A * P * R / (P + R) + Q
        if abs(nxt - P) < ORACLE_TOLERANCE:
            return nxt
        P = nxt
    raise OracleFailure(f'Riccati iteration did not converge for A={A}, Q={Q}, R={R}')


def oracle_procedure1(d_bar: Sequence[float]) -> tuple[int, list[float]]:
    """Literal trace of the trimming procedure; returns ``(L, p_selected)``."""
    values = [float(v) for v in d_bar]
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    ranked = [values[i] for i in order]

    def term(x: float) -> float:
        return x * math.log(x) if x > 0 else 0.0

    n = len(ranked)
    L = n
    p = list(ranked)
    while True:
        if L == 2:
            return L, p[:L]

        right = term(p[L - 1])
        excess = math.fsum(term(x) - right for x in p[: L - 1])
        if excess < 0:
            return L, p[:L]

        L = L - 1
        total = sum(ranked[:L])
        p = [x / total for x in ranked[:L]]
