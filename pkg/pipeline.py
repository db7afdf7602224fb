"""Train, classify, evaluate and simulate runs end to end.

A run lives in a directory holding either the two raw recordings
(``knee.csv``, ``ankle.csv`` and optionally ``markers.csv``) or a feature
dump (``features.csv``), plus an optional ``speeds.csv``.
"""

from __future__ import annotations

import itertools
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
import pandas as pd

from stages.classify import (
    ClassificationResult,
    TrainedModel,
    classify_observations,
    classify_run,
    lag_sweep,
    lag_table,
    prepare_observations,
)
from stages.filtering import FilterParams, estimate_params
from stages.ingest import (
    RunnerProfile,
    Sensor,
    parse_markers,
    parse_stream,
    read_table,
    segment_equal_count,
    segment_speeds,
    write_markers,
    write_stream,
)
from stages.model import ModelFile, Provenance
from stages.moments import FeatureSeries, feature_series
from stages.select import (
    DiscrepancySource,
    Metric,
    RelevanceDistribution,
    SelectionMode,
    discrepancy,
    feature_name,
    line_fit_discrepancy,
    nearness,
    select,
    select_argmax,
    select_features,
    selection_report,
)
from stages.synth import (
    OutputFormat,
    SynthSpec,
    generate_feature_series,
    generate_raw_run,
    reference_runners,
    with_seed,
)
from stages.trend import TrendModel, fit_normalization, fit_trend, normalize
from stages.utils.config import Config
from stages.utils.constants import CSV_FLOAT_FORMAT, DEFAULT_LAGS
from stages.utils.errors import (
    ArityError,
    InputError,
    InstabilityError,
    NoiseDominatesError,
    ShapeError,
    ValidationError,
)
from stages.utils.formats import plural
from stages.utils.helpers import BasicJSONEncoder, TimeMesh

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)

KNEE_FILE = 'knee.csv'
ANKLE_FILE = 'ankle.csv'
MARKERS_FILE = 'markers.csv'
FEATURES_FILE = 'features.csv'
SPEEDS_FILE = 'speeds.csv'
SPEC_FILE = 'spec.json'


@dataclass(frozen=True)
class RunFiles:
    """Locations of one run's input files."""

    name: str
    knee: Optional[Path] = None
    ankle: Optional[Path] = None
    markers: Optional[Path] = None
    features: Optional[Path] = None
    speeds: Optional[Path] = None

    @classmethod
    def from_directory(cls, path: str | os.PathLike[str]) -> RunFiles:
        """Picks the feature dump when present, the raw recordings otherwise."""
        root = Path(path)
        if not root.is_dir():
            raise InputError(f'run directory {os.fspath(path)!r} does not exist')

        def optional(filename: str) -> Optional[Path]:
            candidate = root / filename
            return candidate if candidate.exists() else None

        features = optional(FEATURES_FILE)
        if features is not None:
            return cls(name=root.name, features=features, speeds=optional(SPEEDS_FILE))

        return cls(
            name=root.name,
            knee=root / KNEE_FILE,
            ankle=root / ANKLE_FILE,
            markers=optional(MARKERS_FILE),
            speeds=optional(SPEEDS_FILE),
        )

    @property
    def inputs(self) -> dict[str, Path]:
        """Input files keyed by provenance role."""
        roles = ('knee', 'ankle', 'markers', 'features', 'speeds')
        return {f'{self.name}.{role}': getattr(self, role) for role in roles if getattr(self, role) is not None}


@dataclass(frozen=True, eq=False)
class LoadedRun:
    files: RunFiles
    series: FeatureSeries
    speeds: Optional[np.ndarray] = field(default=None)

    @property
    def name(self) -> str:
        return self.files.name


def read_speeds(path: str | os.PathLike[str], N: Optional[int] = None) -> np.ndarray:
    """Reads a ``k,speed_mps`` table holding one positive speed per subinterval.

    ``N`` defaults to the number of rows.
    """
    try:
        frame = read_table(path)
    except FileNotFoundError:
        raise InputError(f'speed file {os.fspath(path)!r} does not exist') from None

    if list(frame.columns) != ['k', 'speed_mps']:
        raise ValidationError(f'{os.fspath(path)}: expected header k,speed_mps')
    if N is None:
        N = len(frame)
    if frame['k'].tolist() != list(range(1, N + 1)):
        raise ShapeError(f'{os.fspath(path)}: speeds must cover k = 1..{N} in order')

    speeds = frame['speed_mps'].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(speeds)) or np.any(speeds <= 0):
        raise ValidationError(f'{os.fspath(path)}: speeds must be positive')
    return speeds


def write_speeds(speeds: np.ndarray, path: str | os.PathLike[str]) -> None:
    frame = pd.DataFrame({'k': np.arange(1, speeds.shape[0] + 1), 'speed_mps': speeds})
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def read_truth(path: str | os.PathLike[str]) -> np.ndarray:
    """True subinterval indices from the ``k`` column of any labelled table."""
    try:
        frame = read_table(path)
    except FileNotFoundError:
        raise InputError(f'truth file {os.fspath(path)!r} does not exist') from None

    if 'k' not in frame.columns:
        raise ValidationError(f'{os.fspath(path)}: a truth table needs a k column')
    return frame['k'].to_numpy(dtype=np.int64)


def load_run(files: RunFiles, N: int, *, distance: float) -> LoadedRun:
    """Turns a run's files into its feature series and, when known, its speeds.

    Raw recordings are segmented into ``N`` subintervals (following the markers
    when given) and the observed segment speeds are kept. A feature dump must
    already hold ``N`` rows.
    """
    speeds: Optional[np.ndarray] = None
    if files.features is not None:
        series = FeatureSeries.read_csv(files.features)
        if series.N != N:
            raise ShapeError(f'{files.name}: feature dump holds {series.N} subintervals, expected {N}')
    else:
        knee = parse_stream(files.knee, Sensor.knee)
        ankle = parse_stream(files.ankle, Sensor.ankle)
        markers = None if files.markers is None else parse_markers(files.markers)
        segments = segment_equal_count(knee, ankle, N, distance=distance, markers=markers)
        series = feature_series(segments, knee, ankle)
        speeds = segment_speeds(segments)

    if speeds is None and files.speeds is not None:
        speeds = read_speeds(files.speeds, N)

    return LoadedRun(files, series, speeds)


def run_discrepancy(
    runs: Sequence[FeatureSeries],
    trend: TrendModel,
    metric: Metric,
    source: DiscrepancySource,
) -> np.ndarray:
    """Discrepancy vector of the normalised training runs.

    With more than two runs the pairwise discrepancies are averaged.
    """
    if source is DiscrepancySource.fit:
        return line_fit_discrepancy(runs, trend, metric)

    variances = np.where(trend.residual_variances > 0, trend.residual_variances, 1.0)
    normalized = [normalize(run, trend.scales) for run in runs]
    pairs = [
        discrepancy(u, v, metric, variances=variances)
        for u, v in itertools.combinations(normalized, 2)
    ]
    return np.mean(pairs, axis=0)


def estimate_filters(
    runs: Sequence[FeatureSeries],
    trend: TrendModel,
    relevance: RelevanceDistribution,
) -> tuple[Optional[FilterParams], ...]:
    """Filter parameters of every selected feature.

    Each feature is centred at its training level and measured in its raw
    units, with the line-fit residual variance as measurement noise. The
    stored parameters are converted to normalised units. Features that admit
    no stable filter are used unfiltered.
    """
    levels = trend.levels / trend.scales
    params: list[Optional[FilterParams]] = []
    for j in relevance.selected.tolist():
        name = feature_name(j, relevance.n)
        scale = float(trend.scales[j])
        R = float(trend.residual_variances[j]) / (scale * scale)
        if not R > 0:
            log.warning('Feature %s has no residual noise, bypassing its filter', name)
            params.append(None)
            continue

        z = np.concatenate([run.column(j) - levels[j] for run in runs])
        try:
            estimated = estimate_params(z, R)
        except (NoiseDominatesError, InstabilityError) as exc:
            log.warning('Bypassing the filter of feature %s: %s', name, exc)
            params.append(None)
        else:
            params.append(estimated.scaled(scale))

    return tuple(params)


def mean_speeds(runs: Sequence[LoadedRun]) -> np.ndarray:
    known = [run.speeds for run in runs if run.speeds is not None]
    if not known:
        raise ValidationError(f'no training run provides subinterval speeds (raw recordings or {SPEEDS_FILE})')
    return np.mean(known, axis=0)


def build_model(
    series: Sequence[FeatureSeries],
    profile: RunnerProfile,
    speeds: np.ndarray,
    *,
    metric: Metric = Metric.euclidean,
    mode: SelectionMode = SelectionMode.procedure1,
    source: DiscrepancySource = DiscrepancySource.runs,
) -> TrainedModel:
    """Normalisation, trend lines, feature selection and filters of in-memory runs."""
    if len(series) < 2:
        raise ArityError(f'training needs two or more runs, got {len(series)}')

    trend = fit_trend(series, fit_normalization(series))
    relevance = select(run_discrepancy(series, trend, metric, source), mode)
    return TrainedModel(
        profile=profile,
        trend=trend,
        relevance=relevance,
        filter_params=estimate_filters(series, trend, relevance),
        speeds=np.asarray(speeds, dtype=np.float64),
        metric=metric,
    )


def train(
    runs: Sequence[RunFiles],
    profile: RunnerProfile,
    *,
    metric: Metric = Metric.euclidean,
    mode: SelectionMode = SelectionMode.procedure1,
    source: DiscrepancySource = DiscrepancySource.runs,
    seed: Optional[int] = None,
) -> ModelFile:
    """Builds a model from two or more runs along the same route.

    Raises
    ------
    ArityError
        Fewer than two training runs.
    """
    if len(runs) < 2:
        raise ArityError(f'training needs two or more runs, got {len(runs)}')

    loaded = [load_run(files, profile.segment_count, distance=profile.subinterval_distance) for files in runs]
    model = build_model(
        [run.series for run in loaded],
        profile,
        mean_speeds(loaded),
        metric=metric,
        mode=mode,
        source=source,
    )

    inputs = {role: path for files in runs for role, path in files.inputs.items()}
    log.info('Trained on %s from %s', format(plural(len(runs)), 'run'), format(plural(len(inputs)), 'file'))
    return ModelFile(model=model, provenance=Provenance.collect(inputs, seed=seed))


def classify(
    model: TrainedModel,
    files: RunFiles,
    lag: int,
    truth: Optional[np.ndarray] = None,
) -> ClassificationResult:
    run = load_run(files, model.N, distance=model.profile.subinterval_distance)
    return classify_run(model, run.series, lag, truth)


def sweep(
    model: TrainedModel,
    runs: Sequence[RunFiles],
    lags: Sequence[int] = DEFAULT_LAGS,
) -> dict[str, dict[int, float]]:
    """RMS error per run and lag; a labelled run's observations are ``k = 1..N`` in order."""
    truth = np.arange(1, model.N + 1)
    rows: dict[str, dict[int, float]] = {}
    for files in runs:
        run = load_run(files, model.N, distance=model.profile.subinterval_distance)
        rows[run.name] = lag_sweep(model, run.series, truth, lags)
    return rows


def evaluate(model: TrainedModel, runs: Sequence[RunFiles], lags: Sequence[int] = DEFAULT_LAGS) -> str:
    """Lag table of the labelled runs followed by the model's selection report."""
    if not runs:
        raise ArityError('evaluation needs at least one labelled run')
    rows = sweep(model, runs, lags)
    return f'{lag_table(rows, lags)}\n\n{selection_report(model.relevance)}'


def write_run(spec: SynthSpec, run: int, directory: Path) -> RunFiles:
    """Writes synthetic run ``run`` of ``spec`` in the spec's output format."""
    directory.mkdir(parents=True, exist_ok=True)
    write_speeds(spec.speeds, directory / SPEEDS_FILE)
    if spec.output is OutputFormat.raw:
        knee, ankle, segments = generate_raw_run(spec, run)
        write_stream(knee, directory / KNEE_FILE)
        write_stream(ankle, directory / ANKLE_FILE)
        write_markers(segments, directory / MARKERS_FILE)
    else:
        generate_feature_series(spec, run).write_csv(directory / FEATURES_FILE)
    return RunFiles.from_directory(directory)


def simulate(spec: SynthSpec, out: str | os.PathLike[str]) -> list[RunFiles]:
    """Writes ``spec.runs`` runs to ``out/run1 ..`` together with the spec itself."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    Config.from_mapping(root / SPEC_FILE, spec.to_mapping(), encoder=BasicJSONEncoder).save()
    written = [write_run(spec, run, root / f'run{run + 1}') for run in range(spec.runs)]
    log.info('Simulated %s into %s', format(plural(len(written)), 'run'), root.as_posix())
    return written


def simulate_reference(out: str | os.PathLike[str], N: int, *, seed: Optional[int] = None) -> dict[str, list[RunFiles]]:
    """Writes every reference runner to ``out/<runner>/run1 ..``."""
    written: dict[str, list[RunFiles]] = {}
    for runner in reference_runners(N):
        spec = runner.spec if seed is None else with_seed(runner.spec, seed + runner.spec.seed)
        written[runner.name] = simulate(spec, Path(out) / runner.name)
    return written


def reference_model(N: int, *, seed: Optional[int] = None) -> tuple[TrainedModel, FeatureSeries]:
    """An in-memory model of the first reference runner and a held-out run."""
    spec = reference_runners(N)[0].spec
    if seed is not None:
        spec = with_seed(spec, seed)

    series = [generate_feature_series(spec, run) for run in range(spec.runs)]
    profile = RunnerProfile(spec.mass, spec.subinterval_distance, N)
    model = build_model(series, profile, spec.speeds)
    return model, generate_feature_series(spec, spec.runs)


def bench(lag: int, repeat: int, *, N: int, seed: Optional[int] = None) -> np.ndarray:
    """Wall time of filtering, selection and lag-``lag`` classification of one run.

    Returns one duration in seconds per repetition.
    """
    if repeat < 1:
        raise ArityError('at least one repetition is needed')

    model, series = reference_model(N, seed=seed)
    durations = np.empty(repeat)
    for i in range(repeat):
        with TimeMesh() as mesh:
            observations = prepare_observations(model, series)
            d_bar = nearness(model.relevance.d)
            if model.relevance.mode is SelectionMode.argmax:
                select_argmax(d_bar)
            else:
                select_features(d_bar)
            classify_observations(observations, model, lag)
        durations[i] = mesh.time
    return durations
