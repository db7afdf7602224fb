import contextlib
import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import TYPE_CHECKING, Any, Optional, cast

import click
import numpy as np

import pipeline
from stages.classify import energy_curve, lag_frame, lag_sweep, lag_table
from stages.ingest import RunnerProfile
from stages.model import load_model
from stages.select import DiscrepancySource, Metric, SelectionMode, select, selection_frame, selection_report
from stages.synth import SynthSpec, with_seed
from stages.trend import fit_trend
from stages.utils.config import Settings
from stages.utils.constants import (
    CSV_FLOAT_FORMAT,
    DEFAULT_LAG,
    DEFAULT_SEGMENTS,
    RUNNER_PRESETS,
    SUBINTERVAL_DISTANCE_M,
    TRACE_LEVEL,
)
from stages.utils.errors import StrideError
from stages.utils.formats import percent, plural, readable_seconds

DEFAULT_SETTINGS = 'stride.json'
LOG_LEVELS = ('TRACE', 'DEBUG', 'INFO', 'WARNING', 'ERROR')


if TYPE_CHECKING:
    LoggerClass = logging.Logger
else:
    LoggerClass = logging.getLoggerClass()


class StrideLogger(LoggerClass):
    """Custom implementation of the `Logger` class with an added `trace` method."""

    def trace(self, msg: str, *args, **kwargs) -> None:
        """
        Log 'msg % args' with severity 'TRACE'.

        To pass exception information, use the keyword argument exc_info with
        a true value, e.g.

        logger.trace('Selection stopped at %d', 4, exc_info=1)
        """
        if self.isEnabledFor(TRACE_LEVEL):
            self.log(TRACE_LEVEL, msg, *args, **kwargs)


def get_logger(name: str | None = None) -> StrideLogger:
    """Utility to make mypy recognise that logger is of type `StrideLogger`."""
    return cast(StrideLogger, logging.getLogger(name))


class _ColourFormatter(logging.Formatter):
    LEVEL_COLOURS = [
        (TRACE_LEVEL, '\x1b[40;1m', 5),
        (logging.DEBUG, '\x1b[40;1m', 5),
        (logging.INFO, '\x1b[34;1m', 4),
        (logging.WARNING, '\x1b[33;1m', 7),
        (logging.ERROR, '\x1b[31m', 5),
        (logging.CRITICAL, '\x1b[41m', 8),
    ]

    FORMATS = {
        level: logging.Formatter(
            f'%(asctime)s\x1b[0m | {colour}%(levelname)-{length}s\x1b[0m \x1b[35m%(name)s\x1b[0m: %(message)s',
            '%Y-%m-%d %H:%M:%S',
        )
        for level, colour, length in LEVEL_COLOURS
    }

    def format(self, record):
        formatter = self.FORMATS.get(record.levelno)
        if formatter is None:
            formatter = self.FORMATS[logging.DEBUG]

        if record.exc_info:
            text = formatter.formatException(record.exc_info)
            record.exc_text = f'\x1b[31m{text}\x1b[0m'

        output = formatter.format(record)

        record.exc_text = None
        return output


@contextlib.contextmanager
def setup_logging(level: str = 'INFO', log_file: Optional[str] = None):
    logging.TRACE = TRACE_LEVEL
    logging.addLevelName(TRACE_LEVEL, 'TRACE')
    logging.setLoggerClass(StrideLogger)

    root_log = get_logger()

    try:
        dt_fmt = '%Y-%m-%d %H:%M:%S'
        fmt = logging.Formatter(fmt='[{asctime}] | {levelname:<7} - {name}: {message}', datefmt=dt_fmt, style='{')

        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(_ColourFormatter() if sys.stderr.isatty() else fmt)
        root_log.addHandler(console)

        for noisy in ('numpy', 'matplotlib', 'hypothesis'):
            get_logger(noisy).setLevel(logging.WARNING)

        root_log.setLevel(logging.getLevelName(level.upper()))
        if log_file is not None:
            max_bytes = 32 * 1024 * 1024  # 32 MiB
            handler = RotatingFileHandler(
                filename=log_file, encoding='utf-8', mode='w', maxBytes=max_bytes, backupCount=5
            )
            handler.setFormatter(fmt)
            root_log.addHandler(handler)

        yield
    finally:
        handlers = root_log.handlers[:]
        for hdlr in handlers:
            hdlr.close()
            root_log.removeHandler(hdlr)


class StrideGroup(click.Group):
    """Turns pipeline errors into a red message and the error's exit code."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except StrideError as exc:
            get_logger(__name__).error('%s: %s', type(exc).__name__, exc)
            click.secho(f'{type(exc).__name__}: {exc}', fg='red', err=True)
            ctx.exit(exc.exit_code)


def _profile(runner: str, segments: int, mass: Optional[float], distance: Optional[float]) -> RunnerProfile:
    return RunnerProfile.from_preset(runner, segments, mass=mass, subinterval_distance=distance)


def _write_or_echo(frame, out: Optional[str]) -> None:
    if out is None:
        click.echo(frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n'), nl=False)
    else:
        frame.to_csv(out, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
        click.secho(f'Wrote {out}', fg='green', err=True)


segments_option = click.option(
    '--segments', '-n', type=int, default=DEFAULT_SEGMENTS, show_default=True,
    help='Number of subinterval classes per run.',
)
metric_option = click.option(
    '--metric', type=click.Choice([m.value for m in Metric]), default=Metric.euclidean.value, show_default=True,
    help='Distance between feature trajectories.',
)
select_option = click.option(
    '--select', 'selection', type=click.Choice([m.value for m in SelectionMode]),
    default=SelectionMode.procedure1.value, show_default=True, help='How the number of features is chosen.',
)
lag_option = click.option(
    '--lag', '-l', type=int, default=DEFAULT_LAG, show_default=True,
    help='Number of preceding observations in the classification window.',
)
verify_option = click.option('--verify', is_flag=True, help='Re-check the digests of the training inputs.')
runner_option = click.option(
    '--runner', type=click.Choice(sorted(RUNNER_PRESETS)), default='runner1', show_default=True,
    help='Runner profile preset.',
)
mass_option = click.option('--mass', type=float, default=None, help='Override the preset mass in kg.')
seed_option = click.option('--seed', type=int, default=None, help='Seed of synthetic data.')


@click.group(cls=StrideGroup, options_metavar='[options]')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help=f'Settings file, {DEFAULT_SETTINGS} when present.')
@click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None,
              help='Root log level, INFO by default.')
@click.option('--log-file', type=click.Path(dir_okay=False), default=None, help='Also log to this rotating file.')
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str], log_level: Optional[str], log_file: Optional[str]):
    """Estimates how far into a run a runner is from knee and ankle accelerometers."""
    settings = Settings.load(config_path or DEFAULT_SETTINGS, must_exist=config_path is not None)
    ctx.default_map = settings.default_map()
    ctx.with_resource(setup_logging(log_level or settings.log_level, log_file or settings.log_file))


@main.command(short_help='Build a model from training runs')
@click.argument('runs', nargs=-1, type=click.Path(file_okay=False))
@click.option('--out', '-o', type=click.Path(dir_okay=False), default='model.json', show_default=True)
@segments_option
@metric_option
@select_option
@click.option('--discrepancy', type=click.Choice([s.value for s in DiscrepancySource]),
              default=DiscrepancySource.runs.value, show_default=True,
              help='Compare the runs with each other or with their fitted lines.')
@runner_option
@mass_option
@click.option('--distance', type=float, default=None, help='Override the subinterval distance in m.')
@seed_option
def train(runs: tuple[str, ...], out: str, segments: int, metric: str, selection: str, discrepancy: str,
          runner: str, mass: Optional[float], distance: Optional[float], seed: Optional[int]):
    """Trains on two or more run directories along the same route."""
    model_file = pipeline.train(
        [pipeline.RunFiles.from_directory(run) for run in runs],
        _profile(runner, segments, mass, distance),
        metric=Metric(metric),
        mode=SelectionMode(selection),
        source=DiscrepancySource(discrepancy),
        seed=seed,
    )
    model_file.save(out)
    relevance = model_file.model.relevance
    click.echo(f'Selected {relevance.L_selected} of {relevance.n} features: {", ".join(relevance.selected_names)}')
    click.secho(f'Wrote model to {out}', fg='green')


@main.command(short_help='Estimate the subinterval of every observation')
@click.argument('model', type=click.Path(dir_okay=False))
@click.argument('run', type=click.Path(file_okay=False))
@lag_option
@click.option('--truth', type=click.Path(dir_okay=False), default=None, help='Table whose k column holds true indices.')
@click.option('--sweep', is_flag=True, help='Report the RMS error for lags 0 to 4 instead (needs --truth).')
@click.option('--out', '-o', type=click.Path(dir_okay=False), default=None, help='Result CSV, stdout by default.')
@verify_option
def classify(model: str, run: str, lag: int, truth: Optional[str], sweep: bool, out: Optional[str], verify: bool):
    """Classifies a run recorded on another occasion."""
    trained = load_model(model, verify=verify).model
    files = pipeline.RunFiles.from_directory(run)
    k_true = None if truth is None else pipeline.read_truth(truth)

    if sweep:
        if k_true is None:
            raise click.UsageError('--sweep needs --truth')
        loaded = pipeline.load_run(files, trained.N, distance=trained.profile.subinterval_distance)
        click.echo(lag_table({files.name: lag_sweep(trained, loaded.series, k_true)}))
        return

    result = pipeline.classify(trained, files, lag, k_true)
    _write_or_echo(result.to_frame(), out)
    if result.rms_error_pct is not None:
        click.echo(f'Lag {lag} RMS index error: {percent(result.rms_error_pct)}', err=True)


@main.command(short_help='Report RMS errors per lag and the selection')
@click.argument('model', type=click.Path(dir_okay=False))
@click.argument('runs', nargs=-1, type=click.Path(file_okay=False))
@click.option('--csv', 'csv_out', type=click.Path(dir_okay=False), default=None, help='Also write the lag table as CSV.')
@verify_option
def evaluate(model: str, runs: tuple[str, ...], csv_out: Optional[str], verify: bool):
    """Evaluates labelled runs, whose observations are subintervals 1..N in order."""
    trained = load_model(model, verify=verify).model
    files = [pipeline.RunFiles.from_directory(run) for run in runs]
    click.echo(pipeline.evaluate(trained, files))
    if csv_out is not None:
        lag_frame(pipeline.sweep(trained, files)).to_csv(
            csv_out, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n'
        )


@main.command(short_help='Write synthetic runs')
@click.argument('spec', type=click.Path(dir_okay=False), required=False)
@click.option('--out', '-o', type=click.Path(file_okay=False), required=True, help='Output directory.')
@click.option('--reference', is_flag=True, help='Write the three reference runners instead of SPEC.')
@segments_option
@seed_option
def simulate(spec: Optional[str], out: str, reference: bool, segments: int, seed: Optional[int]):
    """Generates runs from a synthetic spec file (defaults when omitted)."""
    if reference:
        written = pipeline.simulate_reference(out, segments, seed=seed)
        count = sum(len(runs) for runs in written.values())
    else:
        synth = SynthSpec.load(spec) if spec is not None else SynthSpec.from_mapping({'segments': segments})
        if seed is not None:
            synth = with_seed(synth, seed)
        count = len(pipeline.simulate(synth, out))
    click.secho(f'Wrote {plural(count):run} to {out}', fg='green')


@main.command(short_help='Dump the feature series of a run')
@click.argument('run', type=click.Path(file_okay=False))
@click.option('--out', '-o', type=click.Path(dir_okay=False), default=None, help='Feature CSV, stdout by default.')
@segments_option
def features(run: str, out: Optional[str], segments: int):
    """Segments a raw run and writes its 18 moment features per subinterval."""
    loaded = pipeline.load_run(pipeline.RunFiles.from_directory(run), segments, distance=SUBINTERVAL_DISTANCE_M)
    _write_or_echo(loaded.series.to_frame(), out)


@main.command('select', short_help='Report the feature selection of two runs')
@click.argument('first', type=click.Path(file_okay=False))
@click.argument('second', type=click.Path(file_okay=False))
@click.option('--csv', 'csv_out', type=click.Path(dir_okay=False), default=None, help='Also write the report as CSV.')
@segments_option
@metric_option
@select_option
def select_command(first: str, second: str, csv_out: Optional[str], segments: int, metric: str, selection: str):
    """Ranks the features by cross-run consistency without writing a model."""
    series = [
        pipeline.load_run(pipeline.RunFiles.from_directory(run), segments, distance=SUBINTERVAL_DISTANCE_M).series
        for run in (first, second)
    ]
    trend = fit_trend(series)
    d = pipeline.run_discrepancy(series, trend, Metric(metric), DiscrepancySource.runs)
    relevance = select(d, SelectionMode(selection))
    click.echo(selection_report(relevance))
    if csv_out is not None:
        selection_frame(relevance).to_csv(csv_out, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


@main.command(short_help='Accumulated energy and fatigue index')
@click.argument('speeds', type=click.Path(dir_okay=False))
@click.option('--out', '-o', type=click.Path(dir_okay=False), default=None, help='Energy CSV, stdout by default.')
@runner_option
@mass_option
def energy(speeds: str, out: Optional[str], runner: str, mass: Optional[float]):
    """Maps a k,speed_mps table to accumulated kinetic energy and fatigue index per subinterval."""
    values = pipeline.read_speeds(speeds)
    profile = _profile(runner, values.shape[0], mass, None)
    _write_or_echo(energy_curve(profile, values), out)


@main.command(short_help='Time the on-line classification')
@lag_option
@click.option('--repeat', type=int, default=100, show_default=True)
@segments_option
@seed_option
def bench(lag: int, repeat: int, segments: int, seed: Optional[int]):
    """Median time of filtering, selection and classification of one run."""
    durations = pipeline.bench(lag, repeat, N=segments, seed=seed)
    median = float(np.median(durations))
    click.echo(
        f'{plural(repeat):repetition}: median {readable_seconds(median)}, '
        f'min {readable_seconds(float(durations.min()))}, max {readable_seconds(float(durations.max()))}'
    )
    click.secho('Median under 0.1s' if median < 0.1 else 'Slower than 0.1s', fg='green' if median < 0.1 else 'yellow')


if __name__ == '__main__':
    main()
