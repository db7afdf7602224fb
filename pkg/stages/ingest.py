"""Recording ingestion: parse accelerometer CSVs, segment runs, derive speeds."""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional, Sequence

import numpy as np
import pandas as pd

from stages.utils.constants import (
    CSV_FLOAT_FORMAT,
    MARKER_COLUMNS,
    MAX_GAP_PERIODS,
    MAX_SPAN_MISMATCH_S,
    MIN_SEGMENT_FRAMES,
    NOMINAL_RATE_HZ,
    RATE_HEADER,
    RUNNER_PRESETS,
    STREAM_COLUMNS,
)
from stages.utils.errors import (
    AlignmentError,
    ArityError,
    ConfigError,
    GapError,
    InputError,
    OrderingError,
    ParseError,
    SparsityError,
    ValidationError,
    ZeroDurationError,
)
from stages.utils.formats import plural, readable_seconds

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)


class Sensor(enum.IntEnum):
    """Sensor placement. Axes are 1 = mediolateral X, 2 = superior-inferior Y, 3 = anterior-posterior Z."""

    knee = 1
    ankle = 2


@dataclass(frozen=True, eq=False)
class SampleStream:
    """Timestamped triaxial acceleration frames (in g) from one sensor."""

    sensor: Sensor
    t: np.ndarray
    a: np.ndarray
    rate_hz: float = NOMINAL_RATE_HZ

    def __post_init__(self) -> None:
        if self.t.ndim != 1 or self.a.shape != (self.t.shape[0], 3):
            raise ValidationError(f'{self.sensor.name} stream needs n timestamps and an n x 3 acceleration array')

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def frame_count(self) -> int:
        return len(self)

    @property
    def period(self) -> float:
        return 1.0 / self.rate_hz

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        """End of the covered span: the last frame holds one nominal period."""
        return float(self.t[-1]) + self.period

    @property
    def duration(self) -> float:
        return self.end - self.start

    def axis(self, axis: int) -> np.ndarray:
        """Samples of the 1-based ``axis``."""
        return self.a[:, axis - 1]

    def slice(self, start: int, stop: int) -> SampleStream:
        return SampleStream(self.sensor, self.t[start:stop], self.a[start:stop], self.rate_hz)

    @classmethod
    def concatenate(cls, parts: Sequence[SampleStream]) -> SampleStream:
        if not parts:
            raise ArityError('cannot concatenate zero stream slices')
        first = parts[0]
        return cls(
            first.sensor,
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.a for p in parts]),
            first.rate_hz,
        )

    def validate(self) -> None:
        """Checks the stream invariants: finite values, strictly increasing times, no large gaps."""
        if len(self) == 0:
            raise SparsityError(f'{self.sensor.name} stream holds no frames')

        if not np.all(np.isfinite(self.t)) or not np.all(np.isfinite(self.a)):
            row = int(np.flatnonzero(~(np.isfinite(self.t) & np.isfinite(self.a).all(axis=1)))[0])
            raise ValidationError(f'{self.sensor.name} frame {row} holds a non-finite value')

        steps = np.diff(self.t)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            i = int(bad[0])
            raise OrderingError(
                f'{self.sensor.name} timestamps not strictly increasing at frame {i + 1}: '
                f'{self.t[i]:.6f} -> {self.t[i + 1]:.6f}'
            )

        # small slack for decimal rounding of the written timestamps
        limit = MAX_GAP_PERIODS * self.period * (1 + 1e-6)
        gaps = np.flatnonzero(steps > limit)
        if gaps.size:
            i = int(gaps[0])
            raise GapError(
                f'{self.sensor.name} gap of {steps[i]:.3f}s after t={self.t[i]:.3f}s exceeds '
                f'{MAX_GAP_PERIODS} nominal periods'
            )


@dataclass(frozen=True)
class RunnerProfile:
    mass: float
    subinterval_distance: float
    segment_count: int

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise ConfigError(f'runner mass must be positive, got {self.mass}')
        if not self.subinterval_distance > 0:
            raise ConfigError(f'subinterval distance must be positive, got {self.subinterval_distance}')
        if self.segment_count < 2:
            raise ConfigError(f'at least two subintervals are needed, got {self.segment_count}')

    @classmethod
    def from_preset(
        cls,
        name: str,
        segment_count: int,
        *,
        mass: Optional[float] = None,
        subinterval_distance: Optional[float] = None,
    ) -> RunnerProfile:
        """Builds a profile from one of the preset runners, optionally overriding fields."""
        try:
            preset = RUNNER_PRESETS[name]
        except KeyError:
            raise ConfigError(f'unknown runner preset {name!r}, choose from {", ".join(RUNNER_PRESETS)}') from None

        return cls(
            mass=preset['mass'] if mass is None else mass,
            subinterval_distance=preset['subinterval_distance'] if subinterval_distance is None else subinterval_distance,
            segment_count=segment_count,
        )

    def to_dict(self) -> dict[str, float | int]:
        return {'mass': self.mass, 'subinterval_distance': self.subinterval_distance, 'segment_count': self.segment_count}

    @classmethod
    def from_dict(cls, data: dict) -> RunnerProfile:
        return cls(float(data['mass']), float(data['subinterval_distance']), int(data['segment_count']))


@dataclass(frozen=True)
class Segment:
    """One subinterval class. Frame ranges are half-open ``[start, stop)`` per sensor."""

    k: int
    knee: tuple[int, int]
    ankle: tuple[int, int]
    t_start: float
    t_end: float
    distance: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def frames(self, sensor: Sensor) -> tuple[int, int]:
        return self.knee if sensor is Sensor.knee else self.ankle


@dataclass(frozen=True)
class Marker:
    """A row of the boundary marker file."""

    k: int
    t_start: float
    t_end: float
    distance: Optional[float] = field(default=None)


def _not_text(path: str | os.PathLike[str], exc: UnicodeDecodeError) -> ParseError:
    return ParseError(f'{os.fspath(path)} is not UTF-8 text ({exc.reason} at byte {exc.start})')


def read_table(path: str | os.PathLike[str], *, header_line: int = 1, **kwargs: Any) -> pd.DataFrame:
    """:func:`pandas.read_csv` with undecodable or malformed text raised as :class:`ParseError`.

    A missing file still raises :class:`FileNotFoundError` for the caller to name.
    """
    try:
        return pd.read_csv(path, encoding='utf-8', **kwargs)
    except UnicodeDecodeError as exc:
        raise _not_text(path, exc) from None
    except pd.errors.EmptyDataError:
        raise ParseError(f'{os.fspath(path)} has no header line', line=header_line) from None
    except pd.errors.ParserError as exc:
        raise ParseError(f'{os.fspath(path)}: {exc}') from None


def _read_rate(path: str | os.PathLike[str]) -> tuple[float, int]:
    """Returns the declared sample rate and the number of leading comment lines."""
    rate: Optional[float] = None
    comments = 0
    try:
        with open(path, 'r', encoding='utf-8') as fp:
            for line in fp:
                if not line.startswith('#'):
                    break
                comments += 1
                match = RATE_HEADER.match(line.strip())
                if match is not None:
                    rate = float(match.group('rate'))
    except UnicodeDecodeError as exc:
        raise _not_text(path, exc) from None

    if rate is None:
        log.warning('%s declares no rate_hz header, assuming %g Hz', os.fspath(path), NOMINAL_RATE_HZ)
        rate = NOMINAL_RATE_HZ
    return rate, comments


def parse_stream(path: str | os.PathLike[str], sensor: Sensor) -> SampleStream:
    """Parses one sensor recording.

    The file starts with a ``# rate_hz=100`` comment, then the header
    ``t,ax,ay,az`` and one row per frame.

    Raises
    ------
    InputError
        The file does not exist.
    ParseError
        A row is malformed, with its 1-based line number, or the file is not UTF-8 text.
    OrderingError
        Timestamps are not strictly increasing.
    GapError
        Two frames are more than five nominal periods apart.
    """
    if not os.path.exists(path):
        raise InputError(f'{sensor.name} recording {os.fspath(path)!r} does not exist')

    rate, comments = _read_rate(path)
    header_line = comments + 1
    frame = read_table(
        path, header_line=header_line, skiprows=comments, dtype=str, keep_default_na=False, skip_blank_lines=True,
    )

    columns = tuple(c.strip() for c in frame.columns)
    if columns != STREAM_COLUMNS:
        raise ParseError(f'expected header {",".join(STREAM_COLUMNS)}, got {",".join(columns)}', line=header_line)

    values = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors='coerce'))
    broken = values.isna().any(axis=1).to_numpy()
    if broken.any():
        row = int(np.flatnonzero(broken)[0])
        raise ParseError(f'malformed row {",".join(frame.iloc[row])!r}', line=header_line + 1 + row)

    data = values.to_numpy(dtype=np.float64)
    stream = SampleStream(sensor, np.ascontiguousarray(data[:, 0]), np.ascontiguousarray(data[:, 1:]), rate)
    stream.validate()

    log.info(
        'Parsed %s recording %s: %s over %s',
        sensor.name, os.fspath(path), format(plural(stream.frame_count), 'frame'), readable_seconds(stream.duration),
    )
    return stream


def write_stream(stream: SampleStream, path: str | os.PathLike[str]) -> None:
    """Writes a stream in the format :func:`parse_stream` reads."""
    frame = pd.DataFrame({
        't': stream.t,
        'ax': stream.a[:, 0],
        'ay': stream.a[:, 1],
        'az': stream.a[:, 2],
    })
    rate = f'{stream.rate_hz:g}'
    with open(path, 'w', encoding='utf-8', newline='\n') as fp:
        fp.write(f'# rate_hz={rate}\n')
        frame.to_csv(fp, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def parse_markers(path: str | os.PathLike[str]) -> list[Marker]:
    """Reads a boundary marker file with columns ``k,t_start,t_end,distance_m``.

    The distance column may be left empty to use the profile's subinterval distance.
    """
    if not os.path.exists(path):
        raise InputError(f'marker file {os.fspath(path)!r} does not exist')

    frame = read_table(path, dtype=str, keep_default_na=False)
    columns = tuple(c.strip() for c in frame.columns)
    if columns[:3] != MARKER_COLUMNS[:3] or len(columns) not in (3, 4):
        raise ParseError(f'expected header {",".join(MARKER_COLUMNS)}, got {",".join(columns)}', line=1)

    markers: list[Marker] = []
    for row, record in enumerate(frame.itertuples(index=False), start=2):
        try:
            k = int(record[0])
            t_start, t_end = float(record[1]), float(record[2])
            distance = float(record[3]) if len(record) > 3 and str(record[3]).strip() else None
        except ValueError:
            raise ParseError(f'malformed marker row {",".join(map(str, record))!r}', line=row) from None
        markers.append(Marker(k, t_start, t_end, distance))

    for expected, marker in enumerate(markers, start=1):
        if marker.k != expected:
            raise ValidationError(f'marker rows must be numbered 1..N in order, got k={marker.k} at position {expected}')
        if marker.t_end <= marker.t_start:
            raise ValidationError(f'marker k={marker.k} has t_end <= t_start')
        if marker.distance is not None and not marker.distance > 0:
            raise ValidationError(f'marker k={marker.k} has a non-positive distance')

    for before, after in zip(markers, markers[1:]):
        if not np.isclose(before.t_end, after.t_start, rtol=0.0, atol=1e-9):
            raise ValidationError(f'marker k={after.k} does not start where k={before.k} ends')

    return markers


def _check_sparsity(segments: list[Segment]) -> None:
    for segment in segments:
        for sensor in Sensor:
            start, stop = segment.frames(sensor)
            if stop - start < MIN_SEGMENT_FRAMES:
                raise SparsityError(
                    f'segment k={segment.k} holds {stop - start} {sensor.name} frames, '
                    f'at least {MIN_SEGMENT_FRAMES} are needed'
                )


def segment_equal_count(
    knee: SampleStream,
    ankle: SampleStream,
    N: int,
    *,
    distance: float = 1.0,
    markers: Optional[Sequence[Marker]] = None,
) -> list[Segment]:
    """Partitions both streams into ``N`` subintervals.

    Without markers the common span is cut into ``N`` equal-duration pieces and
    every frame of both streams lands in exactly one segment. With markers the
    boundaries follow the marker times; frames outside the marked span are
    dropped.

    Raises
    ------
    AlignmentError
        The two streams' spans differ by more than one second.
    SparsityError
        A segment holds fewer than eight frames of either sensor.
    """
    if N < 2:
        raise ArityError(f'at least two segments are needed, got N={N}')

    if abs(knee.start - ankle.start) > MAX_SPAN_MISMATCH_S or abs(knee.end - ankle.end) > MAX_SPAN_MISMATCH_S:
        raise AlignmentError(
            f'knee span [{knee.start:.3f}, {knee.end:.3f}) and ankle span '
            f'[{ankle.start:.3f}, {ankle.end:.3f}) differ by more than {MAX_SPAN_MISMATCH_S:g}s'
        )

    if markers is not None:
        segments = _segment_from_markers(knee, ankle, N, distance, markers)
    else:
        t0 = min(knee.start, ankle.start)
        t1 = max(knee.end, ankle.end)
        edges = t0 + (t1 - t0) * np.arange(N + 1) / N
        inner = edges[1:-1]
        knee_cuts = np.concatenate(([0], np.searchsorted(knee.t, inner, side='left'), [len(knee)]))
        ankle_cuts = np.concatenate(([0], np.searchsorted(ankle.t, inner, side='left'), [len(ankle)]))
        segments = [
            Segment(
                k=k + 1,
                knee=(int(knee_cuts[k]), int(knee_cuts[k + 1])),
                ankle=(int(ankle_cuts[k]), int(ankle_cuts[k + 1])),
                t_start=float(edges[k]),
                t_end=float(edges[k + 1]),
                distance=distance,
            )
            for k in range(N)
        ]

    _check_sparsity(segments)
    log.info('Segmented run into %s of %s each on average', format(plural(N), 'subinterval'),
             readable_seconds(sum(s.duration for s in segments) / N))
    return segments


def _segment_from_markers(
    knee: SampleStream,
    ankle: SampleStream,
    N: int,
    distance: float,
    markers: Sequence[Marker],
) -> list[Segment]:
    if len(markers) != N:
        raise ArityError(f'marker file holds {len(markers)} rows but N={N}')

    starts = np.array([m.t_start for m in markers] + [markers[-1].t_end])

    def cuts(stream: SampleStream) -> np.ndarray:
        return np.searchsorted(stream.t, starts, side='left')

    knee_cuts, ankle_cuts = cuts(knee), cuts(ankle)
    dropped = (len(knee) - int(knee_cuts[-1] - knee_cuts[0])) + (len(ankle) - int(ankle_cuts[-1] - ankle_cuts[0]))
    if dropped:
        log.warning('Dropped %s outside the marked span', format(plural(dropped), 'frame'))

    return [
        Segment(
            k=m.k,
            knee=(int(knee_cuts[i]), int(knee_cuts[i + 1])),
            ankle=(int(ankle_cuts[i]), int(ankle_cuts[i + 1])),
            t_start=m.t_start,
            t_end=m.t_end,
            distance=distance if m.distance is None else m.distance,
        )
        for i, m in enumerate(markers)
    ]


def write_markers(segments: Sequence[Segment], path: str | os.PathLike[str]) -> None:
    frame = pd.DataFrame(
        [(s.k, s.t_start, s.t_end, s.distance) for s in segments],
        columns=list(MARKER_COLUMNS),
    )
    frame.to_csv(path, index=False, float_format='%.9f', lineterminator='\n')


def average_speed(segment: Segment) -> float:
    """Observed average speed over the segment in m/s.

    Raises
    ------
    ZeroDurationError
        The segment has zero duration.
    """
    if segment.duration == 0:
        raise ZeroDurationError(f'segment k={segment.k} has zero duration')
    return segment.distance / segment.duration


def segment_speeds(segments: Sequence[Segment]) -> np.ndarray:
    return np.array([average_speed(s) for s in segments], dtype=np.float64)
