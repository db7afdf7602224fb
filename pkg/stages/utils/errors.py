from __future__ import annotations

from typing import Any, Optional


class StrideError(Exception):
    """Base class for every error raised by the pipeline.

    Each subclass carries the process exit code the launcher uses when the
    error escapes a command.
    """

    exit_code: int = 1

    def __init__(self, message: Optional[str] = None, *args: Any) -> None:
        if message is not None:
            super().__init__(message.strip(), *args)
        else:
            super().__init__(*args)


class ValidationError(StrideError):
    """Input violated a documented precondition or invariant."""

    exit_code = 2


class ParseError(ValidationError):
    """A recording or marker file row could not be parsed.

    Attributes
    ----------
    line: Optional[int]
        The 1-based line number of the offending row, if known.
    """

    def __init__(self, message: str, *, line: Optional[int] = None) -> None:
        self.line: Optional[int] = line
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)


class OrderingError(ValidationError):
    """Timestamps are not strictly increasing."""


class GapError(ValidationError):
    """Two consecutive frames are further apart than the gap tolerance."""


class AlignmentError(ValidationError):
    """Knee and ankle streams do not cover the same span."""


class SparsityError(ValidationError):
    """A segment or sample sequence holds too few frames."""


class ArityError(ValidationError):
    """An operation received the wrong number of items."""


class RangeError(ValidationError):
    """A subinterval index is outside ``[1, N]``."""


class ShapeError(ValidationError):
    """Array dimensions do not match the model."""


class LagError(ValidationError):
    """The measurement lag is not in ``[0, N - 1]``."""


class ConfigError(ValidationError):
    """A settings or synthetic spec document is invalid."""


class SchemaVersionError(ValidationError):
    """The model file schema version is not recognised."""


class IntegrityError(ValidationError):
    """A recorded input digest does not match the file on disk."""


class InputError(StrideError):
    """An input file is missing or unreadable."""

    exit_code = 3


class NumericalError(StrideError):
    """A computation is undefined or unstable for the given data."""

    exit_code = 4


class ZeroDurationError(NumericalError):
    """Average speed requested for a segment of zero duration."""


class DegenerateSignalError(NumericalError):
    """A sample sequence has zero variance, so skewness and kurtosis are undefined.

    Attributes
    ----------
    sensor: Optional[str]
        The sensor name, once known.
    axis: Optional[int]
        The 1-based axis, once known.
    k: Optional[int]
        The subinterval index, once known.
    """

    def __init__(
        self,
        message: str = 'constant signal has zero variance',
        *,
        sensor: Optional[str] = None,
        axis: Optional[int] = None,
        k: Optional[int] = None,
    ) -> None:
        self.reason: str = message
        self.sensor: Optional[str] = sensor
        self.axis: Optional[int] = axis
        self.k: Optional[int] = k

        where = []
        if k is not None:
            where.append(f'k={k}')
        if sensor is not None:
            where.append(f'sensor={sensor}')
        if axis is not None:
            where.append(f'axis={axis}')

        super().__init__(f'{message} ({", ".join(where)})' if where else message)

    def located(self, **where: Any) -> DegenerateSignalError:
        """Returns a copy of this error with more location fields filled in."""
        fields = {'sensor': self.sensor, 'axis': self.axis, 'k': self.k}
        fields.update({key: value for key, value in where.items() if value is not None})
        return DegenerateSignalError(self.reason, **fields)


class DegenerateFeatureError(NumericalError):
    """A feature column has zero variance over the training set."""

    def __init__(self, feature: str) -> None:
        self.feature: str = feature
        super().__init__(f'feature {feature} has zero variance over the training runs')


class NoiseDominatesError(NumericalError):
    """The feature's second moment does not exceed the measurement noise variance."""


class InstabilityError(NumericalError):
    """The prediction coefficient describes an unstable process."""


class OracleFailure(NumericalError):
    """A reference computation did not converge."""
