"""Steady-state scalar filtering of on-line feature observations.

Each feature is filtered independently with the one-step recursion

    x_k = (1 - L) A x_{k-1} + L z_k

where the gain ``L = P / (P + R)`` comes from the stationary solution ``P``
of the scalar Riccati equation ``P = A (P - L P) A + Q``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from stages.utils.errors import (
    ArityError,
    InstabilityError,
    NoiseDominatesError,
    SparsityError,
    ValidationError,
)

if TYPE_CHECKING:
    from launcher import get_logger
    log = get_logger(__name__)
else:
    log = logging.getLogger(__name__)

RICCATI_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FilterParams:
    """Per-feature filter quantities."""

    A: float
    R: float
    Q: float
    P: float
    L: float

    @property
    def riccati_residual(self) -> float:
        return abs(self.P - self.A * (self.P - self.L * self.P) * self.A - self.Q)

    def validate(self) -> None:
        if not self.R > 0:
            raise ValidationError(f'measurement noise variance must be positive, got R={self.R}')
        if self.Q < 0 or self.P < 0:
            raise ValidationError(f'Q and P must be non-negative, got Q={self.Q}, P={self.P}')
        if not 0 <= self.L < 1:
            raise ValidationError(f'filter gain must lie in [0, 1), got L={self.L}')
        scale = max(1.0, abs(self.P), abs(self.Q))
        if self.riccati_residual > RICCATI_TOLERANCE * scale:
            raise ValidationError(f'P={self.P} does not solve the Riccati equation (residual {self.riccati_residual:.3e})')

    def to_dict(self) -> dict[str, float]:
        return {'A': self.A, 'R': self.R, 'Q': self.Q, 'P': self.P, 'L': self.L}

    @classmethod
    def from_dict(cls, data: dict) -> FilterParams:
        return cls(*(float(data[key]) for key in ('A', 'R', 'Q', 'P', 'L')))

    def scaled(self, factor: float) -> FilterParams:
        """Parameters for the same filter on observations multiplied by ``factor``.

        The recursion is linear, so ``A`` and ``L`` are unchanged while the
        variances scale with ``factor ** 2``.
        """
        f2 = factor * factor
        return FilterParams(self.A, self.R * f2, self.Q * f2, self.P * f2, self.L)


def solve_riccati(A: float, Q: float, R: float) -> tuple[float, float]:
    """Stationary error variance ``P`` and gain ``L`` of the scalar filter.

    Substituting ``L = P / (P + R)`` into the Riccati equation leaves
    ``P^2 + P (R (1 - A^2) - Q) - Q R = 0``, whose non-negative root is ``P``.

    Raises
    ------
    InstabilityError
        ``|A| >= 1`` while ``Q > 0``.
    """
    if not R > 0:
        raise ValidationError(f'measurement noise variance must be positive, got R={R}')
    if Q < 0:
        raise ValidationError(f'input variance must be non-negative, got Q={Q}')
    if abs(A) >= 1 and Q > 0:
        raise InstabilityError(f'|A|={abs(A):.6g} >= 1 describes an unstable process')

    b = R * (1.0 - A * A) - Q
    root = math.sqrt(b * b + 4.0 * Q * R)
    # pick the cancellation-free form of the positive root
    if b > 0:
        P = 2.0 * Q * R / (b + root)
    else:
        P = (root - b) / 2.0

    return P, P / (P + R)


def estimate_params(z: Sequence[float] | np.ndarray, R: float) -> FilterParams:
    """Estimates ``A`` and ``Q`` of one feature from its observations.

    ``A = E{z_{k+1} z_k} / (E{z_k z_k} - R)`` and
    ``Q = E{z_k z_k} - R - A (E{z_k z_k} - R) A``, with negative ``Q`` clamped to 0.

    Raises
    ------
    NoiseDominatesError
        ``E{z_k z_k} <= R``: at this ``R`` the feature is pure noise.
    InstabilityError
        The estimated ``|A| >= 1``, whatever the clamped ``Q``.
    """
    series = np.asarray(z, dtype=np.float64)
    if series.ndim != 1:
        raise ArityError('filter parameters are estimated from one feature at a time')
    if series.shape[0] < 3:
        raise SparsityError(f'at least 3 observations are needed, got {series.shape[0]}')
    if not R > 0:
        raise ValidationError(f'measurement noise variance must be positive, got R={R}')

    second = float(np.mean(series * series))
    lagged = float(np.mean(series[1:] * series[:-1]))
    signal = second - R
    if signal <= 0:
        raise NoiseDominatesError(f'E{{z z}}={second:.6g} does not exceed R={R:.6g}')

    A = lagged / signal
    Q = signal - A * signal * A
    if Q < 0:
        log.warning('Input variance estimate %.6g is negative, clamping to 0', Q)
        Q = 0.0
    if abs(A) >= 1:
        raise InstabilityError(f'estimated |A|={abs(A):.6g} >= 1 describes an unstable process')

    P, L = solve_riccati(A, Q, R)
    params = FilterParams(A=A, R=R, Q=Q, P=P, L=L)
    log.debug('Estimated filter A=%.6g Q=%.6g R=%.6g P=%.6g L=%.6g', A, Q, R, P, L)
    return params


def filter_series(
    z: Sequence[float] | np.ndarray,
    params: FilterParams,
    x0: Optional[float] = None,
) -> np.ndarray:
    """Applies the recursion to a whole series.

    ``x_1`` is computed from ``x0``, which defaults to the first observation.
    """
    observations = np.asarray(z, dtype=np.float64)
    out = np.empty_like(observations)
    if observations.shape[0] == 0:
        return out

    state = FeatureFilter(params, x0=float(observations[0]) if x0 is None else x0)
    for i, value in enumerate(observations):
        out[i] = state.update(float(value))
    return out


class FeatureFilter:
    """Streaming filter state for one feature.

    An instance belongs to a single consumer; use one instance per feature and run.
    """

    __slots__ = ('params', '_decay', '_state')

    def __init__(self, params: FilterParams, *, x0: Optional[float] = None):
        self.params: FilterParams = params
        self._decay: float = (1.0 - params.L) * params.A
        self._state: Optional[float] = x0

    @property
    def state(self) -> Optional[float]:
        return self._state

    def update(self, z: float) -> float:
        """Consumes observation ``z`` and returns the filtered estimate."""
        previous = z if self._state is None else self._state
        self._state = self._decay * previous + self.params.L * z
        return self._state

    def __repr__(self) -> str:
        return f'<FeatureFilter A={self.params.A:.4g} L={self.params.L:.4g} state={self._state}>'
