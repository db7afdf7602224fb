import re
from typing import Any, Callable, Dict


ObjectHook = Callable[[Dict[str, Any]], Any]

RATE_HEADER = re.compile(r'^#\s*rate_hz\s*=\s*(?P<rate>[0-9]+(?:\.[0-9]+)?)\s*$')
STREAM_COLUMNS = ('t', 'ax', 'ay', 'az')
MARKER_COLUMNS = ('k', 't_start', 't_end', 'distance_m')

NOMINAL_RATE_HZ = 100.0
MAX_GAP_PERIODS = 5
MAX_SPAN_MISMATCH_S = 1.0
MIN_SEGMENT_FRAMES = 8

AXIS_COUNT = 3
FEATURE_COUNT = 18

DEFAULT_SEGMENTS = 44
DEFAULT_LAG = 4
DEFAULT_LAGS = (0, 1, 2, 3, 4)
SUBINTERVAL_DISTANCE_M = 113.6

SCHEMA_VERSION = 1
CSV_FLOAT_FORMAT = '%.6f'
RMS_CONVENTION = 'RMS index error = 100 * sqrt(mean((k_hat - k)^2)) / N (reporting convention)'

# per sensor, variances, skewnesses, kurtoses over axes 1..3.
FEATURE_NAMES: tuple[str, ...] = tuple(
    f'{moment}_s{sensor}_a{axis}'
    for sensor in (1, 2)
    for moment in ('var', 'skew', 'kurt')
    for axis in (1, 2, 3)
)

VARIANCE_POSITIONS = (0, 1, 2, 9, 10, 11)
KURTOSIS_POSITIONS = (6, 7, 8, 15, 16, 17)

RUNNER_PRESETS: dict[str, dict[str, float]] = {
    'runner1': {'mass': 90.0, 'subinterval_distance': SUBINTERVAL_DISTANCE_M},
    'runner2': {'mass': 52.0, 'subinterval_distance': SUBINTERVAL_DISTANCE_M},
    'runner3': {'mass': 77.0, 'subinterval_distance': SUBINTERVAL_DISTANCE_M},
}
TRACE_LEVEL = 5
