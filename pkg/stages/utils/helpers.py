from __future__ import annotations

import datetime
import hashlib
import json
import os
import time
from typing import Any, Optional

import numpy as np


class BasicJSONEncoder(json.JSONEncoder):
    """A basic JSON encoder that also understands numpy scalars and arrays."""

    def default(self, o: Any) -> Any:
        if isinstance(o, np.ndarray):
            return o.tolist()
        elif isinstance(o, np.integer):
            return int(o)
        elif isinstance(o, np.floating):
            return float(o)
        return super().default(o)


class TimeMesh:
    """A context manager that measures the time it takes to execute a block of code."""

    def __init__(self):
        self._start: Optional[float] = None
        self._end: Optional[float] = None

    def __enter__(self) -> TimeMesh:
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self._end = time.perf_counter()

    def __repr__(self) -> str:
        return f'<TimeMesh time={self.time} start={self._start} end={self._end}>'

    @property
    def time(self) -> float:
        if self._end is None or self._start is None:
            raise ValueError('TimeMesh has not yet ended.')
        return self._end - self._start


def file_digest(path: str | os.PathLike[str]) -> str:
    """Returns the SHA-256 hex digest of a file."""
    digest = hashlib.sha256()
    with open(path, 'rb') as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def utcnow() -> datetime.datetime:
    """Current UTC time, pinned by ``SOURCE_DATE_EPOCH`` for reproducible outputs."""
    epoch = os.environ.get('SOURCE_DATE_EPOCH')
    if epoch:
        return datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
    return datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0)
