"""z-anonymity building blocks.

Measurements are discretised into geometric buckets, each gateway keeps a
sliding window of what its sensors reported, and :class:`CentralizedZAnonymizer`
is the sequential reference that publishes a tuple as soon as its value has
been seen at least ``z`` times inside the window.

Time is counted in clock cycles and the window is ``delta_t`` cycles wide:
an entry stamped ``ts`` is alive at ``now`` iff ``now - ts < delta_t``.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

__all__ = [
    "BucketConfig",
    "bucketize",
    "bucket_representative",
    "MeasurementTuple",
    "WindowEntry",
    "WindowLog",
    "publishable_count",
    "CentralizedZAnonymizer",
]


@dataclass(frozen=True)
class BucketConfig:
    """Geometric buckets: ``q`` per doubling, everything up to ``v0`` in bucket 0."""

    v0: float = 0.01
    q: int = 8

    def __post_init__(self) -> None:
        if not (self.v0 > 0 and math.isfinite(self.v0)):
            raise ValueError(f"v0 must be positive and finite, got {self.v0}")
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")


def bucketize(value, cfg: BucketConfig = BucketConfig()):
    """Map a measurement (or an array of them) to its bucket index.

    Index 0 holds ``[0, v0]``; above that the index is
    ``floor(q * log2(value / v0)) + 1``, so bucket width grows with value.
    """
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("measurement must be finite")
    if np.any(arr < 0):
        raise ValueError("measurement must be non-negative")
    if arr.ndim == 0:
        v = float(arr)
        if v <= cfg.v0:
            return 0
        return math.floor(cfg.q * math.log2(v / cfg.v0)) + 1
    out = np.zeros(arr.shape, dtype=np.int64)
    above = arr > cfg.v0
    out[above] = np.floor(cfg.q * np.log2(arr[above] / cfg.v0)).astype(np.int64) + 1
    return out


def bucket_representative(index: int, cfg: BucketConfig = BucketConfig()) -> float:
    """Geometric midpoint of a bucket (``v0 / 2`` for bucket 0)."""
    if index < 0:
        raise ValueError("bucket index must be non-negative")
    if index == 0:
        return cfg.v0 / 2
    return cfg.v0 * 2.0 ** ((index - 0.5) / cfg.q)


class MeasurementTuple(NamedTuple):
    bucket: int
    reporter_id: int
    timestamp: int


class WindowEntry(NamedTuple):
    bucket: int
    sensor_id: int
    timestamp: int


class WindowLog:
    """A gateway's record of the buckets its sensors reported within the window."""

    def __init__(self, entries: Iterable[WindowEntry] = ()) -> None:
        self._entries: deque[WindowEntry] = deque()
        for e in entries:
            self.append(*e)

    def append(self, bucket: int, sensor_id: int, timestamp: int) -> None:
        if self._entries and timestamp < self._entries[-1].timestamp:
            raise ValueError("window entries must be appended in timestamp order")
        self._entries.append(WindowEntry(int(bucket), int(sensor_id), int(timestamp)))

    def apply_delta_t(self, now: int, delta_t: int) -> None:
        """Drop every entry with ``now - timestamp >= delta_t``."""
        if delta_t < 1:
            raise ValueError(f"delta_t must be >= 1, got {delta_t}")
        if self._entries and self._entries[-1].timestamp > now:
            raise ValueError("window holds entries from the future")
        while self._entries and now - self._entries[0].timestamp >= delta_t:
            self._entries.popleft()

    def counts(self) -> Counter[int]:
        """Per-bucket occurrence counts over the whole window."""
        return Counter(e.bucket for e in self._entries)

    def total(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"WindowLog({list(self._entries)!r})"


def publishable_count(c_window: int, c_current: int, z: int) -> int:
    """How many of this cycle's occurrences of one value may be published.

    ``c_window`` counts the value over the whole window (current cycle
    included), ``c_current`` only over the current cycle.
    """
    if z < 1:
        raise ValueError(f"z must be >= 1, got {z}")
    if not 0 <= c_current <= c_window:
        raise ValueError(f"need 0 <= c_current <= c_window, got {c_current}, {c_window}")
    return min(c_current, max(0, c_window - (z - 1)))


class CentralizedZAnonymizer:
    """Sequential z-anonymity over a stream of measurement tuples.

    Each arriving tuple increments its value's window count (after expiring
    occurrences older than ``delta_t``) and is published iff that count has
    reached ``z``.
    """

    def __init__(self, z: int, delta_t: int) -> None:
        if z < 1:
            raise ValueError(f"z must be >= 1, got {z}")
        if delta_t < 1:
            raise ValueError(f"delta_t must be >= 1, got {delta_t}")
        self.z = z
        self.delta_t = delta_t
        self._seen: dict[int, deque[int]] = {}
        self._last_ts: int | None = None

    def step(self, tup: MeasurementTuple) -> bool:
        """Process one tuple; ``True`` means publish."""
        ts = tup.timestamp
        if self._last_ts is not None and ts < self._last_ts:
            raise ValueError(f"out-of-order timestamp {ts} after {self._last_ts}")
        self._last_ts = ts
        times = self._seen.setdefault(tup.bucket, deque())
        while times and ts - times[0] >= self.delta_t:
            times.popleft()
        times.append(ts)
        return len(times) >= self.z

    def window_count(self, bucket: int, now: int) -> int:
        times = self._seen.get(bucket, ())
        return sum(1 for t in times if now - t < self.delta_t)
