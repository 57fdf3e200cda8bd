"""Counting structures exchanged around the gateway ring.

Two backends share one interface (``add``, ``remove``, ``count``,
``subtract_clamp``, ``serialize``):

* :class:`CountingFilter` is a counting Bloom filter with ``m`` counters of
  ``b`` bits each and ``k`` hash functions. Counter arithmetic wraps modulo
  ``2**b`` so a random perturbation added by the coordinator cancels exactly
  when it is removed again.
* :class:`ExactCounter` is an exact multiset. It is the oracle backend and
  the structure used when the scenario asks for exact counting.

Hash indices use double hashing, ``h_j(x) = (g1(x) + j * g2(x)) mod m`` with
``g1``/``g2`` taken from a keyed BLAKE2b digest of the element's 8-byte
little-endian encoding. ``g2`` is forced coprime to ``m`` so the ``k``
indices of one element are pairwise distinct whenever ``k <= m``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Protocol

import numpy as np

__all__ = [
    "FilterParams",
    "CountingFilter",
    "ExactCounter",
    "CountingStructure",
    "MaskedFilterError",
    "size_parameters",
    "estimated_fp_rate",
    "hash_indices",
    "HEADER_FORMAT",
    "HEADER_SIZE",
]

# m (u64), k (u64), b (u32), hash_seed (u64), little-endian, no padding.
HEADER_FORMAT = "<QQIQ"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)

_EXACT_HEADER = "<I"
_EXACT_ENTRY = "<qQ"


class MaskedFilterError(RuntimeError):
    """Raised when a masked filter is read as if it held real counts."""


@dataclass(frozen=True)
class FilterParams:
    m: int
    k: int
    b: int = 8
    hash_seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 1 <= self.b <= 64:
            raise ValueError(f"b must be in [1, 64], got {self.b}")
        if not 0 <= self.hash_seed < 2**64:
            raise ValueError("hash_seed must fit in 64 unsigned bits")

    @property
    def modulus(self) -> int:
        return 1 << self.b

    @property
    def payload_size(self) -> int:
        """Bytes needed for the packed counter array."""
        return (self.m * self.b + 7) // 8

    @property
    def serialized_size(self) -> int:
        return HEADER_SIZE + self.payload_size

    @classmethod
    def for_capacity(
        cls, expected_elements: int, target_fp: float, b: int = 8, hash_seed: int = 0
    ) -> "FilterParams":
        m, k, _ = size_parameters(expected_elements, target_fp)
        return cls(m=m, k=k, b=b, hash_seed=hash_seed)


def size_parameters(expected_elements: int, target_fp: float) -> tuple[int, int, float]:
    """Standard counting-Bloom sizing for a target false-positive rate.

    Returns ``(m, k, k_raw)``. ``m`` is the nearest integer to
    ``-n ln(p) / (ln 2)^2`` and ``k`` the nearest integer to ``m/n ln 2``,
    both clamped to at least 1. ``k_raw`` is the unrounded optimum computed
    from the unrounded ``m``.
    """
    if expected_elements < 1:
        raise ValueError(f"expected_elements must be >= 1, got {expected_elements}")
    if not 0.0 < target_fp < 1.0:
        raise ValueError(f"target_fp must be in (0, 1), got {target_fp}")
    m_raw = -expected_elements * math.log(target_fp) / math.log(2) ** 2
    m = max(1, math.floor(m_raw + 0.5))
    k_raw = m_raw / expected_elements * math.log(2)
    k = max(1, math.floor(m / expected_elements * math.log(2) + 0.5))
    return m, k, k_raw


def estimated_fp_rate(m: int, k: int, n: int) -> float:
    """Classic approximation ``(1 - exp(-k n / m))^k``."""
    return (1.0 - math.exp(-k * n / m)) ** k


def _encode_element(element: int) -> bytes:
    return int(element).to_bytes(8, "little", signed=True)


@lru_cache(maxsize=1 << 16)
def hash_indices(element: int, m: int, k: int, hash_seed: int) -> tuple[int, ...]:
    """The ``k`` counter indices of ``element``."""
    digest = hashlib.blake2b(
        _encode_element(element), digest_size=16, key=hash_seed.to_bytes(8, "little")
    ).digest()
    g1 = int.from_bytes(digest[:8], "little") % m
    if m == 1:
        return (0,) * k
    g2 = 1 + int.from_bytes(digest[8:], "little") % (m - 1)
    while math.gcd(g2, m) != 1:
        g2 = g2 % (m - 1) + 1
    return tuple((g1 + j * g2) % m for j in range(k))


class CountingStructure(Protocol):
    """What the ring protocol needs from a counting backend."""

    def add(self, element: int, amount: int = 1) -> None: ...

    def remove(self, element: int) -> None: ...

    def count(self, element: int) -> int: ...

    def subtract_clamp(self, delta: int) -> None: ...

    def serialize(self) -> bytes: ...

    def copy(self): ...


class CountingFilter:
    """Counting Bloom filter with modular ``b``-bit counters.

    The filter is owned by one party at a time and mutated in place. The
    ``masked`` flag is local bookkeeping set by the secure-sum layer; it is
    not part of the wire format.
    """

    def __init__(
        self, params: FilterParams, counters: np.ndarray | None = None, *, strict: bool = False
    ) -> None:
        self.params = params
        if counters is None:
            counters = np.zeros(params.m, dtype=np.uint64)
        else:
            counters = np.asarray(counters, dtype=np.uint64).copy()
            if counters.shape != (params.m,):
                raise ValueError(f"expected {params.m} counters, got shape {counters.shape}")
            if params.b < 64 and np.any(counters >= np.uint64(params.modulus)):
                raise ValueError(f"counter values must be < 2**{params.b}")
        self.counters = counters
        self.masked = False
        self.strict = strict

    @property
    def _mask(self) -> np.uint64:
        return np.uint64(self.params.modulus - 1)

    def indices(self, element: int) -> tuple[int, ...]:
        p = self.params
        return hash_indices(int(element), p.m, p.k, p.hash_seed)

    def add(self, element: int, amount: int = 1) -> None:
        if amount < 1:
            raise ValueError(f"amount must be positive, got {amount}")
        inc = np.uint64(amount % self.params.modulus)
        # np.add.at applies repeated indices once per occurrence (k > m case).
        np.add.at(self.counters, list(self.indices(element)), inc)
        self.counters &= self._mask

    def remove(self, element: int) -> None:
        idx = list(self.indices(element))
        if self.strict and not self.masked and self.count(element) < 1:
            raise ValueError(f"removing element {element} whose count is 0")
        np.subtract.at(self.counters, idx, np.uint64(1))
        self.counters &= self._mask

    def count(self, element: int) -> int:
        self._require_unmasked("count")
        return int(self.counters[list(self.indices(element))].min())

    def __contains__(self, element: int) -> bool:
        return self.count(element) > 0

    def subtract_clamp(self, delta: int) -> None:
        """Per-counter ``c <- max(0, c - delta)``."""
        self._require_unmasked("subtract_clamp")
        if delta < 0:
            raise ValueError(f"delta must be non-negative, got {delta}")
        if delta == 0:
            return
        d = np.uint64(min(delta, self.params.modulus - 1))
        self.counters = np.where(self.counters > d, self.counters - d, np.uint64(0))

    def is_empty(self) -> bool:
        return not self.counters.any()

    def copy(self) -> "CountingFilter":
        new = CountingFilter(self.params, self.counters, strict=self.strict)
        new.masked = self.masked
        return new

    def _require_unmasked(self, op: str) -> None:
        if self.masked:
            raise MaskedFilterError(f"{op} on a masked filter")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CountingFilter):
            return NotImplemented
        return self.params == other.params and bool(np.array_equal(self.counters, other.counters))

    def __repr__(self) -> str:
        p = self.params
        return f"CountingFilter(m={p.m}, k={p.k}, b={p.b}, load={int(np.count_nonzero(self.counters))})"

    # --- wire format -------------------------------------------------------

    def serialize(self) -> bytes:
        p = self.params
        header = struct.pack(HEADER_FORMAT, p.m, p.k, p.b, p.hash_seed)
        return header + _pack_counters(self.counters, p.b)

    @classmethod
    def deserialize(cls, data: bytes) -> "CountingFilter":
        if len(data) < HEADER_SIZE:
            raise ValueError(f"truncated filter header: {len(data)} < {HEADER_SIZE} bytes")
        m, k, b, seed = struct.unpack_from(HEADER_FORMAT, data)
        if not 1 <= b <= 64:
            raise ValueError(f"counter width b={b} outside [1, 64]")
        params = FilterParams(m=m, k=k, b=b, hash_seed=seed)
        body = memoryview(data)[HEADER_SIZE:]
        if len(body) != params.payload_size:
            raise ValueError(
                f"filter payload is {len(body)} bytes, expected {params.payload_size}"
            )
        return cls(params, _unpack_counters(bytes(body), m, b))


def _pack_counters(counters: np.ndarray, b: int) -> bytes:
    if b in (8, 16, 32, 64):
        return counters.astype(f"<u{b // 8}").tobytes()
    bits = np.unpackbits(counters.astype("<u8").view(np.uint8), bitorder="little")
    bits = bits.reshape(-1, 64)[:, :b].ravel()
    return np.packbits(bits, bitorder="little").tobytes()


def _unpack_counters(body: bytes, m: int, b: int) -> np.ndarray:
    if b in (8, 16, 32, 64):
        return np.frombuffer(body, dtype=f"<u{b // 8}", count=m).astype(np.uint64)
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="little")[: m * b]
    full = np.zeros((m, 64), dtype=np.uint8)
    full[:, :b] = bits.reshape(m, b)
    return np.packbits(full, axis=1, bitorder="little").view("<u8").ravel().astype(np.uint64)


class ExactCounter:
    """Exact multiset with the same interface as :class:`CountingFilter`."""

    def __init__(self, entries: dict[int, int] | None = None) -> None:
        self.entries: Counter[int] = Counter()
        for element, c in (entries or {}).items():
            if c < 0:
                raise ValueError("counts must be non-negative")
            if c:
                self.entries[int(element)] = int(c)

    def add(self, element: int, amount: int = 1) -> None:
        if amount < 1:
            raise ValueError(f"amount must be positive, got {amount}")
        self.entries[int(element)] += amount

    def remove(self, element: int) -> None:
        element = int(element)
        if self.entries.get(element, 0) < 1:
            raise KeyError(f"element {element} is not in the counter")
        self.entries[element] -= 1
        if not self.entries[element]:
            del self.entries[element]

    def count(self, element: int) -> int:
        return self.entries.get(int(element), 0)

    def __contains__(self, element: int) -> bool:
        return self.count(element) > 0

    def subtract_clamp(self, delta: int) -> None:
        if delta < 0:
            raise ValueError(f"delta must be non-negative, got {delta}")
        self.entries = Counter({x: c - delta for x, c in self.entries.items() if c > delta})

    def is_empty(self) -> bool:
        return not self.entries

    def copy(self) -> "ExactCounter":
        return ExactCounter(dict(self.entries))

    def update(self, elements: Iterable[int]) -> None:
        for x in elements:
            self.add(x)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExactCounter):
            return NotImplemented
        return self.entries == other.entries

    def __repr__(self) -> str:
        return f"ExactCounter({dict(sorted(self.entries.items()))})"

    def serialize(self) -> bytes:
        items = sorted(self.entries.items())
        out = [struct.pack(_EXACT_HEADER, len(items))]
        out.extend(struct.pack(_EXACT_ENTRY, x, c) for x, c in items)
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "ExactCounter":
        hsize = struct.calcsize(_EXACT_HEADER)
        esize = struct.calcsize(_EXACT_ENTRY)
        if len(data) < hsize:
            raise ValueError("truncated exact-counter payload")
        (n,) = struct.unpack_from(_EXACT_HEADER, data)
        if len(data) != hsize + n * esize:
            raise ValueError(f"exact-counter payload length {len(data)} does not match {n} entries")
        entries = dict(struct.iter_unpack(_EXACT_ENTRY, data[hsize:]))
        return cls(entries)
