"""Ring secure summation over a counting filter's counter array.

The coordinator adds a uniformly random vector to an empty filter before
it leaves, every other gateway adds its own elements on top, and the
coordinator subtracts the same vector once the filter comes back. All
arithmetic is modulo ``2**b``, so the perturbation cancels exactly and
each intermediate counter is uniform over the group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sketch import CountingFilter

__all__ = ["PerturbationVector", "HeadroomError", "sample_perturbation", "mask", "unmask"]


class HeadroomError(RuntimeError):
    """An unmasked counter is larger than any real count could be."""


@dataclass(frozen=True, eq=False)
class PerturbationVector:
    values: np.ndarray
    m: int
    b: int

    def __post_init__(self) -> None:
        if self.values.shape != (self.m,):
            raise ValueError(f"perturbation has shape {self.values.shape}, expected ({self.m},)")

    @property
    def fingerprint(self) -> tuple[int, int]:
        return (self.m, self.b)

    @classmethod
    def zeros(cls, m: int, b: int) -> "PerturbationVector":
        return cls(np.zeros(m, dtype=np.uint64), m, b)


def sample_perturbation(
    m: int, b: int, rng: np.random.Generator, bound: int | None = None
) -> PerturbationVector:
    """Draw ``m`` components independently and uniformly from ``[0, bound)``.

    ``bound`` defaults to the full group ``2**b``. A bound of 1 yields the
    zero vector, which is handy for tracing a ring by hand.
    """
    modulus = 1 << b
    if bound is None:
        bound = modulus
    if not 1 <= bound <= modulus:
        raise ValueError(f"perturbation bound must be in [1, 2**{b}], got {bound}")
    values = rng.integers(0, bound, size=m, dtype=np.uint64, endpoint=False)
    return PerturbationVector(values, m, b)


def _check(filt: CountingFilter, r: PerturbationVector) -> None:
    if (filt.params.m, filt.params.b) != r.fingerprint:
        raise ValueError(
            f"perturbation sampled for (m, b)={r.fingerprint}, filter has "
            f"({filt.params.m}, {filt.params.b})"
        )


def mask(filt: CountingFilter, r: PerturbationVector) -> CountingFilter:
    """Return a masked copy: ``c_i <- (c_i + r_i) mod 2**b``."""
    _check(filt, r)
    out = filt.copy()
    out.counters = (out.counters + r.values) & np.uint64(filt.params.modulus - 1)
    out.masked = True
    return out


def unmask(
    filt: CountingFilter, r: PerturbationVector, ceiling: int | None = None
) -> CountingFilter:
    """Return an unmasked copy: ``c_i <- (c_i - r_i) mod 2**b``.

    ``ceiling`` is the plausibility bound on any real counter (the number
    of measurements in the window across the ring). A wrapped counter reads
    as ``true mod 2**b``, which never exceeds the ceiling, so overflow is
    refused up front whenever the ceiling itself reaches ``2**b``. A counter
    above the ceiling means the perturbation did not match the mask.
    """
    _check(filt, r)
    out = filt.copy()
    out.counters = (out.counters - r.values) & np.uint64(filt.params.modulus - 1)
    out.masked = False
    if ceiling is not None:
        if ceiling >= filt.params.modulus:
            raise HeadroomError(
                f"up to {ceiling} window entries may reach a counter but b={filt.params.b} "
                f"wraps at {filt.params.modulus}"
            )
        worst = int(out.counters.max(initial=0))
        if worst > ceiling:
            raise HeadroomError(
                f"unmasked counter {worst} exceeds ceiling {ceiling}; b={filt.params.b} "
                "is too small for this load"
            )
    return out
