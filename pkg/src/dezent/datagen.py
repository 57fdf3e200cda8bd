"""Synthetic smart-meter consumption for typed clients.

Each client type has a base level (kWh per 15-minute slot), a 96-slot daily
shape with mean 1, a relative noise level and a population share. The
default set is illustrative: levels follow typical German annual
consumption per client type, the shapes are smooth sums of daily bumps, and
the shares are a plausible district mix rather than measured data. Real
load profiles can be swapped in through :func:`load_profiles_csv`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "SLOTS_PER_DAY",
    "ClientTypeProfile",
    "default_profile_set",
    "assign_client_types",
    "measure",
    "load_profiles_csv",
    "save_profiles_csv",
]

SLOTS_PER_DAY = 96


@dataclass(frozen=True, eq=False)
class ClientTypeProfile:
    name: str
    base_level: float
    daily_shape: np.ndarray
    noise_sd: float
    share: float

    def __post_init__(self) -> None:
        shape = np.asarray(self.daily_shape, dtype=float)
        if shape.shape != (SLOTS_PER_DAY,):
            raise ValueError(f"{self.name}: daily_shape needs {SLOTS_PER_DAY} values")
        if np.any(shape < 0):
            raise ValueError(f"{self.name}: daily_shape must be non-negative")
        if self.base_level < 0 or self.noise_sd < 0 or self.share < 0:
            raise ValueError(f"{self.name}: base_level, noise_sd and share must be >= 0")
        object.__setattr__(self, "daily_shape", shape)


def _shape(bumps: Sequence[tuple[float, float, float]], floor: float) -> np.ndarray:
    """Daily curve from (hour, width_hours, height) bumps over a floor, mean 1."""
    hours = np.arange(SLOTS_PER_DAY) / 4.0
    curve = np.full(SLOTS_PER_DAY, floor)
    for centre, width, height in bumps:
        # circular distance so evening bumps wrap past midnight
        d = np.minimum(np.abs(hours - centre), 24 - np.abs(hours - centre))
        curve += height * np.exp(-0.5 * (d / width) ** 2)
    return curve / curve.mean()


def _kwh_per_slot(annual_kwh: float) -> float:
    return annual_kwh / (365 * SLOTS_PER_DAY)


def default_profile_set() -> list[ClientTypeProfile]:
    household = _shape([(7.5, 1.2, 0.8), (13.0, 1.5, 0.5), (19.5, 2.0, 1.4)], 0.5)
    return [
        ClientTypeProfile("household_1p", _kwh_per_slot(1500), household, 0.35, 0.33),
        ClientTypeProfile("household_2p", _kwh_per_slot(2500), household, 0.30, 0.30),
        ClientTypeProfile("household_3p", _kwh_per_slot(3500), household, 0.30, 0.13),
        ClientTypeProfile("household_4p", _kwh_per_slot(4250), household, 0.30, 0.11),
        ClientTypeProfile(
            "farm", _kwh_per_slot(9000), _shape([(5.5, 1.0, 1.6), (17.5, 1.2, 1.4)], 0.4), 0.25, 0.03
        ),
        ClientTypeProfile(
            "business", _kwh_per_slot(20000), _shape([(12.5, 3.5, 2.0)], 0.25), 0.20, 0.095
        ),
        # Rare on purpose; level sits inside the 3-4 person household band.
        ClientTypeProfile(
            "workshop", _kwh_per_slot(3900), _shape([(11.0, 3.0, 1.5)], 0.3), 0.30, 0.005
        ),
    ]


def _check_shares(profiles: Sequence[ClientTypeProfile]) -> np.ndarray:
    shares = np.array([p.share for p in profiles], dtype=float)
    if len(shares) == 0:
        raise ValueError("need at least one profile")
    if not math.isclose(shares.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"profile shares sum to {shares.sum()}, expected 1")
    return shares


def assign_client_types(
    n: int, profiles: Sequence[ClientTypeProfile], rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n`` type indices i.i.d. by share."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    shares = _check_shares(profiles)
    return rng.choice(len(profiles), size=n, p=shares)


def measure(profile: ClientTypeProfile, cycle_index: int, rng: np.random.Generator) -> float:
    """One 15-minute reading; always draws exactly one normal from ``rng``."""
    noise = rng.normal(0.0, 1.0) * profile.noise_sd
    slot = cycle_index % SLOTS_PER_DAY
    return profile.base_level * profile.daily_shape[slot] * max(0.0, 1.0 + noise)


_CSV_HEADER = ["name", "base_level", "noise_sd", "share"]


def load_profiles_csv(path: str | Path) -> list[ClientTypeProfile]:
    """Read profiles: header ``name,base_level,noise_sd,share`` (slot columns
    optional in the header), then one row per type with 96 multipliers."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:4]] != _CSV_HEADER:
        raise ValueError(f"{path}: header must start with {','.join(_CSV_HEADER)}")
    profiles = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != 4 + SLOTS_PER_DAY:
            raise ValueError(f"{path}:{lineno}: expected {4 + SLOTS_PER_DAY} columns, got {len(row)}")
        name, base, noise, share, *shape = row
        profiles.append(
            ClientTypeProfile(
                name.strip(), float(base), np.array(shape, dtype=float), float(noise), float(share)
            )
        )
    _check_shares(profiles)
    return profiles


def save_profiles_csv(profiles: Sequence[ClientTypeProfile], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CSV_HEADER + [f"slot_{i}" for i in range(SLOTS_PER_DAY)])
        for p in profiles:
            w.writerow(
                [p.name, repr(p.base_level), repr(p.noise_sd), repr(p.share)]
                + [repr(float(v)) for v in p.daily_shape]
            )
