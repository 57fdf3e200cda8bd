"""Run reports, CSV persistence and the collusion analysis.

CSV layout (one header row, then one row per cycle and metric)::

    cycle,metric,key,value,<config echo columns...>

``key`` is empty for scalar metrics, a client type name for the
``*_by_type`` metrics and a bucket index for the ``*_by_bucket`` ones.
Values are integers. The config echo columns repeat the run configuration
on every row (see :data:`ECHO_FIELDS`) so that sweep outputs can be
concatenated without losing provenance.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from .simnet import ScenarioConfig

__all__ = [
    "CycleMetrics",
    "MetricsReport",
    "SCALAR_METRICS",
    "ECHO_FIELDS",
    "publication_ratio",
    "collusion_probability",
    "collusion_monte_carlo",
    "coordination_bytes",
    "emit_csv",
    "read_csv",
    "summarize",
]

SCALAR_METRICS = (
    "measured",
    "published",
    "sn_gw_messages",
    "gw_gw_messages",
    "gw_ce_messages",
    "ring_bytes",
    "ring_payload_bytes",
    "publication_rounds",
    "window_distinct_buckets",
)
_MAPPED_METRICS = (
    "measured_by_type",
    "published_by_type",
    "measured_by_bucket",
    "published_by_bucket",
)

ECHO_FIELDS = (
    "scenario",
    "n_gateways",
    "max_sn_per_gw",
    "z",
    "delta_t_cycles",
    "n_cycles",
    "seed",
    "backend",
    "filter_m",
    "filter_k",
    "counter_bits",
    "force_p_pub",
    "p_min",
    "p_max",
    "id_masking",
    "request_messages",
    "v0",
    "q",
)

CSV_COLUMNS = ("cycle", "metric", "key", "value") + ECHO_FIELDS


@dataclass
class CycleMetrics:
    cycle: int
    measured: int = 0
    published: int = 0
    sn_gw_messages: int = 0
    gw_gw_messages: int = 0
    gw_ce_messages: int = 0
    ring_bytes: int = 0
    ring_payload_bytes: int = 0
    publication_rounds: int = 0
    window_distinct_buckets: int = 0
    measured_by_type: dict[str, int] = field(default_factory=dict)
    published_by_type: dict[str, int] = field(default_factory=dict)
    measured_by_bucket: dict[int, int] = field(default_factory=dict)
    published_by_bucket: dict[int, int] = field(default_factory=dict)


@dataclass
class MetricsReport:
    config: dict[str, Any] = field(default_factory=dict)
    cycles: list[CycleMetrics] = field(default_factory=list)

    def total(self, metric: str) -> int:
        return sum(getattr(c, metric) for c in self.cycles)

    def totals(self) -> dict[str, int]:
        return {m: self.total(m) for m in SCALAR_METRICS}

    def total_by(self, metric: str) -> dict:
        out: dict = {}
        for c in self.cycles:
            for key, v in getattr(c, metric).items():
                out[key] = out.get(key, 0) + v
        return out

    def publication_counts(self) -> dict[tuple[int, int], int]:
        """``(cycle, bucket) -> published`` for every non-zero entry."""
        return {
            (c.cycle, b): n for c in self.cycles for b, n in c.published_by_bucket.items() if n
        }


def publication_ratio(report: MetricsReport, client_type: str | None = None) -> float | None:
    """Published over measured tuples, or ``None`` when nothing was measured."""
    if client_type is None:
        measured, published = report.total("measured"), report.total("published")
    else:
        measured = report.total_by("measured_by_type").get(client_type, 0)
        published = report.total_by("published_by_type").get(client_type, 0)
    if measured == 0:
        return None
    return published / measured


def collusion_probability(n: int, k: int) -> float:
    """Chance that both ring neighbours of a fixed honest gateway are among
    ``k`` colluders, for a uniformly random ring of ``n`` gateways."""
    if n < 3:
        raise ValueError(f"need at least 3 gateways, got n={n}")
    if not 0 <= k <= n - 1:
        raise ValueError(f"k must be in [0, n-1], got k={k}")
    return k * (k - 1) / ((n - 1) * (n - 2))


def collusion_monte_carlo(
    n: int, k: int, trials: int, seed: int = 0, target: int = 0, chunk: int = 10_000
) -> float:
    """Fraction of random rings where both neighbours of ``target`` collude.

    Gateways are ``0..n-1``; the colluders are the ``k`` lowest ids other
    than ``target``. Each trial shuffles the full ring.
    """
    collusion_probability(n, k)  # argument validation
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= target < n:
        raise ValueError(f"target must be a gateway id in [0, {n})")
    others = [g for g in range(n) if g != target]
    attacker = np.zeros(n, dtype=bool)
    attacker[others[:k]] = True

    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        rings = rng.permuted(np.tile(np.arange(n, dtype=np.int32), (size, 1)), axis=1)
        pos = np.argmax(rings == target, axis=1)
        rows = np.arange(size)
        left = rings[rows, (pos - 1) % n]
        right = rings[rows, (pos + 1) % n]
        hits += int(np.count_nonzero(attacker[left] & attacker[right]))
        done += size
    return hits / trials


def coordination_bytes(
    cfg: "ScenarioConfig", passes: int = 3, report: MetricsReport | None = None
) -> float:
    """Ring payload bytes per cycle.

    For the counting Bloom filter this is ``passes * n_gateways * filter
    size``. The exact backend has no fixed size, so the per-cycle mean of
    the payload bytes measured in ``report`` is returned instead.
    """
    if cfg.backend == "cbf":
        return passes * cfg.n_gateways * cfg.filter_params().serialized_size
    if report is None:
        raise ValueError("the exact backend has no static size; pass the run report")
    if not report.cycles:
        return 0.0
    return report.total("ring_payload_bytes") / len(report.cycles)


# --- CSV ------------------------------------------------------------------


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _rows(report: MetricsReport):
    echo = [_fmt(report.config.get(f)) for f in ECHO_FIELDS]
    for c in report.cycles:
        for m in SCALAR_METRICS:
            yield [str(c.cycle), m, "", str(getattr(c, m))] + echo
        for m in _MAPPED_METRICS:
            for key, v in sorted(getattr(c, m).items()):
                yield [str(c.cycle), m, str(key), str(v)] + echo


def emit_csv(report: MetricsReport, path: str | Path) -> Path:
    """Write ``report`` atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            w.writerows(_rows(report))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _parse_echo(value: str) -> Any:
    if value == "":
        return None
    if value in ("true", "false"):
        return value == "true"
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def read_csv(path: str | Path) -> MetricsReport:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        report = MetricsReport()
        by_cycle: dict[int, CycleMetrics] = {}
        for row in reader:
            if not report.config:
                report.config = {f: _parse_echo(row[f]) for f in ECHO_FIELDS}
            cyc = int(row["cycle"])
            cm = by_cycle.get(cyc)
            if cm is None:
                cm = by_cycle[cyc] = CycleMetrics(cycle=cyc)
                report.cycles.append(cm)
            metric, value = row["metric"], int(row["value"])
            if metric in SCALAR_METRICS:
                setattr(cm, metric, value)
            elif metric in _MAPPED_METRICS:
                key = int(row["key"]) if metric.endswith("_bucket") else row["key"]
                getattr(cm, metric)[key] = value
            else:
                raise ValueError(f"{path}: unknown metric {metric!r}")
    return report


def summarize(reports: list[MetricsReport]) -> dict[str, float]:
    """Mean and sample standard deviation across seeds of the headline metrics."""
    per_run: dict[str, list[float]] = {
        "publication_ratio": [],
        "sn_gw_messages": [],
        "gw_gw_messages": [],
        "gw_ce_messages": [],
        "ring_bytes": [],
    }
    for r in reports:
        ratio = publication_ratio(r)
        per_run["publication_ratio"].append(math.nan if ratio is None else ratio)
        for m in ("sn_gw_messages", "gw_gw_messages", "gw_ce_messages", "ring_bytes"):
            per_run[m].append(r.total(m))
    out: dict[str, float] = {"runs": float(len(reports))}
    for m, vals in per_run.items():
        arr = np.asarray(vals, dtype=float)
        out[f"{m}_mean"] = float(arr.mean()) if len(arr) else math.nan
        out[f"{m}_std"] = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return out

