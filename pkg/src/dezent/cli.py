"""Command-line entry point: ``dezent run | sweep | collusion | validate``.

Configuration files are INI-style with the sections ``[scenario]``,
``[buckets]``, ``[filter]``, ``[publication]`` and ``[messages]``; see
``configs/example.ini`` for every key with its default. In sweep files any
value may be a comma-separated list and the product of all lists is run.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime
assertion failure (e.g. ``validate`` found a mismatch).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import logging
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .metrics import (
    MetricsReport,
    collusion_monte_carlo,
    collusion_probability,
    emit_csv,
    publication_ratio,
    read_csv,
    summarize,
)
from .protocol import ProtocolError
from .securesum import HeadroomError
from .simnet import ConfigError, ScenarioConfig, run_scenario
from .sketch import estimated_fp_rate

log = logging.getLogger("dezent")

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 1, 2

SECTIONS: dict[str, tuple[str, ...]] = {
    "scenario": (
        "scenario",
        "n_gateways",
        "max_sn_per_gw",
        "z",
        "delta_t_cycles",
        "n_cycles",
        "seed",
        "start_slot",
        "profiles_csv",
    ),
    "buckets": ("v0", "q"),
    "filter": (
        "backend",
        "expected_elements",
        "target_fp",
        "filter_m",
        "filter_k",
        "counter_bits",
        "hash_seed",
    ),
    "publication": ("p_min", "p_max", "force_p_pub", "noise_bound", "id_masking"),
    "messages": ("request_messages",),
}
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


class ConfigFileError(Exception):
    def __init__(self, path: str, line: int | None, message: str) -> None:
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


@dataclass
class RunManifest:
    config_path: str
    config: ScenarioConfig
    out_dir: Path
    seeds: list[int] = field(default_factory=list)
    sweep: dict[str, list[Any]] = field(default_factory=dict)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, ""), no)
            continue
        m = re.match(r"([^=:\s]+)\s*[=:]", line)
        if m and section:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _convert(key: str, raw: str) -> Any:
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if "None" in kind and raw.lower() in ("", "none"):
        return None
    if kind.startswith("bool"):
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind.startswith("int"):
        return int(raw, 0)
    if kind.startswith("float"):
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError(f"expected a finite number, got {raw!r}")
        return value
    return raw


def load_config(
    path: str | os.PathLike, allow_lists: bool = False
) -> tuple[ScenarioConfig, dict[str, list[Any]]]:
    """Parse a config file into a base config plus any sweep lists."""
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(path, None, f"cannot read config: {exc.strerror}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigFileError(path, line, str(exc).splitlines()[0]) from None
    lines = _key_lines(text)

    values: dict[str, Any] = {}
    sweep: dict[str, list[Any]] = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SECTIONS:
            raise ConfigFileError(path, lines.get((sec, "")), f"unknown section [{section}]")
        for key, raw in parser.items(section):
            line = lines.get((sec, key))
            if key not in SECTIONS[sec]:
                raise ConfigFileError(path, line, f"unknown key {key!r} in [{section}]")
            parts = [p for p in raw.split(",")] if "," in raw else [raw]
            if len(parts) > 1 and not allow_lists:
                raise ConfigFileError(path, line, f"{key}: lists are only allowed in sweep configs")
            try:
                converted = [_convert(key, p) for p in parts]
            except ValueError as exc:
                raise ConfigFileError(path, line, f"{key}: {exc}") from None
            if len(converted) > 1:
                sweep[key] = converted
            values[key] = converted[0]
    try:
        cfg = ScenarioConfig(**values)
        for key, options in sweep.items():
            for v in options:
                cfg.replace(**{key: v})
    except ConfigError as exc:
        line = lines.get((_SECTION_OF.get(exc.key, ""), exc.key))
        raise ConfigFileError(path, line, str(exc)) from None
    return cfg, sweep


def parse_seeds(spec: str) -> list[int]:
    """``"0-9"``, ``"1,2,5"`` or a mix like ``"0-4,10"``."""
    seeds: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(x) for x in part.split("-", 1))
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds or any(s < 0 for s in seeds):
        raise ValueError(f"invalid seed list {spec!r}")
    return seeds


# --- commands -------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    report = run_scenario(cfg)
    out = Path(args.out)
    target = out / f"{cfg.scenario}_seed{cfg.seed}.csv" if out.suffix != ".csv" else out
    emit_csv(report, target)
    ratio = publication_ratio(report)
    print(f"wrote {target}")
    print(f"publication ratio: {'n/a' if ratio is None else f'{ratio:.4f}'}")
    return EXIT_OK


def _run_name(point: dict[str, Any], seed: int) -> str:
    parts = [f"{k}-{v}" for k, v in point.items()]
    return "run_" + "_".join(parts + [f"seed-{seed}"]) + ".csv"


def _sweep_job(job: tuple[ScenarioConfig, str]) -> str:
    cfg, path = job
    emit_csv(run_scenario(cfg), path)
    return path


def cmd_sweep(args: argparse.Namespace) -> int:
    base, sweep = load_config(args.config, allow_lists=True)
    manifest = RunManifest(
        args.config,
        base,
        Path(args.out),
        parse_seeds(args.seeds) if args.seeds else [base.seed],
        sweep,
    )
    out, seeds = manifest.out_dir, manifest.seeds
    out.mkdir(parents=True, exist_ok=True)
    keys = list(sweep)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(sweep[k] for k in keys))]

    # resolve every configuration before the first run starts
    resolved = [
        (base.replace(seed=seed, **point), out / _run_name(point, seed))
        for point in points
        for seed in seeds
    ]
    jobs = []
    for run_cfg, path in resolved:
        if path.exists():
            log.info("skipping existing %s", path.name)
            continue
        jobs.append((run_cfg, str(path)))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_sweep_job, jobs))
    else:
        for job in jobs:
            _sweep_job(job)

    summary_rows = []
    for point in points:
        reports = [read_csv(out / _run_name(point, s)) for s in seeds]
        summary_rows.append({**point, **summarize(reports)})
    summary = out / "summary.csv"
    tmp = summary.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        cols = keys + [c for c in summary_rows[0] if c not in keys] if summary_rows else keys
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in summary_rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    os.replace(tmp, summary)
    print(f"{len(points) * len(seeds)} runs ({len(jobs)} new), summary in {summary}")
    return EXIT_OK


def cmd_collusion(args: argparse.Namespace) -> int:
    n = args.n
    if args.k is not None:
        k = args.k
    elif args.share is not None:
        if not 0 <= args.share <= 1:
            print("error: share must be in [0, 1]", file=sys.stderr)
            return EXIT_CONFIG
        k = round(args.share * n)
    else:
        print("error: give --k or --share", file=sys.stderr)
        return EXIT_CONFIG
    try:
        exact = collusion_probability(n, k)
        empirical = collusion_monte_carlo(n, k, args.trials, seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    se = math.sqrt(exact * (1 - exact) / args.trials)
    print(f"n={n} k={k} trials={args.trials}")
    print(f"closed form : {exact:.4f}")
    print(f"monte carlo : {empirical:.4f}  (binomial SE {se:.4f})")
    return EXIT_OK


def _fp_surplus_bound(central: MetricsReport, cfg: ScenarioConfig) -> int:
    fp = cfg.filter_params()
    expected = 0.0
    for c in central.cycles:
        suppressed = c.measured - c.published
        expected += suppressed * estimated_fp_rate(fp.m, fp.k, c.window_distinct_buckets)
    return math.ceil(expected + 3 * math.sqrt(expected))


def cmd_validate(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    try:
        dez_cfg = cfg.replace(scenario="dezent", force_p_pub=True)
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    dez = run_scenario(dez_cfg)
    cen = run_scenario(cfg.replace(scenario="centralized"))

    print(f"backend={cfg.backend} z={cfg.z} delta_t={cfg.delta_t_cycles} seed={cfg.seed}")
    print(f"{'cycle':>5} {'measured':>8} {'central':>8} {'dezent':>8} {'ratio diff':>10}")
    first_diff = None
    surplus = 0
    for dc, cc in zip(dez.cycles, cen.cycles):
        diff = (dc.published - cc.published) / cc.measured if cc.measured else 0.0
        print(f"{cc.cycle:>5} {cc.measured:>8} {cc.published:>8} {dc.published:>8} {diff:>10.4f}")
        for bucket in sorted(set(dc.published_by_bucket) | set(cc.published_by_bucket)):
            a = dc.published_by_bucket.get(bucket, 0)
            b = cc.published_by_bucket.get(bucket, 0)
            if a != b and first_diff is None:
                first_diff = (cc.cycle, bucket, b, a)
            surplus += a - b
    r_c, r_d = publication_ratio(cen), publication_ratio(dez)
    if r_c is not None:
        print(f"total publication ratio: central {r_c:.4f}, dezent {r_d:.4f}, diff {r_d - r_c:+.4f}")

    if cfg.backend == "exact" or cfg.z == 1:
        if first_diff is not None:
            cyc, bucket, b, a = first_diff
            print(
                f"MISMATCH at cycle {cyc}, bucket {bucket}: central {b}, dezent {a}",
                file=sys.stderr,
            )
            return EXIT_ASSERT
        print("OK: per-cycle per-bucket publication counts are identical")
        return EXIT_OK

    bound = _fp_surplus_bound(cen, cfg)
    under = any(
        dc.published_by_bucket.get(b, 0) < n
        for dc, cc in zip(dez.cycles, cen.cycles)
        for b, n in cc.published_by_bucket.items()
    )
    print(f"false-positive surplus: {surplus} publications (bound {bound})")
    if under or surplus > bound:
        print("FAIL: surplus outside the false-positive bound", file=sys.stderr)
        return EXIT_ASSERT
    print("OK: surplus within the false-positive bound")
    return EXIT_OK


# --- wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dezent", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write its CSV report")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default="results")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run the product of all listed parameters over seeds")
    sw.add_argument("--config", required=True)
    sw.add_argument("--seeds", help="e.g. 0-9 or 1,2,3 (default: the config seed)")
    sw.add_argument("--out", default="results")
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    co = sub.add_parser("collusion", help="closed-form and simulated collusion probability")
    co.add_argument("--n", type=int, required=True)
    grp = co.add_mutually_exclusive_group()
    grp.add_argument("--k", type=int)
    grp.add_argument("--share", type=float)
    co.add_argument("--trials", type=int, default=100_000)
    co.add_argument("--seed", type=int, default=0)
    co.set_defaults(func=cmd_collusion)

    va = sub.add_parser("validate", help="check dezent against the centralized reference")
    va.add_argument("--config", required=True)
    va.add_argument("--seed", type=int)
    va.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("DEZENT_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigFileError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HeadroomError, ProtocolError) as exc:
        print(f"runtime check failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
