"""Discrete-event simulation of the sensor / gateway / central-entity hierarchy.

Three scenarios share one world:

``centralized``
    Gateways forward every raw tuple to the central entity, which runs the
    sequential z-anonymizer over the whole stream.
``fully_decentralized``
    Each gateway runs the sequential z-anonymizer on its own sensors only.
``dezent``
    Gateways coordinate over the ring (see :mod:`dezent.protocol`).

All randomness comes from independent streams derived from the master seed
(topology, client types, ring, one per sensor, one per gateway), so the
same seed yields the same sensors and readings in every scenario.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .anonymizer import BucketConfig, CentralizedZAnonymizer, MeasurementTuple, WindowLog, bucketize
from .datagen import ClientTypeProfile, assign_client_types, default_profile_set, load_profiles_csv, measure
from .metrics import CycleMetrics, MetricsReport, ECHO_FIELDS
from .protocol import (
    GatewayState,
    ProtocolConfig,
    RingTopology,
    build_ring,
    decode_published_tuple,
    encode_published_tuple,
    run_dezent_cycle,
)
from .sketch import FilterParams, size_parameters

__all__ = ["ConfigError", "ScenarioConfig", "Sensor", "World", "build_topology", "run_cycle", "run_scenario"]

log = logging.getLogger(__name__)

SCENARIOS = ("centralized", "fully_decentralized", "dezent")

# spawn keys of the per-purpose random streams
_TOPOLOGY, _TYPES, _RING, _SENSOR, _GATEWAY = range(5)


class ConfigError(ValueError):
    """Invalid scenario configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "dezent"
    n_gateways: int = 25
    max_sn_per_gw: int = 20
    z: int = 5
    delta_t_cycles: int = 4
    n_cycles: int = 96
    seed: int = 0
    start_slot: int = 0
    profiles_csv: str | None = None
    # buckets
    v0: float = 0.01
    q: int = 8
    # counting structure
    backend: str = "cbf"
    expected_elements: int = 1000
    target_fp: float = 0.05
    filter_m: int | None = None
    filter_k: int | None = None
    counter_bits: int = 16
    hash_seed: int = 0
    # publication
    p_min: float = 0.5
    p_max: float = 0.9
    force_p_pub: bool = False
    noise_bound: int | None = None
    id_masking: bool = True
    # messages: request + response per sensor and cycle, or response only
    request_messages: bool = True

    def __post_init__(self) -> None:
        def need(cond: bool, key: str, msg: str) -> None:
            if not cond:
                raise ConfigError(key, msg)

        need(self.scenario in SCENARIOS, "scenario", f"must be one of {', '.join(SCENARIOS)}")
        for key in ("n_gateways", "max_sn_per_gw", "z", "delta_t_cycles"):
            need(getattr(self, key) >= 1, key, "must be a positive integer")
        need(self.n_cycles >= 0, "n_cycles", "must be >= 0")
        need(self.seed >= 0, "seed", "must be >= 0")
        need(self.start_slot >= 0, "start_slot", "must be >= 0")
        need(self.v0 > 0 and math.isfinite(self.v0), "v0", "must be positive")
        need(self.q >= 1, "q", "must be >= 1")
        need(self.backend in ("cbf", "exact"), "backend", "must be 'cbf' or 'exact'")
        need(self.expected_elements >= 1, "expected_elements", "must be >= 1")
        need(0 < self.target_fp < 1, "target_fp", "must be in (0, 1)")
        need(self.filter_m is None or self.filter_m >= 1, "filter_m", "must be >= 1")
        need(self.filter_k is None or self.filter_k >= 1, "filter_k", "must be >= 1")
        need(1 <= self.counter_bits <= 64, "counter_bits", "must be in [1, 64]")
        need(0 <= self.hash_seed < 2**64, "hash_seed", "must fit in 64 unsigned bits")
        if self.scenario == "dezent":
            need(self.n_gateways >= 3, "n_gateways", "the dezent ring needs at least 3 gateways")
            need(0 < self.p_min <= 1, "p_min", "must be in (0, 1]")
            need(0 < self.p_max <= 1, "p_max", "must be in (0, 1]")
            need(self.p_min <= self.p_max, "p_max", "must be >= p_min")
            need(
                self.noise_bound is None or 1 <= self.noise_bound <= 2**self.counter_bits,
                "noise_bound",
                "must be in [1, 2**counter_bits]",
            )

    def filter_params(self) -> FilterParams:
        m, k, _ = size_parameters(self.expected_elements, self.target_fp)
        return FilterParams(
            m=self.filter_m or m,
            k=self.filter_k or k,
            b=self.counter_bits,
            hash_seed=self.hash_seed,
        )

    def bucket_config(self) -> BucketConfig:
        return BucketConfig(self.v0, self.q)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            z=self.z,
            delta_t=self.delta_t_cycles,
            buckets=self.bucket_config(),
            backend=self.backend,
            filter_params=self.filter_params() if self.backend == "cbf" else None,
            id_masking=self.id_masking,
            p_min=self.p_min,
            p_max=self.p_max,
            force_p_pub=self.force_p_pub,
            noise_bound=self.noise_bound,
        )

    def echo(self) -> dict:
        out = {f: getattr(self, f) for f in ECHO_FIELDS if hasattr(self, f)}
        if self.backend == "cbf":
            fp = self.filter_params()
            out["filter_m"], out["filter_k"] = fp.m, fp.k
        return out

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Sensor:
    sensor_id: int
    gw_id: int
    type_index: int
    rng: np.random.Generator = field(repr=False)


@dataclass
class World:
    cfg: ScenarioConfig
    profiles: list[ClientTypeProfile]
    sensors: dict[int, Sensor]
    gateways: dict[int, GatewayState]
    ring: RingTopology | None
    ce_inbox: list[MeasurementTuple] = field(default_factory=list)
    messages: Counter = field(default_factory=Counter)
    ring_bytes: int = 0
    central: CentralizedZAnonymizer | None = None
    local: dict[int, CentralizedZAnonymizer] = field(default_factory=dict)
    # global view used only for instrumentation
    global_window: WindowLog = field(default_factory=WindowLog)

    def send(self, link: str, n: int = 1) -> None:
        if link not in ("sn_gw", "gw_gw", "gw_ce"):
            raise ValueError(f"unknown link class {link!r}")
        self.messages[link] += n

    def read_sensor(self, sensor_id: int, cycle: int) -> float:
        """GW-initiated reading: request + response (or response only)."""
        s = self.sensors[sensor_id]
        self.send("sn_gw", 2 if self.cfg.request_messages else 1)
        return measure(self.profiles[s.type_index], self.cfg.start_slot + cycle, s.rng)

    def type_name(self, sensor_id: int) -> str:
        return self.profiles[self.sensors[sensor_id].type_index].name

    def deliver_to_ce(self, t: MeasurementTuple) -> MeasurementTuple:
        self.send("gw_ce")
        received = decode_published_tuple(encode_published_tuple(t))
        self.ce_inbox.append(received)
        return received


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def sn_counts(n_gateways: int, max_sn: int, rng: np.random.Generator) -> np.ndarray:
    """Sensors per gateway: rounded Normal(max/2, max/6) clamped to [1, max]."""
    draws = rng.normal(max_sn / 2, max_sn / 6, size=n_gateways)
    return np.clip(np.rint(draws), 1, max_sn).astype(int)


def build_topology(cfg: ScenarioConfig, profiles: Sequence[ClientTypeProfile] | None = None) -> World:
    if profiles is None:
        profiles = load_profiles_csv(cfg.profiles_csv) if cfg.profiles_csv else default_profile_set()
    profiles = list(profiles)
    counts = sn_counts(cfg.n_gateways, cfg.max_sn_per_gw, _stream(cfg.seed, _TOPOLOGY))
    types = assign_client_types(int(counts.sum()), profiles, _stream(cfg.seed, _TYPES))

    sensors: dict[int, Sensor] = {}
    gateways: dict[int, GatewayState] = {}
    sid = 0
    for gw_id, c in enumerate(counts):
        ids = list(range(sid, sid + c))
        for s in ids:
            sensors[s] = Sensor(s, gw_id, int(types[s]), _stream(cfg.seed, _SENSOR, s))
        gateways[gw_id] = GatewayState(gw_id, ids, rng=_stream(cfg.seed, _GATEWAY, gw_id))
        sid += c

    ring = None
    if cfg.scenario == "dezent":
        ring = build_ring(gateways, _stream(cfg.seed, _RING))
    world = World(cfg, profiles, sensors, gateways, ring)
    if cfg.scenario == "centralized":
        world.central = CentralizedZAnonymizer(cfg.z, cfg.delta_t_cycles)
    elif cfg.scenario == "fully_decentralized":
        world.local = {g: CentralizedZAnonymizer(cfg.z, cfg.delta_t_cycles) for g in gateways}
    return world


def _sequential_cycle(world: World, cycle: int, measured: list[tuple[int, MeasurementTuple]]):
    cfg = world.cfg
    bc = cfg.bucket_config()
    published: list[tuple[int, MeasurementTuple]] = []
    for gw_id in sorted(world.gateways):
        gw = world.gateways[gw_id]
        for sid in sorted(gw.sensor_ids):
            t = MeasurementTuple(bucketize(world.read_sensor(sid, cycle), bc), sid, cycle)
            measured.append((sid, t))
            if cfg.scenario == "centralized":
                t = world.deliver_to_ce(t)
                if world.central.step(t):
                    published.append((sid, t))
            elif world.local[gw_id].step(t):
                reporter = gw_id if cfg.id_masking else sid
                out = world.deliver_to_ce(MeasurementTuple(t.bucket, reporter, cycle))
                published.append((sid, out))
    return published


def run_cycle(world: World, cycle: int) -> CycleMetrics:
    cfg = world.cfg
    before = Counter(world.messages)
    metrics = CycleMetrics(cycle=cycle)
    measured: list[tuple[int, MeasurementTuple]] = []

    if cfg.scenario == "dezent":
        def source(sid: int, now: int) -> float:
            value = world.read_sensor(sid, now)
            measured.append((sid, MeasurementTuple(bucketize(value, cfg.bucket_config()), sid, now)))
            return value

        outcome = run_dezent_cycle(world.gateways, world.ring, cycle, cfg.protocol_config(), source)
        world.send("gw_gw", outcome.ring_messages)
        world.ring_bytes += outcome.ring_bytes
        metrics.ring_bytes = outcome.ring_bytes
        metrics.ring_payload_bytes = outcome.ring_payload_bytes
        metrics.publication_rounds = outcome.publication_rounds
        published = [(sid, world.deliver_to_ce(t)) for sid, t in outcome.published]
    else:
        published = _sequential_cycle(world, cycle, measured)

    world.global_window.apply_delta_t(cycle, cfg.delta_t_cycles)
    for sid, t in measured:
        world.global_window.append(t.bucket, sid, cycle)
    metrics.window_distinct_buckets = len(world.global_window.counts())

    metrics.measured = len(measured)
    metrics.published = len(published)
    metrics.measured_by_type = dict(Counter(world.type_name(s) for s, _ in measured))
    metrics.published_by_type = dict(Counter(world.type_name(s) for s, _ in published))
    metrics.measured_by_bucket = dict(Counter(t.bucket for _, t in measured))
    metrics.published_by_bucket = dict(Counter(t.bucket for _, t in published))
    delta = world.messages - before
    metrics.sn_gw_messages = delta["sn_gw"]
    metrics.gw_gw_messages = delta["gw_gw"]
    metrics.gw_ce_messages = delta["gw_ce"]
    return metrics


def run_scenario(cfg: ScenarioConfig, profiles: Sequence[ClientTypeProfile] | None = None) -> MetricsReport:
    world = build_topology(cfg, profiles)
    report = MetricsReport(config=cfg.echo())
    for cycle in range(cfg.n_cycles):
        report.cycles.append(run_cycle(world, cycle))
    log.debug(
        "%s: %d cycles, %d/%d published",
        cfg.scenario,
        cfg.n_cycles,
        report.total("published"),
        report.total("measured"),
    )
    return report
