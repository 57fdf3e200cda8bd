"""The per-cycle coordination protocol run by the gateways.

One cycle, with ``ccc`` the coordinator of that cycle:

1. ``init_collection`` at the coordinator: empty counting structure, masked
   with a fresh perturbation when the backend is a counting Bloom filter.
2. ``on_collection`` at every gateway in ring order starting with the
   coordinator's successor and ending with the coordinator itself: expire
   the window, pull one reading per sensor, add the whole window multiset.
3. ``prepare_publication`` at the coordinator: unmask, then subtract
   ``z - 1`` from every counter.
4. ``on_publication`` around the ring again: every gateway publishes the
   current-cycle tuples whose count is still positive (with probability
   ``p_pub``) and decrements the count for each one it publishes.
5. ``round_termination``: a second round with ``p_pub = 1`` runs if the
   first was probabilistic and some gateway reported a pending tuple.

Every hop goes through the binary ring envelope, so the simulator counts
exactly the bytes a real deployment would send.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Union

import numpy as np

from .anonymizer import BucketConfig, MeasurementTuple, WindowLog, bucketize
from .securesum import PerturbationVector, mask, sample_perturbation, unmask
from .sketch import CountingFilter, ExactCounter, FilterParams

__all__ = [
    "RingTopology",
    "build_ring",
    "designate_ccc",
    "Phase",
    "CycleState",
    "RoundKind",
    "RingMessage",
    "encode_ring_message",
    "decode_ring_message",
    "ENVELOPE_SIZE",
    "encode_published_tuple",
    "decode_published_tuple",
    "PUBLISHED_TUPLE_SIZE",
    "ProtocolConfig",
    "GatewayState",
    "ProtocolError",
    "init_collection",
    "on_collection",
    "prepare_publication",
    "choose_p_pub",
    "start_publication",
    "on_publication",
    "round_termination",
    "CycleOutcome",
    "run_dezent_cycle",
]

Structure = Union[CountingFilter, ExactCounter]
SensorSource = Callable[[int, int], float]


class ProtocolError(RuntimeError):
    pass


# --- ring -----------------------------------------------------------------


@dataclass(frozen=True)
class RingTopology:
    order: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.order)) != len(self.order):
            raise ValueError("ring order contains duplicate gateway ids")

    def __len__(self) -> int:
        return len(self.order)

    def _pos(self, gw_id: int) -> int:
        try:
            return self.order.index(gw_id)
        except ValueError:
            raise KeyError(f"gateway {gw_id} is not on the ring") from None

    def successor(self, gw_id: int) -> int:
        return self.order[(self._pos(gw_id) + 1) % len(self.order)]

    def predecessor(self, gw_id: int) -> int:
        return self.order[(self._pos(gw_id) - 1) % len(self.order)]

    def traversal(self, start: int) -> list[int]:
        """Visiting order of a message sent by ``start``: its successor first, ``start`` last."""
        i = self._pos(start)
        n = len(self.order)
        return [self.order[(i + step) % n] for step in range(1, n + 1)]


def build_ring(gateway_ids: Iterable[int], rng: np.random.Generator | int) -> RingTopology:
    ids = sorted(gateway_ids)
    if len(ids) < 3:
        raise ValueError(f"a ring needs at least 3 gateways, got {len(ids)}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return RingTopology(tuple(int(x) for x in rng.permutation(ids)))


def designate_ccc(cycle_index: int, ring: RingTopology) -> int:
    return ring.order[cycle_index % len(ring)]


# --- cycle state ----------------------------------------------------------


class Phase(enum.Enum):
    COLLECTING = "collecting"
    PREPARING = "preparing"
    PUBLISHING = "publishing"
    DONE = "done"


_NEXT_PHASE = {
    Phase.COLLECTING: Phase.PREPARING,
    Phase.PREPARING: Phase.PUBLISHING,
    Phase.PUBLISHING: Phase.DONE,
}


@dataclass
class CycleState:
    cycle_index: int
    ccc_id: int
    phase: Phase = Phase.COLLECTING
    p_pub: float = 1.0
    publication_round: int = 1
    perturbation: PerturbationVector | None = None

    def advance(self) -> None:
        if self.phase not in _NEXT_PHASE:
            raise ProtocolError(f"cycle {self.cycle_index} is already done")
        self.phase = _NEXT_PHASE[self.phase]
        if self.phase is not Phase.COLLECTING:
            self.perturbation = None


# --- wire formats ---------------------------------------------------------


class RoundKind(enum.IntEnum):
    COLLECTION = 0
    PUBLICATION = 1


_ENVELOPE = "<QBHQI"
ENVELOPE_SIZE = struct.calcsize(_ENVELOPE)
_KIND_MASK = 0x0F
_FLAG_PENDING = 0x40
_FLAG_P_ONE = 0x80
_P_SCALE = 1 << 16


@dataclass(frozen=True)
class RingMessage:
    cycle_index: int
    round_kind: RoundKind
    sender_id: int
    filter_payload: bytes
    p_pub: float = 0.0
    pending: bool = False


def quantize_p_pub(p: float) -> float:
    """Snap to the envelope's 1/65536 grid; exactly 1.0 stays 1.0."""
    if p >= 1.0:
        return 1.0
    return min(round(p * _P_SCALE), _P_SCALE - 1) / _P_SCALE


def encode_ring_message(msg: RingMessage) -> bytes:
    kind = int(msg.round_kind)
    if msg.p_pub >= 1.0:
        kind |= _FLAG_P_ONE
        p_fixed = _P_SCALE - 1
    else:
        p_fixed = min(max(round(msg.p_pub * _P_SCALE), 0), _P_SCALE - 1)
    if msg.pending:
        kind |= _FLAG_PENDING
    head = struct.pack(
        _ENVELOPE, msg.cycle_index, kind, p_fixed, msg.sender_id, len(msg.filter_payload)
    )
    return head + msg.filter_payload


def decode_ring_message(data: bytes) -> RingMessage:
    if len(data) < ENVELOPE_SIZE:
        raise ValueError(f"truncated ring envelope: {len(data)} < {ENVELOPE_SIZE} bytes")
    cycle, kind, p_fixed, sender, length = struct.unpack_from(_ENVELOPE, data)
    if len(data) - ENVELOPE_SIZE != length:
        raise ValueError(
            f"ring payload is {len(data) - ENVELOPE_SIZE} bytes, header says {length}"
        )
    try:
        round_kind = RoundKind(kind & _KIND_MASK)
    except ValueError:
        raise ValueError(f"unknown round kind {kind & _KIND_MASK}") from None
    if kind & ~(_KIND_MASK | _FLAG_PENDING | _FLAG_P_ONE):
        raise ValueError(f"reserved bits set in round kind byte {kind:#04x}")
    p_pub = 1.0 if kind & _FLAG_P_ONE else p_fixed / _P_SCALE
    return RingMessage(
        cycle_index=cycle,
        round_kind=round_kind,
        sender_id=sender,
        filter_payload=bytes(data[ENVELOPE_SIZE:]),
        p_pub=p_pub,
        pending=bool(kind & _FLAG_PENDING),
    )


_PUBLISHED = "<qQQ"
PUBLISHED_TUPLE_SIZE = struct.calcsize(_PUBLISHED)


def encode_published_tuple(t: MeasurementTuple) -> bytes:
    return struct.pack(_PUBLISHED, t.bucket, t.reporter_id, t.timestamp)


def decode_published_tuple(data: bytes) -> MeasurementTuple:
    if len(data) != PUBLISHED_TUPLE_SIZE:
        raise ValueError(f"published tuple must be {PUBLISHED_TUPLE_SIZE} bytes, got {len(data)}")
    return MeasurementTuple(*struct.unpack(_PUBLISHED, data))


# --- gateway side ---------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    z: int
    delta_t: int
    buckets: BucketConfig = BucketConfig()
    backend: str = "cbf"
    filter_params: FilterParams | None = None
    id_masking: bool = True
    p_min: float = 0.5
    p_max: float = 0.9
    force_p_pub: bool = False
    # Perturbation components are uniform in [0, noise_bound); None = 2**b.
    noise_bound: int | None = None
    check_headroom: bool = True

    def __post_init__(self) -> None:
        if self.z < 1:
            raise ValueError(f"z must be >= 1, got {self.z}")
        if self.delta_t < 1:
            raise ValueError(f"delta_t must be >= 1, got {self.delta_t}")
        if self.backend not in ("cbf", "exact"):
            raise ValueError(f"backend must be 'cbf' or 'exact', got {self.backend!r}")
        if self.backend == "cbf" and self.filter_params is None:
            raise ValueError("the cbf backend needs filter_params")
        if not 0.0 < self.p_min <= self.p_max <= 1.0:
            raise ValueError(f"need 0 < p_min <= p_max <= 1, got [{self.p_min}, {self.p_max}]")

    def new_structure(self) -> Structure:
        if self.backend == "exact":
            return ExactCounter()
        return CountingFilter(self.filter_params)

    def decode_structure(self, payload: bytes) -> Structure:
        if self.backend == "exact":
            return ExactCounter.deserialize(payload)
        filt = CountingFilter.deserialize(payload)
        if filt.params != self.filter_params:
            raise ProtocolError(f"filter params {filt.params} differ from agreed {self.filter_params}")
        return filt


@dataclass
class GatewayState:
    gw_id: int
    sensor_ids: list[int]
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)
    window_log: WindowLog = field(default_factory=WindowLog)
    current_m: list[MeasurementTuple] = field(default_factory=list)
    published: list[bool] = field(default_factory=list)
    contributed_cycle: int | None = None

    def unpublished(self) -> list[MeasurementTuple]:
        return [t for t, done in zip(self.current_m, self.published) if not done]


def init_collection(
    ccc: GatewayState, cycle_index: int, cfg: ProtocolConfig
) -> tuple[RingMessage, PerturbationVector | None]:
    structure = cfg.new_structure()
    r = None
    if isinstance(structure, CountingFilter):
        p = structure.params
        r = sample_perturbation(p.m, p.b, ccc.rng, bound=cfg.noise_bound)
        structure = mask(structure, r)
    msg = RingMessage(cycle_index, RoundKind.COLLECTION, ccc.gw_id, structure.serialize())
    return msg, r


def on_collection(
    gw: GatewayState, msg: RingMessage, now: int, sensors: SensorSource, cfg: ProtocolConfig
) -> RingMessage:
    if msg.round_kind is not RoundKind.COLLECTION:
        raise ProtocolError(f"gateway {gw.gw_id} got {msg.round_kind.name} during collection")
    if gw.contributed_cycle == now:
        raise ProtocolError(f"gateway {gw.gw_id} already contributed in cycle {now}")
    structure = cfg.decode_structure(msg.filter_payload)
    if isinstance(structure, CountingFilter):
        structure.masked = True

    gw.window_log.apply_delta_t(now, cfg.delta_t)
    gw.current_m = []
    for sid in sorted(gw.sensor_ids):
        bucket = bucketize(sensors(sid, now), cfg.buckets)
        gw.current_m.append(MeasurementTuple(bucket, sid, now))
        gw.window_log.append(bucket, sid, now)
    gw.published = [False] * len(gw.current_m)
    gw.contributed_cycle = now

    for bucket, c in sorted(gw.window_log.counts().items()):
        structure.add(bucket, c)
    return RingMessage(now, RoundKind.COLLECTION, gw.gw_id, structure.serialize())


def prepare_publication(
    structure: Structure,
    perturbation: PerturbationVector | None,
    z: int,
    ceiling: int | None = None,
) -> Structure:
    """Remove the mask and turn counts into publication budgets."""
    if isinstance(structure, CountingFilter):
        if perturbation is None:
            raise ProtocolError("a counting filter needs its perturbation to be unmasked")
        structure.masked = True
        structure = unmask(structure, perturbation, ceiling=ceiling)
    else:
        structure = structure.copy()
    structure.subtract_clamp(z - 1)
    return structure


def choose_p_pub(rng: np.random.Generator, cfg: ProtocolConfig) -> float:
    if cfg.force_p_pub:
        return 1.0
    return quantize_p_pub(rng.uniform(cfg.p_min, cfg.p_max))


def start_publication(
    ccc: GatewayState, cycle_index: int, structure: Structure, p_pub: float
) -> RingMessage:
    return RingMessage(
        cycle_index, RoundKind.PUBLICATION, ccc.gw_id, structure.serialize(), p_pub=p_pub
    )


def on_publication(
    gw: GatewayState, msg: RingMessage, cfg: ProtocolConfig
) -> tuple[RingMessage, list[MeasurementTuple]]:
    """Publish eligible current-cycle tuples; coin flips use ``gw.rng``."""
    if msg.round_kind is not RoundKind.PUBLICATION:
        raise ProtocolError(f"gateway {gw.gw_id} got {msg.round_kind.name} during publication")
    if gw.contributed_cycle != msg.cycle_index:
        raise ProtocolError(f"gateway {gw.gw_id} has no measurements for cycle {msg.cycle_index}")
    structure = cfg.decode_structure(msg.filter_payload)
    out: list[MeasurementTuple] = []
    pending = False
    for i, t in enumerate(gw.current_m):
        if gw.published[i] or structure.count(t.bucket) <= 0:
            continue
        if msg.p_pub >= 1.0 or gw.rng.random() < msg.p_pub:
            reporter = gw.gw_id if cfg.id_masking else t.reporter_id
            out.append(MeasurementTuple(t.bucket, reporter, t.timestamp))
            structure.remove(t.bucket)
            gw.published[i] = True
        else:
            pending = True
    reply = RingMessage(
        msg.cycle_index,
        RoundKind.PUBLICATION,
        gw.gw_id,
        structure.serialize(),
        p_pub=msg.p_pub,
        pending=msg.pending or pending,
    )
    return reply, out


def round_termination(msg: RingMessage) -> str:
    """``"done"`` or ``"continue"`` once a publication message is back at the coordinator."""
    if msg.p_pub >= 1.0 or not msg.pending:
        return "done"
    return "continue"


# --- one full cycle -------------------------------------------------------


@dataclass
class CycleOutcome:
    cycle_index: int
    ccc_id: int
    p_pub: float
    publication_rounds: int
    published: list[tuple[int, MeasurementTuple]]
    ring_messages: int
    ring_bytes: int
    ring_payload_bytes: int
    state: CycleState


def run_dezent_cycle(
    gateways: Mapping[int, GatewayState],
    ring: RingTopology,
    cycle_index: int,
    cfg: ProtocolConfig,
    sensors: SensorSource,
) -> CycleOutcome:
    """Drive one clock cycle over the ring.

    ``published`` pairs each tuple sent to the central entity with the
    sensor that measured it (the tuple's reporter may be the gateway).
    """
    ccc_id = designate_ccc(cycle_index, ring)
    ccc = gateways[ccc_id]
    state = CycleState(cycle_index, ccc_id)
    order = ring.traversal(ccc_id)
    n_messages = n_bytes = n_payload = 0

    def send(msg: RingMessage) -> RingMessage:
        nonlocal n_messages, n_bytes, n_payload
        wire = encode_ring_message(msg)
        n_messages += 1
        n_bytes += len(wire)
        n_payload += len(msg.filter_payload)
        return decode_ring_message(wire)

    msg, state.perturbation = init_collection(ccc, cycle_index, cfg)
    for gw_id in order:
        msg = on_collection(gateways[gw_id], send(msg), cycle_index, sensors, cfg)
    # the last on_collection ran at the coordinator; its result never leaves it

    ceiling = None
    if cfg.check_headroom:
        ceiling = sum(len(gateways[g].window_log) for g in order)
    structure = cfg.decode_structure(msg.filter_payload)
    structure = prepare_publication(structure, state.perturbation, cfg.z, ceiling)
    state.advance()
    state.p_pub = first_p_pub = choose_p_pub(ccc.rng, cfg)
    state.advance()

    published: list[tuple[int, MeasurementTuple]] = []
    msg = start_publication(ccc, cycle_index, structure, state.p_pub)
    while True:
        for gw_id in order:
            gw = gateways[gw_id]
            before = list(gw.published)
            msg, out = on_publication(gw, send(msg), cfg)
            sources = [
                t.reporter_id
                for t, was, now in zip(gw.current_m, before, gw.published)
                if now and not was
            ]
            published.extend(zip(sources, out))
        if round_termination(msg) == "done":
            break
        state.publication_round += 1
        state.p_pub = 1.0
        msg = RingMessage(
            cycle_index, RoundKind.PUBLICATION, ccc_id, msg.filter_payload, p_pub=1.0
        )
    state.advance()
    return CycleOutcome(
        cycle_index=cycle_index,
        ccc_id=ccc_id,
        p_pub=first_p_pub,
        publication_rounds=state.publication_round,
        published=published,
        ring_messages=n_messages,
        ring_bytes=n_bytes,
        ring_payload_bytes=n_payload,
        state=state,
    )
