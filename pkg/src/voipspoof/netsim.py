"""Deterministic discrete-event network with an on-path censor.

Nodes are attached by IP address and implement ``on_datagram(d, now)``,
``tick(now)`` and ``next_due()``.  Delivery is by destination address only;
nothing downstream of :meth:`Network.send` ever learns who really emitted a
datagram, only its ``claimed_src``.

The censor sees every datagram with at least one endpoint inside its ASes
(judged by the claimed source and the destination).  It logs metadata, reads
SIP in the clear, and may run one configured attack on what it sees.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Protocol

from .aspath import PrefixTable
from .errors import UnknownEndpoint, VoipSpoofError
from .sip import Kind, SIP_PORT, parse
from .transport import Datagram, DatagramKind, Endpoint

logger = logging.getLogger(__name__)

RTP_HEADER_LEN = 12


class AttackKind(str, Enum):
    DROP_ALL_TO_CALLEE = "DropAllToCallee"
    REWRITE_OK_ADDRESS = "RewriteOkAddress"
    REPLAY_TO_CALLEE = "ReplayToCallee"
    ALTER_RTP = "AlterRtp"
    DROP_RANDOM = "DropRandom"


@dataclass
class CensorAttack:
    """One attack and its parameters.

    DropAllToCallee: ``start_ms`` (0), ``duration_ms`` (forever).
    RewriteOkAddress: ``address`` written into the OK's SDP.
    ReplayToCallee: ``direction`` (``to_callee`` or ``to_caller``), ``every``
    (replay one in N media packets, 10) and ``delay_ms`` (100).
    AlterRtp: ``direction`` (``to_caller``), and either ``period`` (alter
    every N-th RTP packet) or ``rate`` (probability, 0.1).
    DropRandom: ``rate``.
    """

    kind: AttackKind
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = AttackKind(self.kind)

    def param(self, name: str, default: Any = None) -> Any:
        return self.params.get(name, default)


@dataclass
class SimConfig:
    seed: int = 0
    loss_rate: float = 0.0
    reorder_rate: float = 0.0
    base_delay_ms: int = 40
    jitter_ms: int = 0
    fetch_latency_ms: int = 2_000
    censor_ases: frozenset[int] = frozenset()
    attack: CensorAttack | None = None
    # drop the first ``count`` of every ``period`` RTP datagrams sent to a client
    loss_pattern: tuple[int, int] | None = None

    def __post_init__(self):
        for name in ("loss_rate", "reorder_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.base_delay_ms < 1 or self.jitter_ms < 0:
            raise ValueError("base_delay_ms must be >= 1 and jitter_ms >= 0")
        self.censor_ases = frozenset(self.censor_ases)


@dataclass(frozen=True)
class Observation:
    time: int
    src: Endpoint
    dst: Endpoint
    kind: DatagramKind
    size: int
    sip: str = ""  # method or status, SIP being readable


class ObservationLog:
    def __init__(self):
        self._entries: list[Observation] = []
        self._bindings: dict[str, set[str]] = {}

    @property
    def entries(self) -> tuple[Observation, ...]:
        return tuple(self._entries)

    @property
    def bindings(self) -> dict[str, frozenset[str]]:
        return {k: frozenset(v) for k, v in self._bindings.items()}

    def append(self, obs: Observation) -> None:
        self._entries.append(obs)

    def bind(self, callee: str, addr: str) -> None:
        self._bindings.setdefault(callee, set()).add(addr)

    def bound_addresses(self) -> set[str]:
        return set().union(*self._bindings.values()) if self._bindings else set()

    def count(self, kind: DatagramKind | None = None, sip: str | None = None) -> int:
        return sum(1 for e in self._entries if (kind is None or e.kind is kind) and (sip is None or e.sip == sip))


class Node(Protocol):
    def on_datagram(self, d: Datagram, now: int) -> None: ...

    def tick(self, now: int) -> Any: ...

    def next_due(self) -> int | None: ...


class SimTransport:
    """What a node holds to put datagrams on the simulated wire."""

    supports_spoofing = True

    def __init__(self, network: "Network"):
        self.network = network

    def send(self, d: Datagram) -> None:
        self.network.send(d)


class Censor:
    def __init__(self, prefixes: PrefixTable, censor_ases: frozenset[int], attack: CensorAttack | None,
                 rng: random.Random):
        self.prefixes = prefixes
        self.censor_ases = censor_ases
        self.attack = attack
        self.rng = rng
        self.log = ObservationLog()
        self.outcomes: Counter[str] = Counter()
        self.rewritten_to: set[str] = set()
        self._media_seen = 0
        self._rtp_seen = 0

    def inside(self, addr: str) -> bool:
        try:
            return self.prefixes.asn_of(addr) in self.censor_ases
        except ValueError:
            return False

    def crosses(self, d: Datagram) -> bool:
        return self.inside(d.claimed_src[0]) or self.inside(d.dst[0])

    def observe(self, d: Datagram, now: int) -> None:
        label = ""
        if d.kind is DatagramKind.SIP:
            try:
                msg = parse(d.payload)
            except VoipSpoofError:
                msg = None
            if msg is not None:
                label = msg.kind.value
                if msg.kind is Kind.OK and msg.sdp is not None:
                    self.log.bind(msg.callee_id, msg.sdp.media_address)
        self.log.append(Observation(now, d.claimed_src, d.dst, d.kind, d.size, label))

    def _toward_callee(self, d: Datagram) -> bool:
        return d.dst[0] in self.log.bound_addresses()

    def _direction_ok(self, d: Datagram, default: str) -> bool:
        direction = self.attack.param("direction", default)
        toward_callee = self._toward_callee(d)
        return toward_callee if direction == "to_callee" else not toward_callee and self.inside(d.dst[0])

    def apply(self, d: Datagram, now: int) -> tuple[Datagram | None, list[tuple[int, Datagram]]]:
        """The datagram to forward (None to drop) plus injected (delay, datagram) pairs."""
        a = self.attack
        if a is None:
            return d, []
        kind = a.kind
        media = d.kind in (DatagramKind.RTP, DatagramKind.RTCP)
        if kind is AttackKind.DROP_ALL_TO_CALLEE:
            start = a.param("start_ms", 0)
            end = start + a.param("duration_ms", float("inf"))
            if media and start <= now < end and self._toward_callee(d):
                self.outcomes["dropped"] += 1
                return None, []
        elif kind is AttackKind.REWRITE_OK_ADDRESS:
            if d.kind is DatagramKind.SIP:
                try:
                    msg = parse(d.payload)
                except VoipSpoofError:
                    return d, []
                if msg.kind is Kind.OK and msg.sdp is not None:
                    addr = a.param("address", "203.0.113.66")
                    forged = replace(msg, sdp=replace(msg.sdp, media_address=addr))
                    self.rewritten_to.add(addr)
                    self.outcomes["rewritten"] += 1
                    return replace(d, payload=forged.serialize()), []
        elif kind is AttackKind.REPLAY_TO_CALLEE:
            if media and self._direction_ok(d, "to_callee"):
                self._media_seen += 1
                if self._media_seen % a.param("every", 10) == 0:
                    self.outcomes["replayed"] += 1
                    return d, [(a.param("delay_ms", 100), d)]
        elif kind is AttackKind.ALTER_RTP:
            if d.kind is DatagramKind.RTP and self._direction_ok(d, "to_caller") and len(d.payload) > RTP_HEADER_LEN:
                self._rtp_seen += 1
                period = a.param("period")
                hit = (self._rtp_seen % period == 0) if period else self.rng.random() < a.param("rate", 0.1)
                if hit:
                    # flip one bit after the RTP header so the sequence number is untouched
                    payload = bytearray(d.payload)
                    bit = self.rng.randrange((len(payload) - RTP_HEADER_LEN) * 8)
                    payload[RTP_HEADER_LEN + bit // 8] ^= 1 << (bit % 8)
                    self.outcomes["altered"] += 1
                    return replace(d, payload=bytes(payload)), []
        elif kind is AttackKind.DROP_RANDOM:
            if self.rng.random() < a.param("rate", 0.0):
                self.outcomes["dropped"] += 1
                return None, []
        return d, []


class Network:
    def __init__(self, config: SimConfig | None = None, prefixes: PrefixTable | None = None):
        self.config = config or SimConfig()
        self.prefixes = prefixes or PrefixTable()
        seed = self.config.seed
        # separate streams so one consumer's draws never shift another's
        self._loss_rng = random.Random(f"{seed}:loss")
        self._delay_rng = random.Random(f"{seed}:delay")
        self.censor = Censor(self.prefixes, self.config.censor_ases, self.config.attack,
                             random.Random(f"{seed}:censor"))
        self.now = 0
        self._events: list[tuple[int, int, Datagram]] = []
        self._order = itertools.count()
        self.nodes: dict[str, Node] = {}
        self._node_order: list[Node] = []
        self.sinks: set[str] = set()
        self.trace: list[tuple[int, str, Endpoint, Endpoint, str, int]] = []
        self.counters: Counter[str] = Counter()
        self.sent_by_src: Counter[Endpoint] = Counter()
        self.delivered_to: Counter[str] = Counter()
        self.sent_to: Counter[Endpoint] = Counter()
        self._pattern_count: Counter[str] = Counter()

    def attach(self, addr: str, node: Node) -> None:
        self.nodes[addr] = node
        self._node_order.append(node)

    def add_sink(self, addr: str) -> None:
        """An address that silently absorbs traffic (a dummy host)."""
        self.sinks.add(addr)

    def add_driver(self, node: Node) -> None:
        """A node with no address that only acts on its own schedule."""
        self._node_order.append(node)

    def transport(self) -> SimTransport:
        return SimTransport(self)

    def send(self, d: Datagram) -> None:
        self.deliver(d, self.now)

    def deliver(self, d: Datagram, now: int) -> int | None:
        """Schedule ``d``; returns its arrival time or None if it was dropped."""
        if d.dst[0] not in self.nodes and d.dst[0] not in self.sinks:
            raise UnknownEndpoint(f"no host at {d.dst[0]}")
        self.counters[f"sent.{d.kind.value}"] += 1
        self.sent_by_src[d.claimed_src] += 1
        self.sent_to[d.dst] += 1
        injected: list[tuple[int, Datagram]] = []
        if self.censor.crosses(d):
            self.censor.observe(d, now)
            d, injected = self.censor.apply(d, now)
        for delay, extra in injected:
            self._schedule(now + max(1, delay), extra, "inject")
        if d is None:
            self.counters["dropped.censor"] += 1
            return None
        if self._pattern_drop(d):
            self.counters["dropped.pattern"] += 1
            return None
        if self.config.loss_rate and self._loss_rng.random() < self.config.loss_rate:
            self.counters["dropped.loss"] += 1
            return None
        delay = self.config.base_delay_ms
        if self.config.jitter_ms:
            delay += self._delay_rng.randint(0, self.config.jitter_ms)
        if self.config.reorder_rate and self._delay_rng.random() < self.config.reorder_rate:
            delay += self._delay_rng.randint(1, 2 * self.config.jitter_ms + 40)
        return self._schedule(now + delay, d, "send")

    def _pattern_drop(self, d: Datagram) -> bool:
        if self.config.loss_pattern is None or d.kind is not DatagramKind.RTP:
            return False
        node = self.nodes.get(d.dst[0])
        if node is None or not getattr(node, "is_client", False):
            return False
        period, count = self.config.loss_pattern
        i = self._pattern_count[d.dst[0]]
        self._pattern_count[d.dst[0]] += 1
        return i % period < count

    def _schedule(self, at: int, d: Datagram, tag: str) -> int:
        heapq.heappush(self._events, (at, next(self._order), d))
        self.trace.append((self.now, tag, d.claimed_src, d.dst, d.kind.value, d.size))
        return at

    def _next_time(self) -> int | None:
        times = [self._events[0][0]] if self._events else []
        for node in self._node_order:
            t = node.next_due()
            if t is not None:
                times.append(max(t, self.now))
        return min(times) if times else None

    def run_until(self, t_end: int, stop=None) -> dict:
        """Process events in time order up to and including ``t_end``.

        ``stop`` is an optional predicate checked after each step; the run
        ends early once it returns true.
        """
        while True:
            t = self._next_time()
            if t is None or t > t_end:
                break
            self.now = t
            arrivals = deque()
            while self._events and self._events[0][0] == t:
                arrivals.append(heapq.heappop(self._events)[2])
            for d in arrivals:
                node = self.nodes.get(d.dst[0])
                self.delivered_to[d.dst[0]] += 1
                if node is not None:
                    node.on_datagram(d, t)
            for node in self._node_order:
                due = node.next_due()
                if due is not None and due <= t:
                    node.tick(t)
            if stop is not None and stop():
                break
        return self.stats()

    def stats(self) -> dict:
        return {
            "now_ms": self.now,
            "counters": dict(sorted(self.counters.items())),
            "observed": len(self.censor.log.entries),
            "attack": dict(self.censor.outcomes),
        }


class SipProxy:
    """A provider's proxy: relays SIP between registered users, bodies untouched."""

    def __init__(self, addr: str, network: Network):
        self.addr = addr
        self.network = network
        self.users: dict[str, Endpoint] = {}
        self._callers: dict[str, Endpoint] = {}
        self.forwarded = 0

    @property
    def endpoint(self) -> Endpoint:
        return (self.addr, SIP_PORT)

    def register(self, sip_id: str, endpoint: Endpoint) -> None:
        self.users[sip_id] = endpoint

    def on_datagram(self, d: Datagram, now: int) -> None:
        if d.kind is not DatagramKind.SIP:
            return
        try:
            msg = parse(d.payload)
        except VoipSpoofError:
            return
        if msg.kind is Kind.INVITE:
            self._callers[msg.call_id] = d.claimed_src
        caller = self._callers.get(msg.call_id) or self.users.get(msg.caller_id)
        callee = self.users.get(msg.callee_id)
        if msg.kind in (Kind.INVITE, Kind.ACK):
            target = callee
        elif msg.kind is Kind.BYE:
            target = callee if d.claimed_src == caller else caller
        else:
            target = caller
        if target is None:
            logger.debug("proxy: nowhere to route %s", msg.kind.value)
            return
        self.forwarded += 1
        self.network.send(Datagram(self.endpoint, target, d.payload, DatagramKind.SIP))

    def tick(self, now: int) -> None:
        return None

    def next_due(self) -> int | None:
        return None
