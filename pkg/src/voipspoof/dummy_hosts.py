"""Finding, assigning and watching dummy hosts.

A dummy host is an uninvolved machine whose address the relay claims as the
source of its media.  It is usable while none of its SIP, RTP and RTCP ports
probes as ``closed`` or ``host seems down``; every other scanner verdict,
including the ambiguous filtered ones, keeps it plausible as a softphone.

Host fixture format, one host per line::

    addr  sip_state  rtp_state  rtcp_state  lat  lon  [os]

plus optional schedule lines ``@<seconds> addr sip rtp rtcp`` that change a
host's port states from that time on.  States may be spelled with ``_`` or
``|`` (``open|filtered``).
"""

from __future__ import annotations

import bisect
import logging
import math
import random
import threading
from dataclasses import dataclass, field
from enum import Enum
from os import PathLike
from typing import Callable, Iterable, Protocol

from .aspath import ValleyFreeInference, entry_point
from .errors import BadFixture, NoCandidate, NotAssigned, PathUnknown, ScannerUnavailable
from .sip import SIP_PORT, random_even_port

logger = logging.getLogger(__name__)

DEFAULT_DISTANCE_KM = 500.0
DEFAULT_MONITOR_INTERVAL_MS = 60_000


class PortState(str, Enum):
    OPEN = "open"
    CLOSED = "closed"
    FILTERED = "filtered"
    UNFILTERED = "unfiltered"
    OPEN_FILTERED = "open_filtered"
    CLOSED_FILTERED = "closed_filtered"
    HOST_SEEMS_DOWN = "host_seems_down"

    @classmethod
    def parse(cls, text: str) -> "PortState":
        return cls(text.strip().lower().replace("|", "_").replace(" ", "_"))


UNACCEPTED = frozenset({PortState.CLOSED, PortState.HOST_SEEMS_DOWN})


def acceptable(state: PortState) -> bool:
    return state not in UNACCEPTED


class HostStatus(str, Enum):
    ALIVE = "alive"
    LOST = "lost"


@dataclass
class DummyHostRecord:
    addr: str
    sip_port_state: PortState
    rtp_port_state: PortState
    rtcp_port_state: PortState
    rtp_port: int
    assigned_to: str | None = None
    location: tuple[float, float] | None = None
    last_checked: float = 0.0
    os_label: str | None = None

    def __post_init__(self):
        if self.rtp_port % 2:
            raise ValueError(f"{self.addr}: RTP port must be even")

    @property
    def rtcp_port(self) -> int:
        return self.rtp_port + 1

    @property
    def states(self) -> tuple[PortState, PortState, PortState]:
        return (self.sip_port_state, self.rtp_port_state, self.rtcp_port_state)

    @property
    def live(self) -> bool:
        return all(acceptable(s) for s in self.states)


@dataclass
class CalleeAssignment:
    callee_sip_id: str
    primary_dummy: str
    history: list[str] = field(default_factory=list)


class PortScanner(Protocol):
    def probe(self, addr: str, port: int) -> PortState: ...


@dataclass
class HostEntry:
    addr: str
    states: tuple[PortState, PortState, PortState]
    location: tuple[float, float] | None = None
    os_label: str | None = None
    schedule: list[tuple[float, tuple[PortState, PortState, PortState]]] = field(default_factory=list)

    def states_at(self, t: float) -> tuple[PortState, PortState, PortState]:
        times = [when for when, _ in self.schedule]
        i = bisect.bisect_right(times, t)
        return self.states if i == 0 else self.schedule[i - 1][1]


def load_host_fixture(path: str | PathLike) -> dict[str, HostEntry]:
    hosts: dict[str, HostEntry] = {}
    pending: list[tuple[int, float, str, tuple]] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise BadFixture(f"cannot read host fixture {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0].startswith("@"):
                    when = float(parts[0][1:])
                    states = tuple(PortState.parse(s) for s in parts[2:5])
                    if len(states) != 3:
                        raise ValueError("schedule line needs three states")
                    pending.append((lineno, when, parts[1], states))
                    continue
                if len(parts) not in (4, 6, 7):
                    raise ValueError("expected 'addr sip rtp rtcp [lat lon [os]]'")
                states = tuple(PortState.parse(s) for s in parts[1:4])
                loc = (float(parts[4]), float(parts[5])) if len(parts) >= 6 else None
                os_label = parts[6] if len(parts) == 7 else None
            except ValueError as exc:
                raise BadFixture(f"{path}:{lineno}: {exc}") from None
            hosts[parts[0]] = HostEntry(parts[0], states, loc, os_label)
    for lineno, when, addr, states in pending:
        if addr not in hosts:
            raise BadFixture(f"{path}:{lineno}: schedule for unknown host {addr}")
        hosts[addr].schedule.append((when, states))
    for entry in hosts.values():
        entry.schedule.sort(key=lambda e: e[0])
    return hosts


class FixtureScanner:
    """Answers probes from a host table instead of the network.

    Port 5060 reports the SIP state, other even ports the RTP state and odd
    ports the RTCP state.  Unknown addresses look like hosts that are down.
    ``clock`` returns seconds and selects the active schedule entry.
    """

    def __init__(self, hosts: dict[str, HostEntry], clock: Callable[[], float] = lambda: 0.0):
        self.hosts = hosts
        self.clock = clock
        self.available = True
        self.probes = 0

    @classmethod
    def from_file(cls, path: str | PathLike, clock: Callable[[], float] = lambda: 0.0) -> "FixtureScanner":
        return cls(load_host_fixture(path), clock)

    def probe(self, addr: str, port: int) -> PortState:
        if not self.available:
            raise ScannerUnavailable("scanner offline")
        self.probes += 1
        entry = self.hosts.get(addr)
        if entry is None:
            return PortState.HOST_SEEMS_DOWN
        sip, rtp, rtcp = entry.states_at(self.clock())
        if port == SIP_PORT:
            return sip
        return rtp if port % 2 == 0 else rtcp


def scan_candidates(ip_range: Iterable[str], scanner: PortScanner, rng: random.Random | None = None,
                    now: float = 0.0) -> list[DummyHostRecord]:
    """Probe SIP, then a random even RTP port and the RTCP port above it."""
    found = []
    for ip in ip_range:
        sip = scanner.probe(ip, SIP_PORT)
        if not acceptable(sip):
            continue
        rtp_port = random_even_port(rng)
        rtp = scanner.probe(ip, rtp_port)
        if not acceptable(rtp):
            continue
        rtcp = scanner.probe(ip, rtp_port + 1)
        if not acceptable(rtcp):
            continue
        found.append(DummyHostRecord(ip, sip, rtp, rtcp, rtp_port, last_checked=now))
    return found


class GeoProvider(Protocol):
    def locate(self, addr: str) -> tuple[float, float] | None: ...


class FixtureGeo:
    def __init__(self, locations: dict[str, tuple[float, float]]):
        self.locations = locations

    @classmethod
    def from_hosts(cls, hosts: dict[str, HostEntry]) -> "FixtureGeo":
        return cls({a: h.location for a, h in hosts.items() if h.location is not None})

    def locate(self, addr: str) -> tuple[float, float] | None:
        return self.locations.get(addr)


EARTH_RADIUS_KM = 6371.0088


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1, lat2, lon2 = map(math.radians, (*a, *b))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


class DummyRegistry:
    """Known candidates plus per-callee assignment history.

    All mutation goes through ``lock``; it is reentrant so helpers can nest.
    """

    def __init__(self, hosts: Iterable[DummyHostRecord] = ()):
        self.lock = threading.RLock()
        self.hosts: dict[str, DummyHostRecord] = {}
        self.assignments: dict[str, CalleeAssignment] = {}
        for h in hosts:
            self.add(h)

    def add(self, host: DummyHostRecord) -> None:
        with self.lock:
            self.hosts[host.addr] = host

    def assigned(self) -> dict[str, str]:
        with self.lock:
            return {h.addr: h.assigned_to for h in self.hosts.values() if h.assigned_to is not None}


def _location(host: DummyHostRecord, geo: GeoProvider | None) -> tuple[float, float] | None:
    if host.location is not None:
        return host.location
    return geo.locate(host.addr) if geo else None


def assign(callee: str, registry: DummyRegistry, geo: GeoProvider | None = None,
           distance_threshold_km: float = DEFAULT_DISTANCE_KM, rng: random.Random | None = None,
           eligible: Iterable[str] | None = None) -> DummyHostRecord:
    """Pick a dummy host for ``callee`` and mark it taken.

    A callee keeps its primary host while that host is usable, falls back to
    the most recent usable host from its own history, and otherwise gets the
    nearest free host within ``distance_threshold_km`` of the primary.
    ``eligible`` restricts the choice, e.g. to hosts that passed the
    entry-point filter for this client.
    """
    rng = rng or random.Random()
    with registry.lock:
        pool = set(registry.hosts) if eligible is None else set(eligible) & set(registry.hosts)

        def usable(addr: str) -> bool:
            h = registry.hosts.get(addr)
            return h is not None and addr in pool and h.live and h.assigned_to in (None, callee)

        record = registry.assignments.get(callee)
        chosen: str | None = None
        if record is None:
            free = sorted(a for a in pool if usable(a))
            if not free:
                raise NoCandidate("no live unassigned dummy host")
            chosen = rng.choice(free)
            registry.assignments[callee] = CalleeAssignment(callee, chosen, [chosen])
        elif usable(record.primary_dummy):
            chosen = record.primary_dummy
        else:
            chosen = next((a for a in reversed(record.history) if usable(a)), None)
            if chosen is None:
                primary = registry.hosts.get(record.primary_dummy)
                origin = _location(primary, geo) if primary else None
                if origin is None:
                    raise NoCandidate(f"primary dummy of {callee} has no known location")
                near = []
                for a in pool:
                    if a in record.history or not usable(a):
                        continue
                    loc = _location(registry.hosts[a], geo)
                    if loc is None:
                        continue
                    d = haversine_km(origin, loc)
                    if d <= distance_threshold_km:
                        near.append((d, a))
                if not near:
                    raise NoCandidate(f"no free dummy host within {distance_threshold_km} km of {record.primary_dummy}")
                chosen = min(near)[1]
                record.history.append(chosen)
        for other in registry.hosts.values():
            if other.assigned_to == callee and other.addr != chosen:
                other.assigned_to = None
        host = registry.hosts[chosen]
        host.assigned_to = callee
        logger.debug("dummy %s assigned to %s", chosen, callee)
        return host


def release(host: DummyHostRecord, registry: DummyRegistry) -> None:
    with registry.lock:
        if host.assigned_to is None:
            raise NotAssigned(f"{host.addr} is not assigned")
        host.assigned_to = None


def monitor(host: DummyHostRecord, scanner: PortScanner, now: float = 0.0,
            registry: DummyRegistry | None = None) -> HostStatus:
    """Re-probe an assigned host's three VoIP ports and record the result."""
    states = (
        scanner.probe(host.addr, SIP_PORT),
        scanner.probe(host.addr, host.rtp_port),
        scanner.probe(host.addr, host.rtcp_port),
    )
    lock = registry.lock if registry else threading.RLock()
    with lock:
        host.sip_port_state, host.rtp_port_state, host.rtcp_port_state = states
        host.last_checked = now
    return HostStatus.ALIVE if host.live else HostStatus.LOST


def filter_by_entry_point(candidates: Iterable[DummyHostRecord], client_addr: str, reference_path: list[int],
                          inference: ValleyFreeInference, censor_ases: set[int] | frozenset[int],
                          strict: bool = True) -> list[DummyHostRecord]:
    """Keep hosts whose predicted path to the client enters the censor where the real path does.

    With ``strict`` an unroutable candidate raises PathUnknown; otherwise it
    is dropped.
    """
    wanted = entry_point(reference_path, censor_ases)
    kept = []
    for host in candidates:
        try:
            path = inference.path(host.addr, client_addr)
        except PathUnknown:
            if strict:
                raise
            continue
        if entry_point(path, censor_ases) == wanted:
            kept.append(host)
    return kept
