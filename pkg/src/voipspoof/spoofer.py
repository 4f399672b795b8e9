"""The relay node.

It answers calls to registered callee IDs with an OK that names a dummy
host, then streams prefetched pages to the caller with the dummy host's
address as the source of every media packet.  The caller never sees, and
never needs, the relay's own address.

All times are integer milliseconds of whatever clock drives :meth:`tick`.
"""

from __future__ import annotations

import logging
import random
import threading
from dataclasses import dataclass, field
from enum import Enum

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from .aspath import ValleyFreeInference
from .codec_profiles import CodecProfile, lookup
from .dummy_hosts import (DEFAULT_DISTANCE_KM, DEFAULT_MONITOR_INTERVAL_MS, DummyHostRecord, DummyRegistry,
                          GeoProvider, HostStatus, PortScanner, assign, filter_by_entry_point, monitor, release)
from .errors import (DuplicateTask, NoCandidate, NoSession, PathUnknown, ScannerUnavailable, UnknownCallee,
                     VoipSpoofError)
from .fec import DEFAULT_GROUP_SIZE, Mux
from .prefetch import Fetcher, encode_records, prefetch
from .registration import RegistrationRecord, open_registration
from .rtp import MediaSender, SessionKeys, derive_keys
from .sip import (BUILTIN_UA_PROFILES, SIP_PORT, Dialog, Kind, SipMessage, UserAgentProfile, build_manipulated_ok,
                  build_response, parse)
from .transport import Datagram, DatagramKind, DatagramTransport, Endpoint, spoofed_send
from .upstream import UpstreamChannel, UpstreamMessage

logger = logging.getLogger(__name__)


@dataclass
class SpooferConfig:
    group_size: int = DEFAULT_GROUP_SIZE
    rtcp_interval_ms: int = 5_000
    monitor_interval_ms: int = DEFAULT_MONITOR_INTERVAL_MS
    fetch_latency_ms: int = 2_000
    distance_threshold_km: float = DEFAULT_DISTANCE_KM
    ua_profile: str = "sflphone"
    censor_ases: frozenset[int] = frozenset()


class SessionState(str, Enum):
    INITIALIZING = "initializing"
    STREAMING = "streaming"
    TERMINATED = "terminated"


@dataclass
class Session:
    callee_sip_id: str
    client_addr: str
    client_rtp: Endpoint
    dummy: DummyHostRecord
    keys: SessionKeys
    codec: CodecProfile
    mux: Mux
    dialog: Dialog
    ok: SipMessage
    sender: MediaSender
    state: SessionState = SessionState.INITIALIZING
    next_rtp: int = 0
    next_rtcp: int = 0
    next_monitor: int = 0
    fetches: list[tuple[int, int, bytes]] = field(default_factory=list)  # (due, task, records)
    end_reason: str = ""

    @property
    def dummy_endpoint(self) -> Endpoint:
        return (self.dummy.addr, self.dummy.rtp_port)

    @property
    def active_tasks(self) -> set[int]:
        return {t for _, t, _ in self.fetches} | set(self.mux.pending_tasks())


class Spoofer:
    def __init__(self, addr: str, private_key: X25519PrivateKey, registry: DummyRegistry, scanner: PortScanner,
                 transport: DatagramTransport, fetcher: Fetcher, proxy: Endpoint, *,
                 config: SpooferConfig | None = None, inbox: UpstreamChannel | None = None,
                 geo: GeoProvider | None = None, inference: ValleyFreeInference | None = None,
                 ua_profiles: dict[str, UserAgentProfile] | None = None, rng: random.Random | None = None):
        self.addr = addr
        self.private_key = private_key
        self.registry = registry
        self.scanner = scanner
        self.transport = transport
        self.fetcher = fetcher
        self.proxy = proxy
        self.config = config or SpooferConfig()
        self.inbox = inbox
        self.geo = geo
        self.inference = inference
        self.ua_profiles = ua_profiles or BUILTIN_UA_PROFILES
        self.rng = rng or random.Random()
        self.users: dict[str, RegistrationRecord] = {}
        self._by_callee: dict[str, RegistrationRecord] = {}
        self.sessions: dict[str, Session] = {}  # by Call-ID
        self.rejects = 0
        self.ignored_invites = 0
        self._lock = threading.RLock()

    @property
    def sip_endpoint(self) -> Endpoint:
        return (self.addr, SIP_PORT)

    @property
    def profile(self) -> UserAgentProfile:
        return self.ua_profiles[self.config.ua_profile]

    def register(self, ciphertext: bytes) -> RegistrationRecord:
        record = open_registration(self.private_key, ciphertext)
        with self._lock:
            self.users[record.caller_sip_id] = record
            self._by_callee[record.callee_sip_id] = record
        logger.info("registered %s -> callee %s", record.caller_sip_id, record.callee_sip_id)
        return record

    def _eligible(self, client_addr: str) -> list[str] | None:
        if self.inference is None or not self.config.censor_ases:
            return None
        try:
            reference = self.inference.path(self.addr, client_addr)
        except PathUnknown:
            logger.warning("no reference path to %s, entry-point filter skipped", client_addr)
            return None
        with self.registry.lock:
            candidates = [h for h in self.registry.hosts.values() if h.live]
        kept = filter_by_entry_point(candidates, client_addr, reference, self.inference,
                                     self.config.censor_ases, strict=False)
        return [h.addr for h in kept]

    def handle_invite(self, msg: SipMessage, now: int = 0) -> Session:
        record = self._by_callee.get(msg.callee_id)
        if record is None:
            raise UnknownCallee(msg.callee_id)
        if msg.sdp is None:
            raise VoipSpoofError("INVITE without SDP offer")
        client_addr = msg.sdp.media_address
        try:
            dummy = assign(msg.callee_id, self.registry, self.geo, self.config.distance_threshold_km,
                           self.rng, eligible=self._eligible(client_addr))
        except NoCandidate:
            reject = build_response(Kind.REJECT, msg, self.profile, rng=self.rng)
            self.transport.send(Datagram(self.sip_endpoint, self.proxy, reject.serialize(), DatagramKind.SIP))
            self.rejects += 1
            raise
        keys = derive_keys(record.master_key)
        ok = build_manipulated_ok(msg, self.profile, dummy.addr, dummy.rtp_port, keys.integrity_key, self.rng)
        codec = lookup(ok.sdp.codecs[0])
        dialog = Dialog()
        dialog.advance(msg)
        dialog.advance(ok)
        client_rtp = (client_addr, msg.sdp.rtp_port)
        session = Session(
            callee_sip_id=msg.callee_id, client_addr=client_addr, client_rtp=client_rtp, dummy=dummy,
            keys=keys, codec=codec, mux=Mux(codec.block_capacity, self.config.group_size, self.rng),
            dialog=dialog, ok=ok,
            sender=MediaSender(keys, codec, (dummy.addr, dummy.rtp_port), client_rtp, self.rng),
        )
        with self._lock:
            self.sessions[msg.call_id] = session
        self.transport.send(Datagram(self.sip_endpoint, self.proxy, ok.serialize(), DatagramKind.SIP))
        logger.info("call %s: dummy %s:%d, codec %s", msg.call_id, dummy.addr, dummy.rtp_port, codec.name)
        return session

    def on_datagram(self, d: Datagram, now: int) -> None:
        if d.kind is not DatagramKind.SIP:
            return
        try:
            msg = parse(d.payload, self.ua_profiles)
        except VoipSpoofError as exc:
            logger.debug("unparseable SIP from %s: %s", d.claimed_src, exc)
            return
        if msg.kind is Kind.INVITE:
            try:
                self.handle_invite(msg, now)
            except UnknownCallee:
                self.ignored_invites += 1  # stay silent, nothing to probe
            except NoCandidate as exc:
                logger.warning("call %s rejected: %s", msg.call_id, exc)
            return
        session = self.sessions.get(msg.call_id)
        if session is None or session.state is SessionState.TERMINATED:
            return
        if msg.kind is Kind.ACK and session.dialog.accepts(Kind.ACK):
            session.dialog.advance(msg)
            session.state = SessionState.STREAMING
            session.next_rtp = session.next_rtcp = now
            session.next_monitor = now + self.config.monitor_interval_ms
        elif msg.kind is Kind.BYE:
            self._close(session, "caller hung up")

    def session_for(self, client_addr: str) -> Session:
        with self._lock:
            for s in self.sessions.values():
                if s.client_addr == client_addr and s.state is SessionState.STREAMING:
                    return s
        raise NoSession(client_addr)

    def handle_upstream(self, m: UpstreamMessage, now: int = 0) -> None:
        session = self.session_for(m.client_addr)
        if m.is_terminate:
            self.terminate(session, "client request")
            return
        with self._lock:
            if m.task in session.active_tasks:
                raise DuplicateTask(f"task {m.task} already active for {m.client_addr}")
            records = prefetch(m.url, self.fetcher)
            session.fetches.append((now + self.config.fetch_latency_ms, m.task, encode_records(records)))
        logger.info("task %d: %s (%d records)", m.task, m.url, len(records))

    def terminate(self, session: Session, reason: str) -> None:
        """Hang up with a BYE that appears to come from the dummy host."""
        if session.state is SessionState.TERMINATED:
            return
        bye = build_response(Kind.BYE, session.ok, self.profile, rng=self.rng)
        spoofed_send(self.transport, Datagram((session.dummy.addr, SIP_PORT), self.proxy, bye.serialize(),
                                              DatagramKind.SIP))
        self._close(session, reason)

    def _close(self, session: Session, reason: str) -> None:
        session.state = SessionState.TERMINATED
        session.end_reason = reason
        try:
            release(session.dummy, self.registry)
        except VoipSpoofError:
            pass
        logger.info("session for %s closed: %s", session.client_addr, reason)

    def tick(self, now: int) -> list[Datagram]:
        if self.inbox is not None:
            for m in self.inbox.receive(now):
                try:
                    self.handle_upstream(m, now)
                except (NoSession, DuplicateTask) as exc:
                    logger.info("upstream message dropped: %s", exc)
        out: list[Datagram] = []
        with self._lock:
            sessions = [s for s in self.sessions.values() if s.state is SessionState.STREAMING]
        for s in sessions:
            out.extend(self._service(s, now))
        return out

    def _service(self, s: Session, now: int) -> list[Datagram]:
        out = []
        with self._lock:
            ready = [f for f in s.fetches if f[0] <= now]
            for f in ready:
                s.fetches.remove(f)
                s.mux.enqueue(f[1], f[2])
        if s.next_monitor <= now:
            s.next_monitor += self.config.monitor_interval_ms
            try:
                status = monitor(s.dummy, self.scanner, now / 1000, self.registry)
            except ScannerUnavailable:
                status = HostStatus.ALIVE
                logger.warning("scanner unavailable, keeping %s", s.dummy.addr)
            if status is HostStatus.LOST:
                logger.info("dummy %s lost", s.dummy.addr)
                self.terminate(s, "dummy host lost")
                return out
        while s.next_rtp <= now:
            d = s.sender.rtp(s.mux.next_block())
            spoofed_send(self.transport, d)
            out.append(d)
            s.next_rtp += s.codec.send_interval
        while s.next_rtcp <= now:
            d = s.sender.rtcp(s.next_rtcp)
            spoofed_send(self.transport, d)
            out.append(d)
            s.next_rtcp += self.config.rtcp_interval_ms
        return out

    def next_due(self) -> int | None:
        times = []
        if self.inbox is not None and (t := self.inbox.next_due()) is not None:
            times.append(t)
        with self._lock:
            for s in self.sessions.values():
                if s.state is SessionState.STREAMING:
                    times += [s.next_rtp, s.next_rtcp, s.next_monitor]
                    times += [due for due, _, _ in s.fetches]
        return min(times) if times else None
