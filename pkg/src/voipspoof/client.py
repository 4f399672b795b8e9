"""The user side: places the call, keeps up dummy media, decodes pages and
answers a browser from its cache.

Page timings: ``html`` is when the first record of the page's task (the
html pair) is complete, ``full`` is when its End-of-Page marker arrives,
both relative to the navigation request.
"""

from __future__ import annotations

import logging
import os
import random
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from urllib.parse import urlsplit

from .codec_profiles import CodecProfile, lookup
from .errors import (GatewayTimeout, IntegrityFailure, NoCandidate, SessionTimeout, UnrecoverableGap,
                     VoipSpoofError)
from .fec import DEFAULT_GROUP_SIZE, FILLER_SEQ, Block, Demux
from .prefetch import RecordParser, build_response, normalize_url, request_url
from .rtp import MediaReceiver, MediaSender, SessionKeys, derive_keys
from .sip import (BUILTIN_UA_PROFILES, SIP_PORT, Dialog, Kind, SipMessage, VerifiedCallee, build_invite,
                  build_response as build_sip_response, parse, random_even_port, verify_ok)
from .transport import Datagram, DatagramKind, DatagramTransport, Endpoint
from .upstream import TERMINATE, UpstreamChannel, UpstreamMessage

logger = logging.getLogger(__name__)

DEFAULT_OBJECT_EXTENSIONS = frozenset({
    ".png", ".jpg", ".jpeg", ".gif", ".webp", ".svg", ".ico", ".bmp", ".css", ".js", ".json", ".xml",
    ".woff", ".woff2", ".ttf", ".otf", ".mp3", ".mp4", ".webm", ".ogg", ".wav", ".swf", ".pdf",
})


@dataclass
class ClientConfig:
    addr: str
    caller_sip_id: str
    callee_sip_id: str
    master_key: bytes
    proxy: Endpoint
    codecs: tuple[str, ...] | None = None  # offer order; None uses the profile's
    ua_profile: str = "pjsua"
    group_size: int = DEFAULT_GROUP_SIZE
    invite_timeout_ms: int = 32_000
    page_deadline_ms: int = 120_000
    teardown_deadline_ms: int = 30_000
    rtcp_interval_ms: int = 5_000
    object_extensions: frozenset[str] = DEFAULT_OBJECT_EXTENSIONS
    navigation_urls: frozenset[str] = frozenset()


class ClientState(str, Enum):
    CALLING = "calling"
    STREAMING = "streaming"
    CLOSING = "closing"
    CLOSED = "closed"
    ABORTED = "aborted"


class PageStatus(str, Enum):
    LOADING = "loading"
    COMPLETE = "complete"
    GAP = "gap"
    TIMEOUT = "timeout"


@dataclass
class PageFetch:
    url: str
    task: int
    started: int
    deadline: int
    parser: RecordParser = field(default_factory=RecordParser)
    status: PageStatus = PageStatus.LOADING
    html_at: int | None = None
    done_at: int | None = None
    records: int = 0
    received_bytes: int = 0

    @property
    def html_s(self) -> float | None:
        return None if self.html_at is None else (self.html_at - self.started) / 1000

    @property
    def full_page_s(self) -> float | None:
        return None if self.done_at is None else (self.done_at - self.started) / 1000

    def stats(self) -> dict:
        return {"url": self.url, "task": self.task, "status": self.status.value, "html_s": self.html_s,
                "full_page_s": self.full_page_s, "records": self.records, "bytes": self.received_bytes}


@dataclass
class RequestHandle:
    key: str
    page: PageFetch | None
    response: bytes | None = None


class ClientSession:
    is_client = True

    def __init__(self, config: ClientConfig, transport: DatagramTransport, upstream: UpstreamChannel,
                 rng: random.Random | None = None):
        self.config = config
        self.transport = transport
        self.upstream = upstream
        self.rng = rng or random.Random()
        self.profile = BUILTIN_UA_PROFILES[config.ua_profile]
        self.keys: SessionKeys = derive_keys(config.master_key)
        self.state = ClientState.CALLING
        self.error: Exception | None = None
        self.dialog = Dialog()
        self.invite: SipMessage | None = None
        self.ok: SipMessage | None = None
        self.verified_callee: VerifiedCallee | None = None
        self.codec: CodecProfile | None = None
        self.rtp_port = random_even_port(self.rng)
        self.sender: MediaSender | None = None
        self.receiver = MediaReceiver(self.keys)
        self.demux: Demux | None = None
        self.cache: dict[str, bytes] = {}
        self.pages: dict[int, PageFetch] = {}
        self.history: list[PageFetch] = []
        self.next_task = 1
        self.upstream_sent = 0
        self.gateway_timeouts = 0
        self.started_at = 0
        self._deadline: int | None = None
        self._next_rtp = 0
        self._next_rtcp = 0
        self._cond = threading.Condition(threading.RLock())

    @property
    def rtp_endpoint(self) -> Endpoint:
        return (self.config.addr, self.rtp_port)

    @property
    def sip_endpoint(self) -> Endpoint:
        return (self.config.addr, SIP_PORT)

    # -- call setup -------------------------------------------------------

    def start(self, now: int = 0) -> "ClientSession":
        invite = build_invite(self.config.caller_sip_id, self.config.callee_sip_id, self.config.addr, self.profile,
                              rtp_port=self.rtp_port, rng=self.rng)
        if self.config.codecs:
            invite = replace(invite, sdp=replace(invite.sdp, codecs=tuple(self.config.codecs)))
        self.invite = invite
        self.dialog.advance(invite)
        self.started_at = now
        self._deadline = now + self.config.invite_timeout_ms
        self.transport.send(Datagram(self.sip_endpoint, self.config.proxy, invite.serialize(), DatagramKind.SIP))
        return self

    def _abort(self, error: Exception) -> None:
        with self._cond:
            self.state = ClientState.ABORTED
            self.error = error
            self._deadline = None
            self._cond.notify_all()
        logger.info("session aborted: %s", error)

    def _on_sip(self, d: Datagram, now: int) -> None:
        try:
            msg = parse(d.payload)
        except VoipSpoofError:
            return
        if self.invite is None or msg.call_id != self.invite.call_id:
            return
        if msg.kind is Kind.OK and self.state is ClientState.CALLING:
            try:
                callee = verify_ok(msg, self.keys.integrity_key)
                codec = lookup(msg.sdp.codecs[0])
            except (IntegrityFailure, VoipSpoofError) as exc:
                # a tampered answer gets no ACK; the call just dies
                self._abort(exc if isinstance(exc, IntegrityFailure) else IntegrityFailure(str(exc)))
                return
            self.dialog.advance(msg)
            self.ok = msg
            ack = build_sip_response(Kind.ACK, msg, self.profile, rng=self.rng)
            self.dialog.advance(ack)
            self.transport.send(Datagram(self.sip_endpoint, self.config.proxy, ack.serialize(), DatagramKind.SIP))
            self.verified_callee = callee
            self.codec = codec
            self.demux = Demux(codec.block_capacity, self.config.group_size)
            self.sender = MediaSender(self.keys, codec, self.rtp_endpoint, (callee.addr, callee.rtp_port), self.rng)
            with self._cond:
                self.state = ClientState.STREAMING
                self._deadline = None
                self._next_rtp = self._next_rtcp = now
                self._cond.notify_all()
            logger.info("call up: callee media at %s:%d, codec %s", callee.addr, callee.rtp_port, codec.name)
        elif msg.kind in (Kind.TRYING, Kind.RINGING) and self.dialog.accepts(msg.kind):
            self.dialog.advance(msg)
        elif msg.kind is Kind.REJECT and self.state is ClientState.CALLING:
            self._abort(NoCandidate("call declined"))
        elif msg.kind is Kind.BYE and self.state in (ClientState.STREAMING, ClientState.CLOSING):
            self._close("BYE received")

    def _close(self, reason: str) -> None:
        with self._cond:
            self.state = ClientState.CLOSED
            self._deadline = None
            for page in self.pages.values():
                if page.status is PageStatus.LOADING:
                    page.status = PageStatus.TIMEOUT
            self._cond.notify_all()
        logger.info("session closed: %s", reason)

    # -- downstream -------------------------------------------------------

    def on_datagram(self, d: Datagram, now: int) -> None:
        if d.kind is DatagramKind.SIP:
            self._on_sip(d, now)
        elif self.state in (ClientState.STREAMING, ClientState.CLOSING):
            if d.kind is DatagramKind.RTCP:
                self.receiver.receive_rtcp(d.payload)
            elif d.kind is DatagramKind.RTP and d.dst == self.rtp_endpoint:
                block = self.receiver.receive_rtp(d.payload)
                if block is not None:
                    try:
                        delivered = self.demux.ingest(block)
                    except ValueError:
                        logger.warning("dropping inconsistent block")
                        return
                    self._consume(delivered, now)

    def _consume(self, delivered: list[tuple[int, bytes]], now: int) -> None:
        with self._cond:
            for task, data in delivered:
                page = self.pages.get(task)
                if page is None or page.status is not PageStatus.LOADING:
                    continue
                page.received_bytes += len(data)
                try:
                    records = page.parser.feed(data)
                except VoipSpoofError:
                    self._fail_page(page, now)
                    continue
                for rec in records:
                    if rec.is_end_of_page:
                        page.status = PageStatus.COMPLETE
                        page.done_at = now
                        self.demux.mark_complete(task)
                        self._finish(page)
                        break
                    page.records += 1
                    if page.html_at is None:
                        page.html_at = now
                    self.cache[normalize_url(rec.url)] = rec.response
            gaps = self.demux.pop_gaps()
            if gaps:
                for page in list(self.pages.values()):
                    stream = self.demux.streams.get(page.task)
                    if page.status is PageStatus.LOADING and (stream is None or stream.gap or not page.received_bytes):
                        self._fail_page(page, now)
            if delivered or gaps:
                self._cond.notify_all()

    def _fail_page(self, page: PageFetch, now: int) -> None:
        page.status = PageStatus.GAP
        page.done_at = None
        self._finish(page)
        logger.info("page %s lost to an unrecoverable gap", page.url)

    def _finish(self, page: PageFetch) -> None:
        self.pages.pop(page.task, None)
        if self.demux is not None:
            self.demux.reset_task(page.task)

    # -- proxy ------------------------------------------------------------

    def is_navigation(self, url: str) -> bool:
        if normalize_url(url) in {normalize_url(u) for u in self.config.navigation_urls}:
            return True
        path = urlsplit(url).path
        ext = os.path.splitext(path)[1].lower()
        return ext not in self.config.object_extensions

    def _allocate_task(self) -> int:
        for _ in range(255):
            task = self.next_task
            self.next_task = task % 255 + 1
            if task not in self.pages:
                return task
        raise VoipSpoofError("all 255 task numbers are in use")

    def begin_request(self, request: bytes, now: int) -> RequestHandle:
        """Answer from cache, or start fetching the page; never blocks."""
        url = request_url(request)
        key = normalize_url(url)
        with self._cond:
            if key in self.cache:
                return RequestHandle(key, None, self.cache[key])
            for page in self.pages.values():
                if normalize_url(page.url) == key:
                    return RequestHandle(key, page)
            if not self.is_navigation(url):
                # objects are never fetched on their own; wait for the page that embeds them
                loading = sorted(self.pages.values(), key=lambda p: p.started)
                return RequestHandle(key, loading[-1] if loading else None)
            if self.state is not ClientState.STREAMING:
                raise SessionTimeout("no active session")
            task = self._allocate_task()
            page = PageFetch(url, task, now, now + self.config.page_deadline_ms)
            self.pages[task] = page
            self.history.append(page)
        self.upstream.send(UpstreamMessage(url, self.config.addr, task), now)
        self.upstream_sent += 1
        return RequestHandle(key, page)

    def resolve(self, handle: RequestHandle) -> bytes | None:
        """The response once available; None while the page is still loading."""
        if handle.response is not None:
            return handle.response
        with self._cond:
            if handle.key in self.cache:
                handle.response = self.cache[handle.key]
                return handle.response
            page = handle.page
            if page is not None and page.status is PageStatus.LOADING:
                return None
            if page is not None and page.status is PageStatus.GAP:
                raise UnrecoverableGap(page.url)
            self.gateway_timeouts += 1
            raise GatewayTimeout(handle.key)

    def http_request(self, request: bytes, now: int = 0, timeout_s: float | None = None) -> bytes:
        """Blocking variant for a real browser front end running beside the event loop."""
        handle = self.begin_request(request, now)
        with self._cond:
            while True:
                result = self.resolve(handle)
                if result is not None:
                    return result
                if not self._cond.wait(timeout_s):
                    raise GatewayTimeout(handle.key)

    def serve(self, request: bytes, now: int = 0, timeout_s: float | None = None) -> bytes:
        """Like :meth:`http_request` but maps failures to HTTP error responses."""
        try:
            return self.http_request(request, now, timeout_s)
        except GatewayTimeout:
            return build_response(b"", "text/plain", 504, "Gateway Timeout")
        except UnrecoverableGap:
            return build_response(b"", "text/plain", 502, "Bad Gateway")

    # -- outbound cadence -------------------------------------------------

    def teardown(self, now: int) -> None:
        with self._cond:
            if self.state is not ClientState.STREAMING:
                return
            self.state = ClientState.CLOSING
            self._deadline = now + self.config.teardown_deadline_ms
        self.upstream.send(UpstreamMessage(TERMINATE, self.config.addr, self._allocate_task()), now)
        self.upstream_sent += 1

    def tick(self, now: int) -> list[Datagram]:
        out: list[Datagram] = []
        if self._deadline is not None and now >= self._deadline:
            if self.state is ClientState.CALLING:
                self._abort(SessionTimeout(f"no answer within {self.config.invite_timeout_ms} ms"))
            elif self.state is ClientState.CLOSING:
                self._close("teardown deadline")
        with self._cond:
            for page in list(self.pages.values()):
                if page.status is PageStatus.LOADING and now >= page.deadline:
                    page.status = PageStatus.TIMEOUT
                    self._finish(page)
                    self._cond.notify_all()
        if self.state in (ClientState.STREAMING, ClientState.CLOSING):
            cap = self.codec.block_capacity
            while self._next_rtp <= now:
                d = self.sender.rtp(Block(FILLER_SEQ, 0, cap, self.rng.randbytes(cap)))
                self.transport.send(d)
                out.append(d)
                self._next_rtp += self.codec.send_interval
            while self._next_rtcp <= now:
                d = self.sender.rtcp(self._next_rtcp)
                self.transport.send(d)
                out.append(d)
                self._next_rtcp += self.config.rtcp_interval_ms
        return out

    def next_due(self) -> int | None:
        times = [p.deadline for p in self.pages.values()]
        if self._deadline is not None:
            times.append(self._deadline)
        if self.state in (ClientState.STREAMING, ClientState.CLOSING):
            times += [self._next_rtp, self._next_rtcp]
        return min(times) if times else None

    def stats(self) -> dict:
        demux = self.demux
        return {
            "state": self.state.value,
            "pages": [p.stats() for p in self.history],
            "upstream_messages": self.upstream_sent,
            "rtp_sent": self.sender.rtp_sent if self.sender else 0,
            "rtcp_sent": self.sender.rtcp_sent if self.sender else 0,
            "rtp_accepted": self.receiver.accepted,
            "rtcp_accepted": self.receiver.rtcp_accepted,
            "auth_failures": self.receiver.auth_failures,
            "replays": self.receiver.replays,
            "fec_recovered": demux.recovered if demux else 0,
            "fec_gaps": len(demux.unrecoverable_groups) if demux else 0,
            "gateway_timeouts": self.gateway_timeouts,
        }


def start_session(config: ClientConfig, transport: DatagramTransport, upstream: UpstreamChannel,
                  now: int = 0, rng: random.Random | None = None) -> ClientSession:
    return ClientSession(config, transport, upstream, rng).start(now)
