"""A compact SIP/SDP subset: enough of the INVITE/OK/ACK/BYE flow to mimic a softphone.

Messages carry Via, From, To, Call-ID, CSeq and Contact, then whatever fixed
optional headers the user-agent profile dictates, then an SDP body on INVITE
and OK.  From/To always name caller and callee respectively, including on a
BYE sent by the callee.

The OK produced by the relay advertises a dummy host as the media endpoint.
Its To-tag ends in 16 hex characters of HMAC-SHA256 over ``"addr:port"``
keyed with the session integrity key, so the caller can tell whether the SDP
address was rewritten in transit.
"""

from __future__ import annotations

import hmac
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from hashlib import sha256
from os import PathLike
from typing import Mapping

from .codec_profiles import BUILTIN_PROFILES
from .errors import (
    IntegrityFailure,
    MalformedUri,
    MissingDialogState,
    MissingSdp,
    NoCommonCodec,
    ParseError,
)

SIP_PORT = 5060
MAC_HEX_CHARS = 16
MIN_TAG_PREFIX = 4
_URI_RE = re.compile(r"^[A-Za-z0-9._~%+!-]+@[A-Za-z0-9.-]+(:\d{1,5})?$")


class Kind(str, Enum):
    INVITE = "INVITE"
    TRYING = "TRYING"
    RINGING = "RINGING"
    OK = "OK"
    ACK = "ACK"
    BYE = "BYE"
    REJECT = "REJECT"


REQUESTS = {Kind.INVITE, Kind.ACK, Kind.BYE}
STATUS = {Kind.TRYING: (100, "Trying"), Kind.RINGING: (180, "Ringing"), Kind.OK: (200, "OK"), Kind.REJECT: (603, "Decline")}
_STATUS_KIND = {code: kind for kind, (code, _) in STATUS.items()}
_CORE_HEADERS = ("via", "from", "to", "call-id", "cseq", "contact", "content-type", "content-length")


@dataclass(frozen=True)
class SdpBody:
    media_address: str
    rtp_port: int
    codecs: tuple[str, ...]
    session_id: int = 0

    def __post_init__(self):
        if self.rtp_port % 2:
            raise ValueError(f"RTP port must be even, got {self.rtp_port}")
        object.__setattr__(self, "codecs", tuple(self.codecs))

    @property
    def rtcp_port(self) -> int:
        return self.rtp_port + 1

    def to_text(self) -> str:
        pts = []
        maps = []
        for label in self.codecs:
            try:
                codec = BUILTIN_PROFILES[label]
            except KeyError:
                raise ValueError(f"no RTP mapping for codec {label!r}") from None
            pts.append(str(codec.rtp_payload_type))
            maps.append(f"a=rtpmap:{codec.rtp_payload_type} {codec.encoding}/{codec.clock_rate}")
        lines = [
            "v=0",
            f"o=- {self.session_id} {self.session_id} IN IP4 {self.media_address}",
            "s=-",
            f"c=IN IP4 {self.media_address}",
            "t=0 0",
            f"m=audio {self.rtp_port} RTP/AVP {' '.join(pts)}",
            *maps,
        ]
        return "\r\n".join(lines) + "\r\n"

    @classmethod
    def from_text(cls, text: str, offset: int = 0) -> "SdpBody":
        by_encoding = {c.encoding: c.name for c in BUILTIN_PROFILES.values()}
        addr = port = None
        session_id = 0
        rtpmap: dict[str, str] = {}
        pts: list[str] = []
        pos = offset
        for line in text.split("\r\n"):
            if line.startswith("c=IN IP4 "):
                addr = line[9:].strip()
            elif line.startswith("o="):
                parts = line[2:].split()
                if len(parts) >= 2 and parts[1].isdigit():
                    session_id = int(parts[1])
            elif line.startswith("m=audio "):
                parts = line.split()
                if len(parts) < 4 or not parts[1].isdigit():
                    raise ParseError("bad SDP media line", pos)
                port = int(parts[1])
                pts = parts[3:]
            elif line.startswith("a=rtpmap:"):
                pt, _, rest = line[9:].partition(" ")
                rtpmap[pt] = rest.split("/")[0]
            pos += len(line) + 2
        if addr is None or port is None:
            raise ParseError("SDP lacks connection or media line", offset)
        if port % 2:
            raise ParseError("SDP media port is odd", offset)
        codecs = tuple(by_encoding.get(rtpmap.get(pt, ""), rtpmap.get(pt, pt)) for pt in pts)
        return cls(addr, port, codecs, session_id)


@dataclass(frozen=True)
class UserAgentProfile:
    name: str
    header_template: tuple[tuple[str, str], ...]
    tag_length: int
    codec_prefs: tuple[str, ...]
    os_labels: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.tag_length < MIN_TAG_PREFIX:
            raise ValueError("tag_length must be at least 4")
        if not self.codec_prefs:
            raise ValueError("a profile needs at least one codec")
        object.__setattr__(self, "header_template", tuple(tuple(h) for h in self.header_template))
        object.__setattr__(self, "codec_prefs", tuple(self.codec_prefs))
        object.__setattr__(self, "os_labels", frozenset(self.os_labels))

    @property
    def agent(self) -> str | None:
        for k, v in self.header_template:
            if k.lower() in ("user-agent", "server"):
                return v
        return None


_ALLOW = "INVITE,ACK,OPTIONS,BYE,CANCEL,SUBSCRIBE,NOTIFY,REFER,MESSAGE,INFO,PING"

BUILTIN_UA_PROFILES: dict[str, UserAgentProfile] = {
    p.name: p
    for p in (
        UserAgentProfile(
            "ekiga",
            (("Max-Forwards", "70"), ("User-Agent", "Ekiga/3.2.7"), ("Allow", _ALLOW), ("Supported", "100rel,replaces")),
            tag_length=32, codec_prefs=("G.722-64", "G.711", "iLBC"), os_labels={"linux", "windows"},
        ),
        UserAgentProfile(
            "pjsua",
            (("Max-Forwards", "70"), ("User-Agent", "PJSUA v1.12.0/i686-pc-linux-gnu"),
             ("Allow", "PRACK, INVITE, ACK, BYE, CANCEL, UPDATE, SUBSCRIBE, NOTIFY, REFER, MESSAGE, OPTIONS"),
             ("Supported", "replaces, 100rel, timer, norefersub")),
            tag_length=32, codec_prefs=("G.711", "iLBC", "G.722-64"), os_labels={"linux", "windows", "macos"},
        ),
        UserAgentProfile(
            "sflphone",
            (("Max-Forwards", "70"), ("User-Agent", "SFLphone/0.9.13"), ("Allow", _ALLOW)),
            tag_length=24, codec_prefs=("G.711", "G.722-64", "G.726-40", "iLBC"), os_labels={"linux"},
        ),
        UserAgentProfile(
            "blink",
            (("Max-Forwards", "70"), ("User-Agent", "Blink 0.2.8 (MacOSX)"), ("Allow", "SUBSCRIBE,NOTIFY,PRACK,INVITE,ACK,BYE,CANCEL,OPTIONS,REFER")),
            tag_length=28, codec_prefs=("G.722-64", "G.711", "iLBC"), os_labels={"macos", "windows"},
        ),
    )
}


def load_ua_profile(path: str | PathLike) -> UserAgentProfile:
    """Read a profile file: ``key: value`` metadata, a ``---`` line, then header lines."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    meta_text, sep, template_text = text.partition("\n---\n")
    if not sep:
        raise ValueError(f"{path}: missing '---' separator")
    meta: dict[str, str] = {}
    for line in meta_text.splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            k, _, v = line.partition(":")
            meta[k.strip().lower()] = v.strip()
    headers = []
    for line in template_text.splitlines():
        if line.strip():
            k, _, v = line.partition(":")
            headers.append((k.strip(), v.strip()))
    return UserAgentProfile(
        name=meta["name"],
        header_template=tuple(headers),
        tag_length=int(meta["tag_length"]),
        codec_prefs=tuple(meta["codecs"].split()),
        os_labels=frozenset(meta.get("os", "").split()),
    )


@dataclass(frozen=True)
class SipMessage:
    kind: Kind
    caller_id: str
    callee_id: str
    from_tag: str
    to_tag: str
    call_id: str
    via: str = ""
    contact: str = ""
    cseq: int = 1
    sdp: SdpBody | None = None
    ua_profile_name: str = ""
    headers: tuple[tuple[str, str], ...] = field(default=())

    @property
    def is_request(self) -> bool:
        return self.kind in REQUESTS

    def start_line(self) -> str:
        if self.is_request:
            return f"{self.kind.value} sip:{self.callee_id} SIP/2.0"
        code, reason = STATUS[self.kind]
        return f"SIP/2.0 {code} {reason}"

    def serialize(self) -> bytes:
        method = self.kind.value if self.is_request else "INVITE"
        to = f"<sip:{self.callee_id}>" + (f";tag={self.to_tag}" if self.to_tag else "")
        lines = [
            self.start_line(),
            f"Via: SIP/2.0/UDP {self.via}",
            f"From: <sip:{self.caller_id}>;tag={self.from_tag}",
            f"To: {to}",
            f"Call-ID: {self.call_id}",
            f"CSeq: {self.cseq} {method}",
        ]
        if self.contact:
            user = (self.callee_id if self.kind in (Kind.OK, Kind.RINGING) else self.caller_id).split("@")[0]
            lines.append(f"Contact: <sip:{user}@{self.contact}>")
        lines.extend(f"{k}: {v}" for k, v in self.headers)
        body = self.sdp.to_text() if self.sdp else ""
        if body:
            lines.append("Content-Type: application/sdp")
        lines.append(f"Content-Length: {len(body.encode())}")
        return ("\r\n".join(lines) + "\r\n\r\n" + body).encode()


def _norm_uri(uri: str) -> str:
    uri = uri.strip()
    if uri.startswith("sip:"):
        uri = uri[4:]
    if not _URI_RE.match(uri):
        raise MalformedUri(f"not a SIP URI: {uri!r}")
    return uri


def _uri_from_header(value: str, offset: int) -> tuple[str, str]:
    m = re.match(r"^\s*<sip:([^>]+)>\s*(?:;tag=(\S+))?\s*$", value)
    if not m:
        raise ParseError(f"bad name-addr {value!r}", offset)
    return m.group(1), m.group(2) or ""


def parse(data: bytes, profiles: Mapping[str, UserAgentProfile] | None = None) -> SipMessage:
    """Parse one SIP message.  Raises ParseError with the offending offset."""
    profiles = BUILTIN_UA_PROFILES if profiles is None else profiles
    if not data:
        raise ParseError("empty message", 0)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("message is not UTF-8", exc.start) from None
    head, sep, body = text.partition("\r\n\r\n")
    if not sep:
        raise ParseError("no blank line after headers", len(data))
    lines = head.split("\r\n")
    start = lines[0]
    parts = start.split(" ", 2)
    if len(parts) == 3 and parts[2] == "SIP/2.0" and parts[0] in {k.value for k in REQUESTS}:
        kind = Kind(parts[0])
    elif len(parts) == 3 and parts[0] == "SIP/2.0" and parts[1].isdigit() and int(parts[1]) in _STATUS_KIND:
        kind = _STATUS_KIND[int(parts[1])]
    else:
        raise ParseError(f"bad start line {start!r}", 0)

    core: dict[str, tuple[str, int]] = {}
    extra: list[tuple[str, str]] = []
    offset = len(start) + 2
    for line in lines[1:]:
        name, colon, value = line.partition(":")
        if not colon or not name.strip():
            raise ParseError(f"bad header line {line!r}", offset)
        key = name.strip().lower()
        if key in _CORE_HEADERS:
            core[key] = (value.strip(), offset)
        else:
            extra.append((name.strip(), value.strip()))
        offset += len(line) + 2

    for required in ("via", "from", "to", "call-id", "cseq", "content-length"):
        if required not in core:
            raise ParseError(f"missing {required} header", offset)
    via, via_off = core["via"]
    if not via.startswith("SIP/2.0/UDP "):
        raise ParseError("unsupported Via transport", via_off)
    caller, from_tag = _uri_from_header(*core["from"])
    callee, to_tag = _uri_from_header(*core["to"])
    cseq_text, cseq_off = core["cseq"]
    cseq_num = cseq_text.split()[0] if cseq_text.split() else ""
    if not cseq_num.isdigit():
        raise ParseError("bad CSeq", cseq_off)
    contact = ""
    if "contact" in core:
        m = re.match(r"^<sip:[^@>]+@([^>]+)>$", core["contact"][0])
        if not m:
            raise ParseError("bad Contact", core["contact"][1])
        contact = m.group(1)
    length_text, length_off = core["content-length"]
    if not length_text.isdigit() or int(length_text) != len(body.encode()):
        raise ParseError("Content-Length does not match body", length_off)
    sdp = None
    if body:
        if core.get("content-type", ("", 0))[0] != "application/sdp":
            raise ParseError("body is not SDP", len(head) + 4)
        sdp = SdpBody.from_text(body, len(head) + 4)
    headers = tuple(extra)
    profile_name = next((p.name for p in profiles.values() if p.header_template == headers), "")
    return SipMessage(
        kind=kind, caller_id=caller, callee_id=callee, from_tag=from_tag, to_tag=to_tag,
        call_id=core["call-id"][0], via=via[len("SIP/2.0/UDP "):], contact=contact, cseq=int(cseq_num),
        sdp=sdp, ua_profile_name=profile_name, headers=headers,
    )


def random_token(length: int, rng: random.Random | None = None) -> str:
    rng = rng or random.SystemRandom()
    return "".join(rng.choice("0123456789abcdef") for _ in range(length))


def random_even_port(rng: random.Random | None = None, low: int = 16384, high: int = 32766) -> int:
    rng = rng or random.SystemRandom()
    return rng.randrange(low, high + 1, 2)


def build_invite(caller: str, callee: str, caller_addr: str, profile: UserAgentProfile, *,
                 rtp_port: int | None = None, rng: random.Random | None = None) -> SipMessage:
    caller, callee = _norm_uri(caller), _norm_uri(callee)
    rtp_port = random_even_port(rng) if rtp_port is None else rtp_port
    return SipMessage(
        kind=Kind.INVITE,
        caller_id=caller,
        callee_id=callee,
        from_tag=random_token(profile.tag_length, rng),
        to_tag="",
        call_id=random_token(profile.tag_length, rng),
        via=f"{caller_addr}:{SIP_PORT}",
        contact=f"{caller_addr}:{SIP_PORT}",
        sdp=SdpBody(caller_addr, rtp_port, profile.codec_prefs),
        ua_profile_name=profile.name,
        headers=profile.header_template,
    )


def integrity_tag(session_key: bytes, addr: str, port: int) -> str:
    mac = hmac.new(session_key, f"{addr}:{port}".encode(), sha256).digest()
    return mac[: MAC_HEX_CHARS // 2].hex()


def negotiate_codec(offered: tuple[str, ...], supported: tuple[str, ...]) -> str:
    """First codec in the caller's order that the answering agent supports."""
    for codec in offered:
        if codec in supported:
            return codec
    raise NoCommonCodec(f"offer {list(offered)} shares nothing with {list(supported)}")


def build_manipulated_ok(invite: SipMessage, profile: UserAgentProfile, dummy_addr: str, dummy_rtp_port: int,
                         session_key: bytes, rng: random.Random | None = None) -> SipMessage:
    if invite.kind is not Kind.INVITE:
        raise ValueError("an OK answers an INVITE")
    if invite.sdp is None:
        raise MissingSdp("INVITE carries no SDP offer")
    if dummy_rtp_port % 2:
        raise ValueError("dummy RTP port must be even")
    codec = negotiate_codec(invite.sdp.codecs, profile.codec_prefs)
    prefix_len = max(profile.tag_length - MAC_HEX_CHARS, MIN_TAG_PREFIX)
    rng = rng or random.SystemRandom()
    return SipMessage(
        kind=Kind.OK,
        caller_id=invite.caller_id,
        callee_id=invite.callee_id,
        from_tag=invite.from_tag,
        to_tag=random_token(prefix_len, rng) + integrity_tag(session_key, dummy_addr, dummy_rtp_port),
        call_id=invite.call_id,
        via=invite.via,
        contact=f"{dummy_addr}:{SIP_PORT}",
        cseq=invite.cseq,
        sdp=SdpBody(dummy_addr, dummy_rtp_port, (codec,), rng.getrandbits(31)),
        ua_profile_name=profile.name,
        headers=profile.header_template,
    )


@dataclass(frozen=True)
class VerifiedCallee:
    addr: str
    rtp_port: int

    @property
    def rtcp_port(self) -> int:
        return self.rtp_port + 1


def verify_ok(ok: SipMessage, session_key: bytes) -> VerifiedCallee:
    """Check the To-tag MAC against the SDP endpoint.

    A failure means the answer was tampered with; the caller must then drop
    the call without sending ACK.
    """
    if ok.kind is not Kind.OK:
        raise ValueError("only OK responses carry the integrity tag")
    if ok.sdp is None:
        raise MissingSdp("OK carries no SDP answer")
    if len(ok.to_tag) <= MAC_HEX_CHARS:
        raise IntegrityFailure("To-tag too short to hold an integrity tag")
    expected = integrity_tag(session_key, ok.sdp.media_address, ok.sdp.rtp_port)
    if not hmac.compare_digest(ok.to_tag[-MAC_HEX_CHARS:], expected):
        raise IntegrityFailure("OK media endpoint does not match its integrity tag")
    return VerifiedCallee(ok.sdp.media_address, ok.sdp.rtp_port)


def build_response(kind: Kind, context: SipMessage, profile: UserAgentProfile | None = None, *,
                   to_tag: str | None = None, rng: random.Random | None = None) -> SipMessage:
    """TRYING, RINGING, REJECT answer an INVITE; ACK follows an OK; BYE needs a dialog."""
    kind = Kind(kind)
    if not context.call_id or not context.from_tag:
        raise MissingDialogState(f"{kind.value} needs a Call-ID and From-tag")
    headers = profile.header_template if profile else ()
    name = profile.name if profile else ""
    base = replace(context, kind=kind, sdp=None, headers=headers, ua_profile_name=name, contact="")
    if kind in (Kind.TRYING, Kind.RINGING, Kind.REJECT):
        if context.kind is not Kind.INVITE:
            raise MissingDialogState(f"{kind.value} answers an INVITE, not {context.kind.value}")
        if kind is Kind.TRYING:
            return replace(base, to_tag="")
        tag = to_tag if to_tag is not None else random_token(profile.tag_length if profile else 16, rng)
        return replace(base, to_tag=tag)
    if kind is Kind.ACK:
        if context.kind is not Kind.OK or not context.to_tag:
            raise MissingDialogState("ACK requires a prior OK")
        return base
    if kind is Kind.BYE:
        if not context.to_tag:
            raise MissingDialogState("BYE requires an established dialog")
        return replace(base, cseq=context.cseq + 1)
    raise ValueError(f"build_response does not build {kind.value}")


class DialogState(str, Enum):
    IDLE = "idle"
    CALLING = "calling"
    PROCEEDING = "proceeding"
    ANSWERED = "answered"
    CONFIRMED = "confirmed"
    TERMINATED = "terminated"


_TRANSITIONS = {
    (DialogState.IDLE, Kind.INVITE): DialogState.CALLING,
    (DialogState.CALLING, Kind.TRYING): DialogState.PROCEEDING,
    (DialogState.CALLING, Kind.RINGING): DialogState.PROCEEDING,
    (DialogState.PROCEEDING, Kind.TRYING): DialogState.PROCEEDING,
    (DialogState.PROCEEDING, Kind.RINGING): DialogState.PROCEEDING,
    (DialogState.CALLING, Kind.OK): DialogState.ANSWERED,
    (DialogState.PROCEEDING, Kind.OK): DialogState.ANSWERED,
    (DialogState.CALLING, Kind.REJECT): DialogState.TERMINATED,
    (DialogState.PROCEEDING, Kind.REJECT): DialogState.TERMINATED,
    (DialogState.ANSWERED, Kind.ACK): DialogState.CONFIRMED,
    (DialogState.ANSWERED, Kind.BYE): DialogState.TERMINATED,
    (DialogState.CONFIRMED, Kind.BYE): DialogState.TERMINATED,
}


class Dialog:
    """Tracks one call through INVITE, provisional responses, OK, ACK and BYE."""

    def __init__(self):
        self.state = DialogState.IDLE
        self.call_id = ""
        self.from_tag = ""
        self.to_tag = ""
        self.last_ok: SipMessage | None = None

    def advance(self, msg: SipMessage) -> DialogState:
        nxt = _TRANSITIONS.get((self.state, msg.kind))
        if nxt is None:
            raise MissingDialogState(f"{msg.kind.value} not valid in state {self.state.value}")
        if self.state is not DialogState.IDLE and msg.call_id != self.call_id:
            raise MissingDialogState("Call-ID does not belong to this dialog")
        if msg.kind is Kind.INVITE:
            self.call_id, self.from_tag = msg.call_id, msg.from_tag
        elif msg.kind is Kind.OK:
            self.to_tag = msg.to_tag
            self.last_ok = msg
        self.state = nxt
        return nxt

    def accepts(self, kind: Kind) -> bool:
        return (self.state, kind) in _TRANSITIONS
