"""Encrypted RTP/RTCP framing in the spirit of SRTP.

Wire layout of a media packet::

    12-byte RTP header (V=2, PT, seq, timestamp, SSRC)   -- authenticated, clear
    ciphertext of the serialized block                 -- payload_size bytes
    16-byte AES-GCM tag

RTCP packets use the same total size: an 8-byte RTCP header plus a 4-byte
packet index, then an encrypted random payload and tag.  This is not wire
compatible with RFC 3711; it only keeps its properties that matter here
(per-direction keys, nonces bound to SSRC and extended sequence number,
a 64-packet replay window).
"""

from __future__ import annotations

import os
import random
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .codec_profiles import CodecProfile
from .errors import AuthFailure, EmptyKey, ReplayDetected, SizeMismatch
from .fec import Block
from .transport import Datagram, DatagramKind, Endpoint

RTP_HEADER = struct.Struct(">BBHII")
RTCP_HEADER = struct.Struct(">BBHII")
TAG_SIZE = 16
REPLAY_WINDOW = 64
RTCP_PT = 200
KDF_LABELS = {"rtp_key": (b"rtp encryption", 16), "rtcp_key": (b"rtcp encryption", 16), "integrity_key": (b"sip integrity", 32)}


@dataclass(frozen=True)
class SessionKeys:
    master_key: bytes
    rtp_key: bytes
    rtcp_key: bytes
    integrity_key: bytes


def derive_keys(master_key: bytes) -> SessionKeys:
    if not master_key:
        raise EmptyKey("master key is empty")
    derived = {}
    for name, (label, length) in KDF_LABELS.items():
        hkdf = HKDF(algorithm=hashes.SHA256(), length=length, salt=None, info=label)
        derived[name] = hkdf.derive(master_key)
    return SessionKeys(master_key=master_key, **derived)


@dataclass(frozen=True)
class RtpPacket:
    ssrc: int
    rtp_seq: int
    timestamp: int
    ciphertext: bytes  # encrypted block followed by the tag
    payload_type: int = 0

    def header(self) -> bytes:
        return RTP_HEADER.pack(0x80, self.payload_type & 0x7F, self.rtp_seq, self.timestamp, self.ssrc)

    def to_bytes(self) -> bytes:
        return self.header() + self.ciphertext

    @classmethod
    def from_bytes(cls, raw: bytes) -> "RtpPacket":
        if len(raw) < RTP_HEADER.size + TAG_SIZE:
            raise AuthFailure("packet too short")
        vpxcc, mpt, seq, ts, ssrc = RTP_HEADER.unpack_from(raw)
        if vpxcc >> 6 != 2:
            raise AuthFailure("not an RTP version 2 packet")
        return cls(ssrc, seq, ts, bytes(raw[RTP_HEADER.size:]), mpt & 0x7F)


def _rtp_nonce(ssrc: int, index: int) -> bytes:
    return struct.pack(">IIHH", ssrc, index >> 16, index & 0xFFFF, 0)


def _rtcp_nonce(ssrc: int, index: int) -> bytes:
    return struct.pack(">IIHH", ssrc, index, 0, 0xFFFF)


class ReplayWindow:
    """Tracks the extended sequence numbers accepted from one SSRC."""

    def __init__(self, size: int = REPLAY_WINDOW):
        self.size = size
        self.highest: int | None = None
        self._mask = 0  # bit i set => highest - i already accepted

    def estimate(self, seq: int) -> int:
        """Guess the rollover counter for a 16-bit sequence number."""
        if self.highest is None:
            return seq
        roc, s_l = self.highest >> 16, self.highest & 0xFFFF
        if s_l < 0x8000:
            v = roc - 1 if seq - s_l > 0x8000 else roc
        else:
            v = roc + 1 if s_l - 0x8000 > seq else roc
        return (max(v, 0) << 16) | seq

    def check(self, index: int) -> None:
        if self.highest is None or index > self.highest:
            return
        delta = self.highest - index
        if delta >= self.size:
            raise ReplayDetected(f"index {index} is older than the replay window")
        if self._mask >> delta & 1:
            raise ReplayDetected(f"index {index} already received")

    def accept(self, index: int) -> None:
        if self.highest is None:
            self.highest, self._mask = index, 1
        elif index > self.highest:
            shift = index - self.highest
            self._mask = ((self._mask << shift) | 1) & ((1 << self.size) - 1)
            self.highest = index
        else:
            self._mask |= 1 << (self.highest - index)


def frame(block: Block, keys: SessionKeys, rtp_seq: int, ssrc: int, timestamp: int, *,
          payload_size: int, roc: int = 0, payload_type: int = 0) -> RtpPacket:
    plaintext = block.to_bytes()
    if len(plaintext) != payload_size:
        raise SizeMismatch(f"block serializes to {len(plaintext)} bytes, codec payload is {payload_size}")
    packet = RtpPacket(ssrc, rtp_seq & 0xFFFF, timestamp & 0xFFFFFFFF, b"", payload_type)
    index = (roc << 16) | packet.rtp_seq
    ct = AESGCM(keys.rtp_key).encrypt(_rtp_nonce(ssrc, index), plaintext, packet.header())
    return RtpPacket(packet.ssrc, packet.rtp_seq, packet.timestamp, ct, payload_type)


def unframe(packet: RtpPacket, keys: SessionKeys, window: ReplayWindow | None = None) -> Block:
    """Authenticate, replay-check and decrypt one media packet."""
    index = window.estimate(packet.rtp_seq) if window else packet.rtp_seq
    if window:
        window.check(index)
    try:
        plaintext = AESGCM(keys.rtp_key).decrypt(_rtp_nonce(packet.ssrc, index), packet.ciphertext, packet.header())
    except InvalidTag:
        raise AuthFailure(f"RTP packet ssrc={packet.ssrc:#x} seq={packet.rtp_seq} failed authentication") from None
    if window:
        window.accept(index)
    return Block.from_bytes(plaintext)


def seal_rtcp(keys: SessionKeys, ssrc: int, index: int, plaintext: bytes) -> bytes:
    words = (RTCP_HEADER.size + len(plaintext) + TAG_SIZE) // 4 - 1
    header = RTCP_HEADER.pack(0x80, RTCP_PT, words & 0xFFFF, ssrc, 0x80000000 | index)
    return header + AESGCM(keys.rtcp_key).encrypt(_rtcp_nonce(ssrc, index), plaintext, header)


def open_rtcp(raw: bytes, keys: SessionKeys, window: ReplayWindow | None = None) -> bytes:
    if len(raw) < RTCP_HEADER.size + TAG_SIZE:
        raise AuthFailure("RTCP packet too short")
    _, pt, _, ssrc, e_index = RTCP_HEADER.unpack_from(raw)
    if pt != RTCP_PT:
        raise AuthFailure("not an RTCP sender report")
    index = e_index & 0x7FFFFFFF
    if window:
        window.check(index)
    try:
        plaintext = AESGCM(keys.rtcp_key).decrypt(_rtcp_nonce(ssrc, index), raw[RTCP_HEADER.size:], raw[:RTCP_HEADER.size])
    except InvalidTag:
        raise AuthFailure("RTCP packet failed authentication") from None
    if window:
        window.accept(index)
    return plaintext


def rtcp_packet(keys: SessionKeys, now: int, *, ssrc: int, index: int, payload_size: int,
                src: Endpoint, dst: Endpoint, rng: random.Random | None = None) -> Datagram:
    """An RTCP datagram with a random payload, sized like the codec's RTP packets.

    ``now`` (ms) goes into the leading 8 bytes the way a sender report
    carries its wallclock; the remainder is random.
    """
    rand = rng.randbytes if rng else os.urandom
    body = struct.pack(">Q", now & 0xFFFFFFFFFFFFFFFF) + rand(max(payload_size - 8, 0))
    return Datagram(src, dst, seal_rtcp(keys, ssrc, index, body[:payload_size]), DatagramKind.RTCP)


class MediaSender:
    """Owns one outgoing RTP/RTCP stream's sequence, timestamp and SSRC state."""

    def __init__(self, keys: SessionKeys, codec: CodecProfile, src: Endpoint, dst: Endpoint,
                 rng: random.Random | None = None):
        self.keys = keys
        self.codec = codec
        self.src = src
        self.dst = dst
        self.rng = rng or random.Random()
        self.ssrc = self.rng.getrandbits(32)
        self._index = self.rng.getrandbits(15)
        self.timestamp = self.rng.getrandbits(32)
        self._rtcp_index = 0
        self.rtp_sent = 0
        self.rtcp_sent = 0

    @property
    def rtcp_dst(self) -> Endpoint:
        return (self.dst[0], self.dst[1] + 1)

    @property
    def rtcp_src(self) -> Endpoint:
        return (self.src[0], self.src[1] + 1)

    def rtp(self, block: Block) -> Datagram:
        packet = frame(block, self.keys, self._index & 0xFFFF, self.ssrc, self.timestamp,
                       payload_size=self.codec.payload_size, roc=self._index >> 16,
                       payload_type=self.codec.rtp_payload_type)
        self._index += 1
        self.timestamp = (self.timestamp + self.codec.samples_per_packet) & 0xFFFFFFFF
        self.rtp_sent += 1
        return Datagram(self.src, self.dst, packet.to_bytes(), DatagramKind.RTP)

    def rtcp(self, now: int) -> Datagram:
        self._rtcp_index += 1
        self.rtcp_sent += 1
        return rtcp_packet(self.keys, now, ssrc=self.ssrc, index=self._rtcp_index,
                           payload_size=self.codec.payload_size, src=self.rtcp_src, dst=self.rtcp_dst, rng=self.rng)


class MediaReceiver:
    """Filters incoming media: anything unauthentic or replayed is counted and dropped."""

    def __init__(self, keys: SessionKeys):
        self.keys = keys
        self._rtp_windows: dict[int, ReplayWindow] = {}
        self._rtcp_windows: dict[int, ReplayWindow] = {}
        self.auth_failures = 0
        self.replays = 0
        self.accepted = 0
        self.rtcp_accepted = 0

    def receive_rtp(self, raw: bytes) -> Block | None:
        try:
            packet = RtpPacket.from_bytes(raw)
            window = self._rtp_windows.setdefault(packet.ssrc, ReplayWindow())
            block = unframe(packet, self.keys, window)
        except AuthFailure:
            self.auth_failures += 1
            return None
        except ReplayDetected:
            self.replays += 1
            return None
        except ValueError:
            self.auth_failures += 1
            return None
        self.accepted += 1
        return block

    def receive_rtcp(self, raw: bytes) -> bool:
        try:
            ssrc = struct.unpack_from(">I", raw, 4)[0] if len(raw) >= 8 else 0
            open_rtcp(raw, self.keys, self._rtcp_windows.setdefault(ssrc, ReplayWindow()))
        except AuthFailure:
            self.auth_failures += 1
            return False
        except ReplayDetected:
            self.replays += 1
            return False
        self.rtcp_accepted += 1
        return True
