"""Datagram transports that let the sender choose the visible source address."""

from __future__ import annotations

import ipaddress
import socket
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

from .errors import SpoofingUnsupported

Endpoint = tuple[str, int]


class DatagramKind(str, Enum):
    RTP = "RTP"
    RTCP = "RTCP"
    SIP = "SIP"


@dataclass(frozen=True)
class Datagram:
    # claimed_src is whatever the sender wrote into the IP header; it is the
    # only origin any receiver or observer ever gets to see.
    claimed_src: Endpoint
    dst: Endpoint
    payload: bytes
    kind: DatagramKind

    @property
    def size(self) -> int:
        return len(self.payload)


class DatagramTransport(Protocol):
    supports_spoofing: bool

    def send(self, d: Datagram) -> None: ...


class LoopbackTransport:
    """Records every datagram; useful for tests and offline tooling."""

    supports_spoofing = True

    def __init__(self):
        self.sent: list[Datagram] = []

    def send(self, d: Datagram) -> None:
        self.sent.append(d)


def spoofed_send(transport: DatagramTransport, d: Datagram) -> None:
    if not transport.supports_spoofing:
        raise SpoofingUnsupported("transport cannot emit datagrams with a foreign source address")
    transport.send(d)


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_ipv4_udp(d: Datagram, ttl: int = 64, ident: int = 0) -> bytes:
    """Serialize ``d`` as an IPv4/UDP packet whose source is ``d.claimed_src``."""
    src = ipaddress.IPv4Address(d.claimed_src[0]).packed
    dst = ipaddress.IPv4Address(d.dst[0]).packed
    udp_len = 8 + len(d.payload)
    pseudo = src + dst + struct.pack("!BBH", 0, socket.IPPROTO_UDP, udp_len)
    udp = struct.pack("!HHHH", d.claimed_src[1], d.dst[1], udp_len, 0) + d.payload
    csum = _checksum(pseudo + udp) or 0xFFFF
    udp = udp[:6] + struct.pack("!H", csum) + udp[8:]
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + udp_len, ident, 0, ttl, socket.IPPROTO_UDP, 0, src, dst)
    ip = ip[:10] + struct.pack("!H", _checksum(ip)) + ip[12:]
    return ip + udp


class RawUdpTransport:
    """Raw-socket sender for hosts whose upstream does not filter spoofed egress.

    Opening the socket needs CAP_NET_RAW.  ``egress_filtered`` marks a
    deployment inside an AS that drops foreign-source packets, where sending
    is refused up front rather than silently black-holed.
    """

    def __init__(self, egress_filtered: bool = False):
        self.egress_filtered = egress_filtered
        self._sock: socket.socket | None = None
        self._ident = 0

    @property
    def supports_spoofing(self) -> bool:
        return not self.egress_filtered

    def send(self, d: Datagram) -> None:
        if self.egress_filtered:
            raise SpoofingUnsupported("egress filtering drops spoofed packets from this network")
        if self._sock is None:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_RAW)
            self._sock.setsockopt(socket.IPPROTO_IP, socket.IP_HDRINCL, 1)
        self._ident = (self._ident + 1) & 0xFFFF
        self._sock.sendto(build_ipv4_udp(d, ident=self._ident), (d.dst[0], 0))

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
