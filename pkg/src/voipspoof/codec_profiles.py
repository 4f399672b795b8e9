"""VoIP codec traffic identities.

A profile pins the packet size and cadence the downstream channel must keep so
that it is indistinguishable from a real call using that codec.  Payload sizes
assume a 20 ms packetization interval for every codec.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from os import PathLike
from typing import Mapping

from .errors import UnknownCodec

BLOCK_HEADER_SIZE = 4


@dataclass(frozen=True)
class CodecProfile:
    name: str
    payload_size: int  # bytes per RTP payload
    send_interval: int  # ms between RTP packets
    inbound_kbps: float
    consumed_kbps: float  # informational only, no overhead model behind it
    rtp_payload_type: int = 96
    encoding: str = ""
    clock_rate: int = 8000

    def __post_init__(self):
        if self.send_interval <= 0:
            raise ValueError(f"{self.name}: send_interval must be positive")
        if self.payload_size <= BLOCK_HEADER_SIZE:
            raise ValueError(f"{self.name}: payload_size must exceed the {BLOCK_HEADER_SIZE}-byte block header")
        if abs(self.nominal_kbps - self.inbound_kbps) > 0.5:
            raise ValueError(
                f"{self.name}: {self.payload_size} B every {self.send_interval} ms is "
                f"{self.nominal_kbps:.2f} Kbps, not {self.inbound_kbps}"
            )

    @property
    def nominal_kbps(self) -> float:
        return self.payload_size * 8 * (1000 / self.send_interval) / 1000

    @property
    def packets_per_second(self) -> float:
        return 1000 / self.send_interval

    @property
    def block_capacity(self) -> int:
        return self.payload_size - BLOCK_HEADER_SIZE

    @property
    def samples_per_packet(self) -> int:
        return self.clock_rate * self.send_interval // 1000


BUILTIN_PROFILES: dict[str, CodecProfile] = {
    p.name: p
    for p in (
        CodecProfile("G.711", 160, 20, 64, 87.2, rtp_payload_type=0, encoding="PCMU"),
        CodecProfile("G.722-64", 160, 20, 64, 87.2, rtp_payload_type=9, encoding="G722"),
        CodecProfile("G.726-40", 100, 20, 40, 54.7, rtp_payload_type=97, encoding="G726-40"),
        CodecProfile("iLBC", 39, 20, 15.6, 26.6, rtp_payload_type=98, encoding="iLBC"),
    )
}


def lookup(name: str, profiles: Mapping[str, CodecProfile] | None = None) -> CodecProfile:
    profiles = BUILTIN_PROFILES if profiles is None else profiles
    try:
        return profiles[name]
    except KeyError:
        raise UnknownCodec(name) from None


def goodput(profile: CodecProfile, group_size: int) -> float:
    """Censored-data bytes per second after block headers and XOR parity.

    One parity block rides along with every ``group_size`` data blocks.
    """
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    lam = group_size
    return (profile.payload_size - BLOCK_HEADER_SIZE) * profile.packets_per_second * lam / (lam + 1)


_INT_FIELDS = {"payload_size", "send_interval", "rtp_payload_type", "clock_rate"}
_FLOAT_FIELDS = {"inbound_kbps", "consumed_kbps"}


def load_profiles(path: str | PathLike, base: Mapping[str, CodecProfile] | None = None) -> dict[str, CodecProfile]:
    """Read codec overrides from an INI file, one section per codec.

    Sections naming a built-in codec override only the keys they set; new
    section names define new profiles and must give every required key.
    """
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    profiles = dict(BUILTIN_PROFILES if base is None else base)
    for section in parser.sections():
        values: dict[str, object] = {}
        for key, raw in parser.items(section):
            if key in _INT_FIELDS:
                values[key] = int(raw)
            elif key in _FLOAT_FIELDS:
                values[key] = float(raw)
            elif key == "encoding":
                values[key] = raw
            else:
                raise ValueError(f"[{section}] unknown key {key!r}")
        if section in profiles:
            profiles[section] = replace(profiles[section], **values)
        else:
            profiles[section] = CodecProfile(name=section, **values)
    return profiles
