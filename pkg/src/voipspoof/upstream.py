"""The low-bandwidth client-to-relay channel.

Any store-and-forward messenger works (IM, mail); here it is an in-process
queue with a fixed delivery delay, addressed by name.
"""

from __future__ import annotations

import heapq
import itertools
import threading
from dataclasses import dataclass

from .errors import MalformedRecord

TERMINATE = "TERMINATE"
DEFAULT_LATENCY_MS = 200


@dataclass(frozen=True)
class UpstreamMessage:
    url: str
    client_addr: str
    task: int

    def __post_init__(self):
        if not 1 <= self.task <= 255:
            raise ValueError(f"task must be in 1..255, got {self.task}")
        if not self.url or "\n" in self.url or "\t" in self.url:
            raise ValueError("url must be a single non-empty line")

    @property
    def is_terminate(self) -> bool:
        return self.url == TERMINATE

    def encode(self) -> str:
        return f"{self.url}\t{self.client_addr}\t{self.task}"

    @classmethod
    def decode(cls, text: str) -> "UpstreamMessage":
        parts = text.strip().split("\t")
        if len(parts) != 3 or not parts[2].isdigit():
            raise MalformedRecord(f"bad upstream message {text!r}")
        try:
            return cls(parts[0], parts[1], int(parts[2]))
        except ValueError as exc:
            raise MalformedRecord(str(exc)) from None


class UpstreamChannel:
    """Messages become visible to ``receive`` ``latency_ms`` after ``send``.

    Messages travel in their text encoding, as they would through a real
    messenger.  Safe to call from several threads.
    """

    def __init__(self, name: str = "upstream", latency_ms: int = DEFAULT_LATENCY_MS):
        self.name = name
        self.latency_ms = latency_ms
        self._lock = threading.Lock()
        self._heap: list[tuple[int, int, str]] = []
        self._order = itertools.count()
        self.sent = 0
        self.log: list[tuple[int, UpstreamMessage]] = []

    def send(self, msg: UpstreamMessage, now: int) -> None:
        with self._lock:
            heapq.heappush(self._heap, (now + self.latency_ms, next(self._order), msg.encode()))
            self.sent += 1
            self.log.append((now, msg))

    def receive(self, now: int) -> list[UpstreamMessage]:
        out = []
        with self._lock:
            while self._heap and self._heap[0][0] <= now:
                out.append(UpstreamMessage.decode(heapq.heappop(self._heap)[2]))
        return out

    def next_due(self) -> int | None:
        with self._lock:
            return self._heap[0][0] if self._heap else None


_CHANNELS: dict[str, UpstreamChannel] = {}
_CHANNELS_LOCK = threading.Lock()


def channel(name: str, latency_ms: int = DEFAULT_LATENCY_MS) -> UpstreamChannel:
    """Get or create the process-wide channel called ``name``."""
    with _CHANNELS_LOCK:
        if name not in _CHANNELS:
            _CHANNELS[name] = UpstreamChannel(name, latency_ms)
        return _CHANNELS[name]
