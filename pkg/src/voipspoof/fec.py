"""Block multiplexing with single-erasure XOR parity.

Every task's byte stream is cut into fixed-capacity blocks which are
interleaved round-robin into one stream.  The stream is grouped into runs of
``group_size`` data positions followed by one parity position; the parity
block is the XOR of the group's data blocks *including* their task and size
header bytes, so any single lost member can be rebuilt completely.

Block wire layout (before encryption)::

    0      2      3      4                      4+capacity
    +------+------+------+----------------------+
    | seq  | task | size | payload (zero-padded)|
    +------+------+------+----------------------+

``seq`` is big-endian.  Parity is identified by position
(``abs_seq % (group_size + 1) == group_size``), never by a flag.  Idle
positions are handled two ways: a group that is already open is closed with
empty task-0 pad blocks so its parity goes out promptly; between groups the
sender emits filler blocks with ``seq == 0xFFFF`` which sit outside the FEC
sequence space entirely.
"""

from __future__ import annotations

import logging
import random
import struct
from collections import deque
from dataclasses import dataclass, field

from .errors import ReservedTask

logger = logging.getLogger(__name__)

FILLER_SEQ = 0xFFFF
SEQ_SPACE = 0xFFFF  # wire seqs 0..0xFFFE; 0xFFFF is never a FEC position
HEADER = struct.Struct(">HBB")
DEFAULT_GROUP_SIZE = 10
DEFAULT_WINDOW_GROUPS = 4


@dataclass(frozen=True)
class Block:
    seq: int
    task: int
    size: int
    payload: bytes

    def __post_init__(self):
        if not 0 <= self.seq <= 0xFFFF:
            raise ValueError(f"seq out of range: {self.seq}")
        if not 0 <= self.task <= 0xFF or not 0 <= self.size <= 0xFF:
            raise ValueError("task and size are single bytes")

    @property
    def is_filler(self) -> bool:
        return self.seq == FILLER_SEQ

    @property
    def data(self) -> bytes:
        return self.payload[: self.size]

    def to_bytes(self) -> bytes:
        return HEADER.pack(self.seq, self.task, self.size) + self.payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Block":
        if len(raw) < HEADER.size:
            raise ValueError("block shorter than its header")
        seq, task, size = HEADER.unpack_from(raw)
        return cls(seq, task, size, bytes(raw[HEADER.size:]))


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def _body(block: Block) -> bytes:
    """The XOR domain of a block: task, size and padded payload."""
    return bytes((block.task, block.size)) + block.payload


def _check_capacity(capacity: int) -> None:
    if not 0 < capacity <= 0xFF:
        raise ValueError(f"block capacity must be in 1..255 to fit the size byte, got {capacity}")


class Mux:
    """Sender side: turns enqueued task data into a constant block stream."""

    def __init__(self, capacity: int, group_size: int = DEFAULT_GROUP_SIZE, rng: random.Random | None = None):
        _check_capacity(capacity)
        if group_size < 1:
            raise ValueError("group_size must be >= 1")
        self.capacity = capacity
        self.group_size = group_size
        self.rng = rng or random.Random()
        self._queues: dict[int, deque[bytes]] = {}
        self._last_task = 0
        self._abs = 0
        self._parity = bytes(capacity + 2)
        self.data_blocks = 0
        self.parity_blocks = 0
        self.pad_blocks = 0
        self.filler_blocks = 0

    def enqueue(self, task: int, data: bytes) -> None:
        if task == 0:
            raise ReservedTask("task 0 is reserved for parity and filler")
        if not 1 <= task <= 0xFF:
            raise ValueError(f"task must be in 1..255, got {task}")
        cap = self.capacity
        chunks = [data[i:i + cap] for i in range(0, len(data), cap)] or [b""]
        self._queues.setdefault(task, deque()).extend(chunks)

    def pending(self) -> bool:
        return any(self._queues.values())

    def pending_tasks(self) -> list[int]:
        return sorted(t for t, q in self._queues.items() if q)

    def _next_task(self) -> int | None:
        ready = self.pending_tasks()
        if not ready:
            return None
        for t in ready:
            if t > self._last_task:
                return t
        return ready[0]

    def _emit(self, task: int, size: int, payload: bytes) -> Block:
        block = Block(self._abs % SEQ_SPACE, task, size, payload)
        self._parity = xor_bytes(self._parity, _body(block))
        self._abs += 1
        return block

    def next_block(self) -> Block:
        """Produce the block for the next RTP packet.  Never returns None."""
        period = self.group_size + 1
        pos = self._abs % period
        if pos == self.group_size:
            body = self._parity
            block = Block(self._abs % SEQ_SPACE, body[0], body[1], body[2:])
            self._parity = bytes(self.capacity + 2)
            self._abs += 1
            self.parity_blocks += 1
            return block
        task = self._next_task()
        if task is not None:
            chunk = self._queues[task].popleft()
            self._last_task = task
            self.data_blocks += 1
            return self._emit(task, len(chunk), chunk.ljust(self.capacity, b"\0"))
        if pos != 0:
            self.pad_blocks += 1
            return self._emit(0, 0, bytes(self.capacity))
        self.filler_blocks += 1
        return Block(FILLER_SEQ, 0, self.capacity, self.rng.randbytes(self.capacity))


@dataclass
class TaskStream:
    task: int
    records: bytearray = field(default_factory=bytearray)
    complete: bool = False
    gap: bool = False


class Demux:
    """Receiver side: reorders, repairs and splits the block stream per task.

    Data is released in sequence order as soon as every earlier position is
    known.  A group that cannot be repaired is given up once a block
    ``window_groups`` groups ahead arrives, once a long run of filler shows
    the sender has gone idle, or on :meth:`flush`.
    """

    def __init__(self, capacity: int, group_size: int = DEFAULT_GROUP_SIZE, window_groups: int = DEFAULT_WINDOW_GROUPS):
        _check_capacity(capacity)
        self.capacity = capacity
        self.group_size = group_size
        self.window_groups = window_groups
        self.streams: dict[int, TaskStream] = {}
        self.unrecoverable_groups: list[int] = []
        self.recovered = 0
        self.duplicates = 0
        self.late = 0
        self._blocks: dict[int, Block] = {}
        self._hi: int | None = None
        self._next = 0
        self._dead: set[int] = set()
        self._new_gaps: list[int] = []
        self._filler_run = 0

    @property
    def period(self) -> int:
        return self.group_size + 1

    def _unwrap(self, wire: int) -> int:
        if self._hi is None:
            return wire
        k = round((self._hi - wire) / SEQ_SPACE)
        return wire + k * SEQ_SPACE

    def stream(self, task: int) -> TaskStream:
        if task not in self.streams:
            self.streams[task] = TaskStream(task)
        return self.streams[task]

    def reset_task(self, task: int) -> None:
        """Forget a finished task so its number can be reused."""
        self.streams.pop(task, None)

    def mark_complete(self, task: int) -> None:
        s = self.stream(task)
        if not s.gap:
            s.complete = True

    def pop_gaps(self) -> list[int]:
        """Group indices declared unrecoverable since the last call."""
        gaps, self._new_gaps = self._new_gaps, []
        return gaps

    def ingest(self, block: Block) -> list[tuple[int, bytes]]:
        if block.is_filler:
            self._filler_run += 1
            if self._hi is not None and self._filler_run > self.window_groups * self.period:
                return self._advance(final_group=self._hi // self.period)
            return []
        self._filler_run = 0
        pos = self._unwrap(block.seq)
        if pos < self._next or (pos // self.period) in self._dead:
            self.late += 1
            return []
        if pos in self._blocks:
            self.duplicates += 1
            return []
        self._blocks[pos] = block
        if self._hi is None or pos > self._hi:
            self._hi = pos
        return self._advance()

    def flush(self) -> list[tuple[int, bytes]]:
        """Treat every group up to the newest one seen as final."""
        if self._hi is None:
            return []
        return self._advance(final_group=self._hi // self.period)

    def _recover(self, group: int) -> bool:
        start = group * self.period
        present = [self._blocks[p] for p in range(start, start + self.period) if p in self._blocks]
        if len(present) != self.group_size:
            return False
        missing = next(p for p in range(start, start + self.period) if p not in self._blocks)
        body = bytes(self.capacity + 2)
        for b in present:
            body = xor_bytes(body, _body(b))
        if missing % self.period == self.group_size:
            return False
        self._blocks[missing] = Block(missing % SEQ_SPACE, body[0], body[1], body[2:])
        self.recovered += 1
        return True

    def _give_up(self, group: int) -> None:
        start = group * self.period
        affected = {self._blocks[p].task for p in range(start, start + self.period - 1) if p in self._blocks}
        affected.discard(0)
        affected.update(t for t, s in self.streams.items() if not s.complete)
        for t in affected:
            s = self.stream(t)
            s.gap = True
            s.complete = False
        self._dead.add(group)
        self.unrecoverable_groups.append(group)
        self._new_gaps.append(group)
        logger.debug("group %d unrecoverable, tasks %s marked gap", group, sorted(affected))

    def _drop_group(self, group: int) -> None:
        start = group * self.period
        for p in range(start, start + self.period):
            self._blocks.pop(p, None)

    def _advance(self, final_group: int | None = None) -> list[tuple[int, bytes]]:
        out: list[tuple[int, bytes]] = []
        if self._hi is None:
            return out
        limit = self._hi
        if final_group is not None:
            # members after the newest one seen may have been lost too
            limit = max(limit, (final_group + 1) * self.period - 1)
        while self._next <= limit:
            group, pos = divmod(self._next, self.period)
            if group in self._dead:
                self._drop_group(group)
                self._next = (group + 1) * self.period
                continue
            if pos == self.group_size:
                self._drop_group(group)
                self._next += 1
                continue
            block = self._blocks.get(self._next)
            if block is None and self._recover(group):
                block = self._blocks[self._next]
            if block is None:
                stale = self._hi // self.period - group >= self.window_groups
                if stale or (final_group is not None and group <= final_group):
                    self._give_up(group)
                    continue
                break
            if block.task != 0:
                if block.size > self.capacity:
                    raise ValueError(f"block {self._next} claims {block.size} bytes, capacity {self.capacity}")
                stream = self.stream(block.task)
                if not stream.gap:
                    stream.records += block.data
                out.append((block.task, block.data))
            self._next += 1
        return out
