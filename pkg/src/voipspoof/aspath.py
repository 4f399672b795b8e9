"""Relationship-based AS path prediction.

Topology files hold one relationship per line, ``asA asB rel``, where ``rel``
says what asB is *to* asA: ``customer``, ``peer`` or ``provider``.  Prefix
files map ``prefix asn``.

The predicted path from a source AS is the valley-free path (zero or more
customer->provider hops, at most one peer hop, then zero or more
provider->customer hops) that minimises, in order: the class of the first
hop (customer < peer < provider), the number of ASes, and the AS sequence
itself compared lexicographically (so ties go to the lowest next AS).
"""

from __future__ import annotations

import ipaddress
from collections import deque
from enum import Enum
from os import PathLike
from typing import Iterable

from .errors import PathUnknown


class Rel(str, Enum):
    CUSTOMER = "customer"
    PEER = "peer"
    PROVIDER = "provider"


_INVERSE = {Rel.CUSTOMER: Rel.PROVIDER, Rel.PROVIDER: Rel.CUSTOMER, Rel.PEER: Rel.PEER}
_UP, _DOWN = 0, 1  # may still climb / may only descend


class AsTopology:
    def __init__(self, triples: Iterable[tuple[int, int, Rel | str]] = ()):
        self._rel: dict[int, dict[int, Rel]] = {}
        for a, b, rel in triples:
            self.add(a, b, rel)

    def add(self, a: int, b: int, rel: Rel | str) -> None:
        rel = Rel(rel)
        if a == b:
            raise ValueError(f"self-relationship on AS{a}")
        existing = self._rel.get(a, {}).get(b)
        if existing is not None and existing is not rel:
            raise ValueError(f"conflicting relationships between AS{a} and AS{b}")
        self._rel.setdefault(a, {})[b] = rel
        self._rel.setdefault(b, {})[a] = _INVERSE[rel]

    def relationship(self, a: int, b: int) -> Rel | None:
        """What ``b`` is to ``a``."""
        return self._rel.get(a, {}).get(b)

    def neighbors(self, a: int, rel: Rel | None = None) -> list[int]:
        return sorted(n for n, r in self._rel.get(a, {}).items() if rel is None or r is rel)

    @property
    def ases(self) -> list[int]:
        return sorted(self._rel)

    def triples(self) -> list[tuple[int, int, Rel]]:
        return [(a, b, r) for a in self.ases for b, r in sorted(self._rel[a].items()) if a < b]

    @classmethod
    def load(cls, path: str | PathLike) -> "AsTopology":
        topo = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 'asA asB relationship'")
                topo.add(int(parts[0]), int(parts[1]), parts[2])
        return topo


class PrefixTable:
    """Longest-prefix match from IPv4 address to origin AS."""

    def __init__(self, entries: Iterable[tuple[str, int]] = ()):
        self._nets: list[tuple[ipaddress.IPv4Network, int]] = []
        for prefix, asn in entries:
            self.add(prefix, asn)

    def add(self, prefix: str, asn: int) -> None:
        self._nets.append((ipaddress.IPv4Network(prefix, strict=False), int(asn)))
        self._nets.sort(key=lambda e: e[0].prefixlen, reverse=True)

    def asn_of(self, addr: str) -> int | None:
        ip = ipaddress.IPv4Address(addr)
        for net, asn in self._nets:
            if ip in net:
                return asn
        return None

    @classmethod
    def load(cls, path: str | PathLike) -> "PrefixTable":
        table = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    prefix, asn = line.split()
                    table.add(prefix, int(asn))
        return table


class ValleyFreeInference:
    def __init__(self, topology: AsTopology, prefixes: PrefixTable | None = None):
        self.topology = topology
        self.prefixes = prefixes or PrefixTable()
        self._dist_cache: dict[int, dict[tuple[int, int], int]] = {}

    def _distances(self, dst: int) -> dict[tuple[int, int], int]:
        """Hop counts to ``dst`` from every (AS, phase) state, by reverse BFS."""
        if dst in self._dist_cache:
            return self._dist_cache[dst]
        topo = self.topology
        dist = {(dst, _UP): 0, (dst, _DOWN): 0}
        queue = deque(dist)
        while queue:
            y, phase = queue.popleft()
            d = dist[(y, phase)] + 1
            if phase == _UP:
                preds = [(x, _UP) for x in topo.neighbors(y, Rel.CUSTOMER)]
            else:
                # y reached descending: from x's customer or peer while climbing,
                # or from x's customer while already descending
                preds = [(x, _UP) for x in topo.neighbors(y, Rel.PROVIDER) + topo.neighbors(y, Rel.PEER)]
                preds += [(x, _DOWN) for x in topo.neighbors(y, Rel.PROVIDER)]
            for state in preds:
                if state not in dist:
                    dist[state] = d
                    queue.append(state)
        self._dist_cache[dst] = dist
        return dist

    def _steps(self, node: int, phase: int) -> list[tuple[int, int]]:
        topo = self.topology
        out = [(c, _DOWN) for c in topo.neighbors(node, Rel.CUSTOMER)]
        if phase == _UP:
            out += [(q, _DOWN) for q in topo.neighbors(node, Rel.PEER)]
            out += [(p, _UP) for p in topo.neighbors(node, Rel.PROVIDER)]
        return out

    def as_path(self, src: int, dst: int) -> list[int]:
        if src == dst:
            return [src]
        dist = self._distances(dst)
        topo = self.topology
        first = None
        for rel, phase in ((Rel.CUSTOMER, _DOWN), (Rel.PEER, _DOWN), (Rel.PROVIDER, _UP)):
            options = [(dist[(n, phase)], n, phase) for n in topo.neighbors(src, rel) if (n, phase) in dist]
            if options:
                first = min(options)
                break
        if first is None:
            raise PathUnknown(f"no valley-free path from AS{src} to AS{dst}")
        _, node, phase = first
        path = [src, node]
        while node != dst:
            remaining = dist[(node, phase)]
            node, phase = min((n, p) for n, p in self._steps(node, phase) if dist.get((n, p)) == remaining - 1)
            path.append(node)
        return path

    def asn_of(self, addr: str) -> int:
        asn = self.prefixes.asn_of(addr)
        if asn is None:
            raise PathUnknown(f"{addr} is not covered by any known prefix")
        return asn

    def path(self, src_addr: str, dst_addr: str) -> list[int]:
        return self.as_path(self.asn_of(src_addr), self.asn_of(dst_addr))


def entry_point(path: Iterable[int], censor_ases: set[int] | frozenset[int]) -> int | None:
    """First AS on the path that belongs to the censor."""
    for asn in path:
        if asn in censor_ases:
            return asn
    return None
