"""Slow, obviously-correct reference implementations used by the tests."""

import random

from voipspoof.aspath import AsTopology, PrefixTable, Rel, entry_point
from voipspoof.dummy_hosts import DummyHostRecord, PortState

_RANK = {Rel.CUSTOMER: 0, Rel.PEER: 1, Rel.PROVIDER: 2}


def all_valley_free_paths(topo: AsTopology, src: int, dst: int) -> list[list[int]]:
    """Every simple path src..dst that climbs, crosses at most one peer link, then descends."""
    found = []

    def walk(path, descending):
        node = path[-1]
        if node == dst:
            found.append(list(path))
            return
        for nxt in topo.ases:
            rel = topo.relationship(node, nxt)
            if rel is None or nxt in path:
                continue
            if descending and rel is not Rel.CUSTOMER:
                continue
            path.append(nxt)
            walk(path, descending or rel is not Rel.PROVIDER)
            path.pop()

    walk([src], False)
    return found


def preferred_path(topo: AsTopology, src: int, dst: int) -> list[int] | None:
    if src == dst:
        return [src]
    paths = all_valley_free_paths(topo, src, dst)
    if not paths:
        return None
    return min(paths, key=lambda p: (_RANK[topo.relationship(p[0], p[1])], len(p), p))


def random_topology(rng: random.Random, max_ases: int = 10, connected: bool = False) -> AsTopology:
    """A random hierarchy: each AS buys transit from one or two lower-tier ASes, plus some peerings.

    With ``connected`` the top tier is a full peering mesh, so every pair of
    ASes has a valley-free path.
    """
    n = rng.randint(3, max_ases)
    asns = rng.sample(range(1, 100), n)
    tier = {a: rng.randint(0, 2) for a in asns}
    tier[asns[0]] = 0
    topo = AsTopology()
    for a in asns:
        uppers = [b for b in asns if tier[b] < tier[a]]
        for p in rng.sample(uppers, min(len(uppers), rng.randint(1, 2))):
            topo.add(a, p, Rel.PROVIDER)
    for a in asns:
        for b in asns:
            if a < b and tier[a] == tier[b] and ((connected and tier[a] == 0) or rng.random() < 0.4):
                topo.add(a, b, Rel.PEER)
    return topo


def random_world(rng: random.Random):
    """Topology, a prefix per AS, a handful of candidates, and a censor set."""
    topo = random_topology(rng, connected=True)
    while len(topo.ases) < 3:
        topo = random_topology(rng, connected=True)
    asns = topo.ases
    prefixes = PrefixTable()
    addr_of = {}
    for i, a in enumerate(asns):
        prefixes.add(f"10.{i}.0.0/16", a)
        addr_of[a] = f"10.{i}.0.1"
    candidates = [DummyHostRecord(f"10.{asns.index(a)}.1.{k}", PortState.OPEN, PortState.OPEN, PortState.OPEN,
                                  rtp_port=20000)
                  for k, a in enumerate(rng.choices(asns, k=rng.randint(1, 8)))]
    censor = frozenset(rng.sample(asns, rng.randint(1, max(1, len(asns) // 2))))
    spoofer, client = rng.sample(asns, 2)
    return topo, prefixes, addr_of, candidates, censor, spoofer, client


def oracle_filter(topo, prefixes, candidates, spoofer_asn, client_asn, censor):
    ref = preferred_path(topo, spoofer_asn, client_asn)
    if ref is None:
        return None
    wanted = entry_point(ref, censor)
    kept = []
    for c in candidates:
        path = preferred_path(topo, prefixes.asn_of(c.addr), client_asn)
        if path is not None and entry_point(path, censor) == wanted:
            kept.append(c.addr)
    return kept


def scan_oracle_accepts(sip: PortState, rtp: PortState, rtcp: PortState) -> bool:
    return all(s not in (PortState.CLOSED, PortState.HOST_SEEMS_DOWN) for s in (sip, rtp, rtcp))
