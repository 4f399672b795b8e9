"""Dummy-host measurements over host fixtures: how many addresses qualify,
and for how long they stay usable."""

from __future__ import annotations

import random
from os import PathLike

from .aspath import ValleyFreeInference, entry_point
from .dummy_hosts import (DummyHostRecord, FixtureScanner, HostEntry, acceptable, filter_by_entry_point,
                          load_host_fixture, scan_candidates)


def _usable_for(entry: HostEntry, horizon: float) -> tuple[float, bool]:
    """Seconds until the host first becomes unusable, and whether that happened before ``horizon``."""
    for when, states in entry.schedule:
        if when > horizon:
            break
        if not all(acceptable(s) for s in states):
            return when, True
    return horizon, False


def measure_hosts(fixture_path: str | PathLike, sample_size: int | None = None, seed: int = 0,
                  horizon_s: float | None = None) -> dict:
    hosts = load_host_fixture(fixture_path)
    rng = random.Random(seed)
    addrs = sorted(hosts)
    if sample_size is not None and sample_size < len(addrs):
        addrs = sorted(rng.sample(addrs, sample_size))
    found = scan_candidates(addrs, FixtureScanner(hosts), rng)
    sampled = len(addrs)
    report = {
        "fixture": str(fixture_path),
        "seed": seed,
        "sampled": sampled,
        "satisfactory": len(found),
        "satisfactory_pct": round(100.0 * len(found) / sampled, 1) if sampled else 0.0,
    }
    times = sorted({when for a in addrs for when, _ in hosts[a].schedule})
    if not times:
        return report
    horizon = horizon_s if horizon_s is not None else times[-1]
    good = [hosts[r.addr] for r in found]
    durations = sorted(_usable_for(e, horizon) for e in good)
    n = len(durations)
    cdf = []
    for i, (d, ended) in enumerate(durations):
        if ended:
            cdf.append([d, round((i + 1) / n, 4)])
    report["horizon_s"] = horizon
    report["usable_durations_s"] = [d for d, _ in durations]
    report["still_usable_at_horizon"] = sum(1 for _, ended in durations if not ended)
    report["duration_cdf"] = cdf
    report["alive_series"] = [[t, sum(1 for e in good if all(acceptable(s) for s in e.states_at(t)))]
                              for t in [0.0] + [t for t in times if t <= horizon]]
    return report


def entry_point_table(candidates: list[DummyHostRecord], spoofer_addr: str, clients: dict[int, str],
                      inference: ValleyFreeInference, censor_ases: frozenset[int]) -> list[dict]:
    """Per destination AS: the entry AS and how many candidates share it."""
    rows = []
    for dst_asn, client in clients.items():
        reference = inference.path(spoofer_addr, client)
        kept = filter_by_entry_point(candidates, client, reference, inference, censor_ases, strict=False)
        rows.append({
            "dst_asn": dst_asn,
            "entry_asn": entry_point(reference, censor_ases),
            "usable": len(kept),
            "usable_pct": round(100.0 * len(kept) / len(candidates), 1) if candidates else 0.0,
        })
    return rows
