"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import copy
import itertools
import random
import time

import pytest

from voipspoof.aspath import AsTopology, PrefixTable, ValleyFreeInference, entry_point
from voipspoof.codec_profiles import BUILTIN_PROFILES, goodput, lookup
from voipspoof.dummy_hosts import (DummyHostRecord, DummyRegistry, FixtureScanner, HostEntry, PortState, assign,
                                   filter_by_entry_point, haversine_km, load_host_fixture, release,
                                   scan_candidates)
from voipspoof.errors import NoCandidate
from voipspoof.fec import Demux, Mux
from voipspoof.scenario import build_world, load_scenario, run_world

from conftest import FIXTURES, SCENARIOS, verdict
from oracles import scan_oracle_accepts, oracle_filter, random_world

CENSOR = frozenset({4134, 4837, 4839, 9394, 4538, 23911})


def scenario(name="acceptance", **changes):
    sc = copy.deepcopy(load_scenario(SCENARIOS / f"{name}.yaml"))
    sc.pop("assertions", None)
    sc.update(changes)
    return sc


def run(sc, seed=None):
    world = build_world(sc, seed=seed)
    rep = run_world(world)
    return world, rep


def test_c01_end_to_end_page_download():
    rate = goodput(lookup("G.711"), 10)
    want_full = 163840 / rate + 2.0
    want_html = 20480 / rate + 2.0
    t0 = time.perf_counter()
    _, rep = run(scenario())
    wall = time.perf_counter() - t0
    page = rep["pages"][0]
    full_ok = page["full_page_s"] is not None and abs(page["full_page_s"] - want_full) <= 0.15 * want_full
    html_ok = page["html_s"] is not None and abs(page["html_s"] - want_html) <= 0.15 * want_html
    ok = full_ok and html_ok and wall < 10 and page["status"] == "complete"
    assert verdict(1, "end-to-end download", ok,
                   f"full {page['full_page_s']} s (expect {want_full:.2f} +-15%), html {page['html_s']} s "
                   f"(expect {want_html:.2f} +-15%), wall {wall:.2f} s")


def test_c02_codec_bandwidth_identities():
    table = {"G.711": 64, "G.722-64": 64, "G.726-40": 40, "iLBC": 15.6}
    got = {n: BUILTIN_PROFILES[n].payload_size * 8 / BUILTIN_PROFILES[n].send_interval for n in table}
    ok = all(abs(got[n] - table[n]) <= 0.5 for n in table)
    assert verdict(2, "codec bandwidth", ok, ", ".join(f"{n} {got[n]:.1f} kbps" for n in table))


def _fec_schedule(rng):
    capacity = rng.randint(4, 160)
    group = rng.choice([2, 5, 10, 10, 10, 16])
    mux = Mux(capacity, group, random.Random(rng.random()))
    sent = {}
    for task in rng.sample(range(1, 256), rng.randint(1, 3)):
        sent[task] = rng.randbytes(rng.randint(0, 40 * capacity))
        mux.enqueue(task, sent[task])
    head = _drain(mux)
    # the stream goes on after the schedule; a later lossless page is what
    # lets a receiver notice that a trailing group vanished entirely
    mux.enqueue(next(t for t in range(1, 256) if t not in sent), b"next page")
    return capacity, group, sent, head, _drain(mux)


def _drain(mux):
    blocks = []
    while mux.pending() or not blocks or not blocks[-1].is_filler:
        blocks.append(mux.next_block())
    return [b for b in blocks if not b.is_filler]


def _fec_trial(rng, multi):
    capacity, group, sent, blocks, tail = _fec_schedule(rng)
    period = group + 1
    n_groups = len(blocks) // period
    lost, heavy = set(), set()
    for g in range(n_groups):
        roll = rng.random()
        k = 2 + rng.randrange(2) if multi and roll < 0.3 else (1 if roll < 0.7 else 0)
        k = min(k, period)
        lost.update(g * period + i for i in rng.sample(range(period), k))
        if k >= 2:
            heavy.add(g)
    # data is released in order, so a lost group still yields what precedes its first hole
    first_hole = {g: min(i for i in lost if i // period == g) for g in heavy}
    expect = [(b.task, b.data) for i, b in enumerate(blocks)
              if i % period != group and b.task != 0 and (i // period not in heavy or i < first_hole[i // period])]
    blocks = blocks + tail
    expect += [(b.task, b.data) for i, b in enumerate(tail) if i % period != group and b.task != 0]
    kept = [b for i, b in enumerate(blocks) if i not in lost]
    if rng.random() < 0.3:
        rng.shuffle(kept)
    demux = Demux(capacity, group, window_groups=len(blocks) // period + 1)
    got = []
    for b in kept:
        got += demux.ingest(b)
    got += demux.flush()
    gaps = set(demux.unrecoverable_groups)
    if gaps != heavy:
        return False
    if multi:
        tainted = {b.task for i, b in enumerate(blocks) if i // period in heavy and i % period != group and b.task}
        return got == expect and all(demux.streams[t].gap for t in tainted if t in demux.streams)
    rebuilt = {t: bytes(demux.streams[t].records) for t in sent if t in demux.streams}
    return got == expect and all(rebuilt.get(t, b"") == data for t, data in sent.items())


def test_c03_fec_single_loss_tolerance():
    rng = random.Random(2024)
    single = sum(_fec_trial(rng, multi=False) for _ in range(1000))
    multi = sum(_fec_trial(rng, multi=True) for _ in range(300))
    ok = single == 1000 and multi == 300
    assert verdict(3, "FEC single-loss tolerance", ok,
                   f"{single}/1000 single-loss schedules exact, {multi}/300 multi-loss schedules gap-flagged exactly")


def test_c04_algorithm1_oracle():
    hosts = {}
    for i, states in enumerate(itertools.product(tuple(PortState), repeat=3)):
        addr = f"10.{i // 250}.{i % 250}.1"
        hosts[addr] = HostEntry(addr, states)
    found = {r.addr for r in scan_candidates(sorted(hosts), FixtureScanner(hosts), random.Random(0))}
    want = {a for a, h in hosts.items() if scan_oracle_accepts(*h.states)}
    ok = len(hosts) == 343 and found == want
    assert verdict(4, "scan predicate oracle", ok, f"{len(found)} accepted of {len(hosts)}, oracle {len(want)}")


def test_c05_ok_manipulation_defense():
    sc = scenario("rewrite_ok")
    good = 0
    for seed in range(100):
        _, rep = run(sc, seed)
        if (rep["client"]["state"] == "aborted" and rep["censor"]["acks_seen"] == 0
                and rep["censor"]["media_to_rewritten"] == 0 and rep["censor"]["attack"].get("rewritten", 0) >= 1):
            good += 1
    assert verdict(5, "OK manipulation defense", good == 100,
                   f"{good}/100 runs aborted before ACK with no media to the forged address")


def test_c06_cadence_independence():
    base = scenario(pages=[], teardown_after_s=None, run_for_s=60)
    attacked = dict(base, attack={"kind": "DropAllToCallee", "start_ms": 0, "duration_ms": 60_000})
    _, clean = run(base)
    _, hit = run(attacked)
    counts = lambda r: (r["spoofer"]["rtp_sent"], r["spoofer"]["rtcp_sent"],  # noqa: E731
                        r["client"]["rtp_sent"], r["client"]["rtcp_sent"])
    dropped = hit["censor"]["attack"].get("dropped", 0)
    ok = counts(clean) == counts(hit) and dropped > 0 and clean["spoofer"]["rtp_sent"] > 2900
    assert verdict(6, "cadence independence", ok,
                   f"relay rtp/rtcp {counts(clean)[:2]} vs {counts(hit)[:2]}, client {counts(clean)[2:]} vs "
                   f"{counts(hit)[2:]}, {dropped} dropped by censor")


def test_c07_packet_filtering():
    _, alt = run(scenario("alter_rtp"))
    altered = alt["censor"]["attack"].get("altered", 0)
    alt_ok = altered > 0 and alt["client"]["auth_failures"] == altered and alt["pages"][0]["status"] == "complete"
    _, rep = run(scenario("replay"))
    replayed = rep["censor"]["attack"].get("replayed", 0)
    rep_ok = replayed > 0 and rep["client"]["replays"] == replayed and rep["pages"][0]["status"] == "complete"
    _, toward = run(scenario("replay", attack={"kind": "ReplayToCallee", "direction": "to_callee"}))
    toward_ok = toward["censor"]["attack"].get("replayed", 0) > 0 and toward["pages"][0]["status"] == "complete"
    ok = alt_ok and rep_ok and toward_ok
    assert verdict(7, "packet filtering", ok,
                   f"altered {altered} / auth failures {alt['client']['auth_failures']}, replayed {replayed} / "
                   f"dropped {rep['client']['replays']}, pages {alt['pages'][0]['status']}, "
                   f"{rep['pages'][0]['status']}, {toward['pages'][0]['status']}")


def _assignment_trial(seed, threshold=500.0):
    rng = random.Random(seed)
    centres = [(rng.uniform(-50, 60), rng.uniform(-120, 140)) for _ in range(8)]
    hosts = []
    for i in range(200):
        lat, lon = rng.choice(centres)
        hosts.append(DummyHostRecord(f"10.{i // 100}.{i % 100}.7", PortState.OPEN, PortState.OPEN, PortState.OPEN,
                                     rtp_port=20000, location=(lat + rng.uniform(-2, 2), lon + rng.uniform(-2, 2))))
    reg = DummyRegistry(hosts)
    callees = [f"user{i}@voip.example.net" for i in range(50)]
    reassignments = 0
    for _ in range(3000):
        roll = rng.random()
        h = rng.choice(hosts)
        if roll < 0.15:
            h.rtp_port_state = rng.choice([PortState.CLOSED, PortState.OPEN, PortState.FILTERED])
        elif roll < 0.45:
            held = [x for x in hosts if x.assigned_to]
            if held:
                release(rng.choice(held), reg)
        else:
            callee = rng.choice(callees)
            record = reg.assignments.get(callee)
            try:
                got = assign(callee, reg, distance_threshold_km=threshold, rng=rng)
            except NoCandidate:
                continue
            if record is not None and got.addr != record.primary_dummy:
                reassignments += 1
                primary = reg.hosts[record.primary_dummy]
                if got.addr not in record.history[:-1] and haversine_km(primary.location, got.location) > threshold:
                    return False, reassignments
        owners = [x.assigned_to for x in hosts if x.assigned_to is not None]
        if len(owners) != len(set(owners)):
            return False, reassignments
    return True, reassignments


def test_c08_dummy_exclusivity_and_stickiness():
    results = [_assignment_trial(seed) for seed in range(20)]
    ok = all(r[0] for r in results)
    moves = sum(r[1] for r in results)
    assert verdict(8, "dummy exclusivity and stickiness", ok and moves > 0,
                   f"{sum(r[0] for r in results)}/20 randomized runs clean, {moves} reassignments checked")


def test_c09_entry_point_oracle():
    agree = compared = 0
    for seed in range(100):
        topo, prefixes, addr_of, candidates, censor, s, c = random_world(random.Random(seed))
        vf = ValleyFreeInference(topo, prefixes)
        want = oracle_filter(topo, prefixes, candidates, s, c, censor)
        if want is None:
            continue
        compared += 1
        kept = filter_by_entry_point(candidates, addr_of[c], vf.path(addr_of[s], addr_of[c]), vf, censor,
                                     strict=False)
        agree += [h.addr for h in kept] == want
    base = FIXTURES / "border"
    vf = ValleyFreeInference(AsTopology.load(base / "topology.txt"), PrefixTable.load(base / "prefixes.txt"))
    live = [r for r in (DummyHostRecord(a, *h.states, rtp_port=20000)
                        for a, h in load_host_fixture(base / "hosts.txt").items()) if r.live]
    ref = vf.path("130.126.24.53", "58.32.17.20")
    kept = filter_by_entry_point(live, "58.32.17.20", ref, vf, CENSOR)
    pct = 100.0 * len(kept) / len(live)
    ok = agree == compared and compared == 100 and pct == 100.0 and entry_point(ref, CENSOR) == 4134
    assert verdict(9, "entry-point filter oracle", ok,
                   f"{agree}/{compared} routable random topologies match, border fixture AS4134 {pct:.0f}% usable")


@pytest.mark.parametrize("n", [0, 5, 20])
def test_c10_upstream_economy(n):
    sc = scenario(site={"url": "http://news.example.org/", "html_size": 4096, "objects": n, "object_size": 1024},
                  pages=[{"url": "http://news.example.org/", "at_s": 1}])
    world, rep = run(sc)
    navs = [m for _, m in world.upstream.log if not m.is_terminate]
    page = rep["pages"][0]
    ok = len(navs) == 1 and page["status"] == "complete" and page["objects_ok"] == n
    assert verdict(10, f"upstream economy N={n}", ok,
                   f"{len(navs)} navigation message(s), {page['objects_ok']}/{n} objects served from the push")
