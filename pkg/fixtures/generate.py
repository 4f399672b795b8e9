"""Regenerates the fixture tables in this directory.  Deterministic."""

import random
from pathlib import Path

HERE = Path(__file__).parent
ACCEPTABLE = ["open", "filtered", "unfiltered", "open|filtered", "closed|filtered"]
UNACCEPTABLE = ["closed", "host_seems_down"]

TOPOLOGY = """\
# asA asB rel   (rel = what asB is to asA)
38 3356 provider
3356 1299 peer
3356 174 peer
1299 174 peer
2914 4134 peer
4134 1299 provider
4134 174 provider
4839 1299 provider
4839 174 provider
4839 3356 provider
4839 2914 provider
4837 4839 provider
9394 3356 provider
9394 4134 provider
23911 3356 provider
4538 23911 provider
4538 4134 provider
# stub networks hosting dummy candidates, and the SIP provider
64501 3356 provider
64502 1299 provider
64503 174 provider
64504 2914 provider
64505 3356 provider
"""

PREFIXES = """\
130.126.0.0/16 38
4.0.0.0/9 3356
62.115.0.0/16 1299
38.0.0.0/8 174
129.250.0.0/16 2914
58.32.0.0/13 4134
60.0.0.0/13 4837
221.0.0.0/13 4839
211.98.0.0/15 9394
101.4.0.0/14 23911
59.64.0.0/12 4538
64.17.0.0/16 64501
80.217.0.0/16 64502
66.28.0.0/16 64503
61.200.0.0/16 64504
216.115.0.0/16 64505
"""

# stub prefix, host count, centre (lat, lon), os
STUBS = [("64.17", 41, (41.88, -87.63), "linux"), ("80.217", 100, (59.33, 18.06), "windows"),
         ("66.28", 76, (38.90, -77.04), "linux"), ("61.200", 8, (35.68, 139.69), "windows")]


def border(rng):
    (HERE / "border" / "topology.txt").write_text(TOPOLOGY)
    (HERE / "border" / "prefixes.txt").write_text(PREFIXES)
    lines = ["# addr sip rtp rtcp lat lon os"]
    for prefix, count, (lat, lon), os_label in STUBS:
        for i in range(count):
            states = [rng.choice(ACCEPTABLE) for _ in range(3)]
            lines.append(f"{prefix}.{i // 200}.{10 + i % 200} {' '.join(states)} "
                         f"{lat + rng.uniform(-0.5, 0.5):.4f} {lon + rng.uniform(-0.5, 0.5):.4f} {os_label}")
    (HERE / "border" / "hosts.txt").write_text("\n".join(lines) + "\n")
    # a few hosts whose VoIP ports close 90 s into a session
    lines = ["# addr sip rtp rtcp lat lon os"]
    for i in range(4):
        lines.append(f"64.17.7.{10 + i} open open|filtered filtered 41.88 -87.6{i} linux")
    for i in range(4):
        lines.append(f"@90 64.17.7.{10 + i} open open|filtered closed")
    (HERE / "border" / "hosts_unstable.txt").write_text("\n".join(lines) + "\n")
    lines = ["# addr sip rtp rtcp lat lon"]
    for i in range(20):
        lines.append(f"64.17.9.{10 + i} closed closed closed 41.88 -87.63")
    (HERE / "border" / "hosts_closed.txt").write_text("\n".join(lines) + "\n")


def satisfactory(rng, total=1000, good=121):
    good_idx = set(rng.sample(range(total), good))
    lines = [f"# {total} hosts, {good} with all three VoIP ports acceptable"]
    for i in range(total):
        addr = f"10.{i // 250}.{(i // 50) % 5}.{i % 50 + 1}"
        if i in good_idx:
            states = [rng.choice(ACCEPTABLE) for _ in range(3)]
        else:
            states = [rng.choice(ACCEPTABLE + UNACCEPTABLE) for _ in range(3)]
            if not any(s in UNACCEPTABLE for s in states):
                states[rng.randrange(3)] = rng.choice(UNACCEPTABLE)
        lines.append(f"{addr} {' '.join(states)} {rng.uniform(-60, 60):.3f} {rng.uniform(-180, 180):.3f}")
    (HERE / "hosts" / "satisfactory_12_1.txt").write_text("\n".join(lines) + "\n")
    lines = ["# every candidate refuses SIP"]
    lines += [f"10.9.0.{i + 1} closed closed closed 0 0" for i in range(50)]
    (HERE / "hosts" / "all_closed.txt").write_text("\n".join(lines) + "\n")


SCHEDULE = """\
# five hosts; times are seconds since the first scan
10.1.0.1 open open open 0 0
10.1.0.2 open filtered filtered 0 0
10.1.0.3 open|filtered open open 0 0
10.1.0.4 open open open 0 0
10.1.0.5 closed open open 0 0
@3600 10.1.0.1 open closed open
@10800 10.1.0.2 host_seems_down filtered filtered
@14400 10.1.0.1 open open open
@21600 10.1.0.3 open open closed
"""


if __name__ == "__main__":
    border(random.Random(3))
    satisfactory(random.Random(121))
    (HERE / "hosts" / "schedule_small.txt").write_text(SCHEDULE)
