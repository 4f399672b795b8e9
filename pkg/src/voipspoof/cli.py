"""Command line front end.

    voipspoof run SCENARIO [--seed N] [--codec NAME] [--output FILE] [-v]
    voipspoof measure-hosts FIXTURE [--sample-size N] [--seed N] [--horizon S]
    voipspoof entry-points TOPOLOGY PREFIXES HOSTS --spoofer ADDR --client ASN=ADDR ... --censor ASN ...

Every command writes one JSON record per line (to ``--output`` or stdout)
followed by a short human-readable summary on stderr.  Relative fixture
paths given to ``measure-hosts`` and ``entry-points`` are looked up in
``$VOIPSPOOF_FIXTURES`` when they do not exist as given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .aspath import AsTopology, PrefixTable, ValleyFreeInference
from .dummy_hosts import DummyHostRecord, load_host_fixture
from .errors import BadFixture, BadScenario, VoipSpoofError
from .measure import entry_point_table, measure_hosts
from .scenario import FIXTURE_ENV, check_assertions, load_scenario, run_scenario


def _fixture(path: str) -> Path:
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(FIXTURE_ENV):
        alt = Path(os.environ[FIXTURE_ENV]) / p
        if alt.exists():
            return alt
    return p


def _emit(records: list[dict], output: str | None) -> None:
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fmt(v) -> str:
    return "-" if v is None else (f"{v:.2f}" if isinstance(v, float) else str(v))


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    rep = run_scenario(scenario, seed=args.seed, codec=args.codec)
    checks = check_assertions(rep, scenario.get("assertions") or [])
    records = [{"record": "page", **p} for p in rep["pages"]]
    records.append({"record": "summary", **{k: v for k, v in rep.items() if k != "pages"}})
    records += [{"record": "assertion", **c} for c in checks]
    _emit(records, args.output)
    err = sys.stderr
    print(f"scenario {rep['scenario']}  seed {rep['seed']}  codec {rep['codec']}  lambda {rep['group_size']}", file=err)
    print(f"{'url':40} {'status':9} {'html_s':>8} {'full_page_s':>12} {'objects':>8}", file=err)
    for p in rep["pages"]:
        print(f"{p['url'][:40]:40} {p['status']:9} {_fmt(p['html_s']):>8} {_fmt(p['full_page_s']):>12} "
              f"{p['objects_ok']:>8}", file=err)
    c = rep["client"]
    print(f"fec recovered {c['fec_recovered']}  gaps {c['fec_gaps']}  auth failures {c['auth_failures']}  "
          f"replays {c['replays']}  attack {rep['censor']['attack'] or '-'}", file=err)
    for chk in checks:
        print(f"assert {chk['path']} = {_fmt(chk['value'])}: {'ok' if chk['ok'] else 'FAILED'}", file=err)
    return 0 if all(c["ok"] for c in checks) else 1


def cmd_measure(args) -> int:
    rep = measure_hosts(_fixture(args.fixture), args.sample_size, args.seed, args.horizon)
    _emit([{"record": "measure_hosts", **rep}], args.output)
    print(f"{rep['satisfactory']}/{rep['sampled']} satisfactory ({rep['satisfactory_pct']}%)", file=sys.stderr)
    if "duration_cdf" in rep:
        for d, frac in rep["duration_cdf"]:
            print(f"  usable <= {d:>8.0f} s: {frac:.2%}", file=sys.stderr)
        print(f"  still usable at {rep['horizon_s']:.0f} s: {rep['still_usable_at_horizon']}", file=sys.stderr)
    return 0


def cmd_entry_points(args) -> int:
    topo = AsTopology.load(_fixture(args.topology))
    prefixes = PrefixTable.load(_fixture(args.prefixes))
    hosts = load_host_fixture(_fixture(args.hosts))
    records = (DummyHostRecord(a, *h.states, rtp_port=20000) for a, h in sorted(hosts.items()))
    candidates = [r for r in records if r.live]
    clients = {}
    for spec in args.client:
        asn, _, addr = spec.partition("=")
        clients[int(asn)] = addr
    rows = entry_point_table(candidates, args.spoofer, clients, ValleyFreeInference(topo, prefixes),
                             frozenset(args.censor))
    _emit([{"record": "entry_point", **r} for r in rows], args.output)
    print(f"{'dst_asn':>8} {'entry_asn':>10} {'usable':>7} {'pct':>6}", file=sys.stderr)
    for r in rows:
        print(f"{r['dst_asn']:>8} {_fmt(r['entry_asn']):>10} {r['usable']:>7} {r['usable_pct']:>5}%", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voipspoof", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario in the simulator")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--codec")
    run.add_argument("--output", "-o")
    run.add_argument("-v", "--verbose", action="count", default=0, dest="sub_verbose")
    run.set_defaults(func=cmd_run)

    mh = sub.add_parser("measure-hosts", help="candidate rate and stability over a host fixture")
    mh.add_argument("fixture")
    mh.add_argument("--sample-size", type=int)
    mh.add_argument("--seed", type=int, default=0)
    mh.add_argument("--horizon", type=float)
    mh.add_argument("--output", "-o")
    mh.set_defaults(func=cmd_measure)

    ep = sub.add_parser("entry-points", help="usable dummy hosts per destination AS")
    ep.add_argument("topology")
    ep.add_argument("prefixes")
    ep.add_argument("hosts")
    ep.add_argument("--spoofer", required=True)
    ep.add_argument("--client", action="append", required=True, metavar="ASN=ADDR")
    ep.add_argument("--censor", type=int, nargs="+", required=True)
    ep.add_argument("--output", "-o")
    ep.set_defaults(func=cmd_entry_points)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    verbosity = args.verbose + getattr(args, "sub_verbose", 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(verbosity, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BadScenario, BadFixture) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VoipSpoofError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
