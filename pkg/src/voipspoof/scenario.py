"""Scenario files: wiring a relay, a client, a proxy and a censor from YAML.

See ``scenarios/acceptance.yaml`` for a complete example and README for
every key.  Fixture paths are resolved against ``fixture_dir`` (relative to
the scenario file), else ``$VOIPSPOOF_FIXTURES``, else the scenario's own
directory.
"""

from __future__ import annotations

import logging
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .aspath import AsTopology, PrefixTable, ValleyFreeInference
from .client import ClientConfig, ClientSession, ClientState, PageStatus, RequestHandle
from .codec_profiles import goodput, lookup
from .dummy_hosts import DummyHostRecord, DummyRegistry, FixtureGeo, FixtureScanner, load_host_fixture
from .errors import BadScenario, BadFixture, GatewayTimeout, UnknownCodec, UnrecoverableGap, VoipSpoofError
from .netsim import CensorAttack, Network, SimConfig, SipProxy
from .prefetch import SyntheticSite, build_request, embedded_urls, response_body
from .registration import RegistrationRecord, generate_keypair, seal_registration
from .sip import SIP_PORT, random_even_port
from .spoofer import Spoofer, SpooferConfig
from .upstream import UpstreamChannel

logger = logging.getLogger(__name__)

FIXTURE_ENV = "VOIPSPOOF_FIXTURES"
POLL_MS = 20


@dataclass
class PageLoad:
    url: str
    at_ms: int
    fetch_objects: bool = True
    nav: RequestHandle | None = None
    objects: dict[str, RequestHandle] = field(default_factory=dict)
    html: bytes | None = None
    results: dict[str, str] = field(default_factory=dict)
    done: bool = False
    error: str = ""


class BrowserDriver:
    """Issues page loads at scheduled times, then asks for each embedded object."""

    def __init__(self, client: ClientSession, loads: list[PageLoad], teardown_after_ms: int | None):
        self.client = client
        self.loads = sorted(loads, key=lambda p: p.at_ms)
        self.teardown_after_ms = teardown_after_ms
        self._teardown_at: int | None = None
        self.torn_down = False
        self._next = min((p.at_ms for p in self.loads), default=None)

    @property
    def pages_done(self) -> bool:
        return all(p.done for p in self.loads)

    @property
    def finished(self) -> bool:
        return self.pages_done and (self.teardown_after_ms is None or self.torn_down)

    def on_datagram(self, d, now: int) -> None:
        return None

    def next_due(self) -> int | None:
        if self.finished or self.client.state in (ClientState.ABORTED, ClientState.CLOSED):
            return None
        return self._next

    def tick(self, now: int) -> None:
        for load in self.loads:
            if not load.done and load.at_ms <= now:
                self._step(load, now)
        if self.pages_done and self.teardown_after_ms is not None and not self.torn_down:
            if self._teardown_at is None:
                self._teardown_at = now + self.teardown_after_ms
            if now >= self._teardown_at:
                self.client.teardown(now)
                self.torn_down = True
        if self.finished:
            self._next = None
        elif any(not p.done and p.at_ms <= now for p in self.loads):
            self._next = now + POLL_MS
        elif self.pages_done:
            self._next = self._teardown_at
        else:
            self._next = min(p.at_ms for p in self.loads if not p.done)

    def _step(self, load: PageLoad, now: int) -> None:
        client = self.client
        try:
            if load.nav is None:
                if client.state is not ClientState.STREAMING:
                    return
                load.nav = client.begin_request(build_request(load.url), now)
            if load.html is None:
                resp = client.resolve(load.nav)
                if resp is None:
                    return
                load.html = resp
                load.results[load.url] = "ok"
                if load.fetch_objects:
                    for url in embedded_urls(response_body(resp), load.url):
                        load.objects[url] = client.begin_request(build_request(url), now)
            for url, handle in load.objects.items():
                if url in load.results:
                    continue
                try:
                    if client.resolve(handle) is not None:
                        load.results[url] = "ok"
                except GatewayTimeout:
                    load.results[url] = "504"
                except UnrecoverableGap:
                    load.results[url] = "gap"
            if len(load.results) == len(load.objects) + 1:
                load.done = True
        except GatewayTimeout:
            load.results[load.url] = "504"
            load.done, load.error = True, "gateway timeout"
        except UnrecoverableGap:
            load.results[load.url] = "gap"
            load.done, load.error = True, "gap"
        except VoipSpoofError as exc:
            load.done, load.error = True, str(exc)


def _resolve(base: Path, rel: str, what: str) -> Path:
    path = (base / rel).resolve()
    if not path.exists():
        raise BadScenario(f"{what} fixture not found: {path}")
    return path


@dataclass
class World:
    scenario: dict
    net: Network
    spoofer: Spoofer
    client: ClientSession
    proxy: SipProxy
    driver: BrowserDriver
    upstream: UpstreamChannel
    site: SyntheticSite
    registry: DummyRegistry

    def done(self) -> bool:
        c = self.client
        if c.state in (ClientState.ABORTED, ClientState.CLOSED):
            return True
        if self.scenario.get("run_for_s") is not None:
            return False
        return self.driver.finished and self.driver.teardown_after_ms is None and bool(self.driver.loads)


def load_scenario(path: str | os.PathLike) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise BadScenario(f"cannot read scenario {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise BadScenario(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise BadScenario(f"{path}: top level must be a mapping")
    data.setdefault("_path", str(path.resolve()))
    return data


def fixture_base(scenario: dict) -> Path:
    here = Path(scenario.get("_path", ".")).parent
    if scenario.get("fixture_dir"):
        return (here / scenario["fixture_dir"]).resolve()
    if os.environ.get(FIXTURE_ENV):
        return Path(os.environ[FIXTURE_ENV])
    return here


def build_world(scenario: dict, *, seed: int | None = None, codec: str | None = None) -> World:
    sc = dict(scenario)
    if seed is not None:
        sc["seed"] = seed
    if codec is not None:
        sc["codec"] = codec
    seed = int(sc.get("seed", 0))
    codec_name = sc.get("codec", "G.711")
    try:
        lookup(codec_name)
    except UnknownCodec:
        raise BadScenario(f"unknown codec {codec_name!r}") from None
    group_size = int(sc.get("group_size", 10))
    base = fixture_base(sc)
    try:
        fixtures = sc["fixtures"]
        topology = AsTopology.load(_resolve(base, fixtures["topology"], "topology"))
        prefixes = PrefixTable.load(_resolve(base, fixtures["prefixes"], "prefix"))
        hosts = load_host_fixture(_resolve(base, fixtures["hosts"], "host"))
        spoofer_cfg, client_cfg, proxy_cfg = sc["spoofer"], sc["client"], sc["proxy"]
    except KeyError as exc:
        raise BadScenario(f"missing scenario key {exc}") from None
    except BadFixture as exc:
        raise BadScenario(str(exc)) from None
    net_cfg = dict(sc.get("network") or {})
    attack = None
    if sc.get("attack"):
        params = dict(sc["attack"])
        try:
            attack = CensorAttack(params.pop("kind"), params)
        except (KeyError, ValueError) as exc:
            raise BadScenario(f"bad attack: {exc}") from None
    censor_ases = frozenset(int(a) for a in sc.get("censor_ases", ()))
    fetch_latency = int(sc.get("fetch_latency_ms", 2000))
    try:
        config = SimConfig(
            seed=seed, loss_rate=float(net_cfg.get("loss_rate", 0)), reorder_rate=float(net_cfg.get("reorder_rate", 0)),
            base_delay_ms=int(net_cfg.get("base_delay_ms", 40)), jitter_ms=int(net_cfg.get("jitter_ms", 0)),
            fetch_latency_ms=fetch_latency, censor_ases=censor_ases, attack=attack,
            loss_pattern=tuple(net_cfg["loss_pattern"]) if net_cfg.get("loss_pattern") else None,
        )
    except ValueError as exc:
        raise BadScenario(str(exc)) from None

    net = Network(config, prefixes)
    rng = random.Random(f"{seed}:nodes")
    clock = lambda: net.now / 1000  # noqa: E731
    scanner = FixtureScanner(hosts, clock)
    registry = DummyRegistry()
    for addr in sorted(hosts):
        entry = hosts[addr]
        registry.add(DummyHostRecord(addr, *entry.states, rtp_port=random_even_port(rng), location=entry.location,
                                     os_label=entry.os_label))
        net.add_sink(addr)
    if attack is not None and attack.kind.value == "RewriteOkAddress":
        net.add_sink(attack.param("address", "203.0.113.66"))

    site_cfg = dict(sc.get("site") or {})
    url = site_cfg.get("url", "http://news.example.org/")
    object_sizes = site_cfg.get("object_sizes")
    if object_sizes is None and "objects" in site_cfg:
        object_sizes = [int(site_cfg.get("object_size", 20480))] * int(site_cfg["objects"])
    site = SyntheticSite(url, html_size=int(site_cfg.get("html_size", 20480)), object_sizes=object_sizes,
                         seed=seed, missing=int(site_cfg.get("missing", 0)))

    upstream = UpstreamChannel("upstream", int(sc.get("upstream_latency_ms", 200)))
    proxy = SipProxy(proxy_cfg["addr"], net)
    priv, pub = generate_keypair()
    spoofer = Spoofer(
        spoofer_cfg["addr"], priv, registry, scanner, net.transport(), site, proxy.endpoint,
        config=SpooferConfig(group_size=group_size, fetch_latency_ms=fetch_latency, censor_ases=censor_ases,
                             ua_profile=spoofer_cfg.get("ua_profile", "sflphone"),
                             monitor_interval_ms=int(spoofer_cfg.get("monitor_interval_ms", 60_000)),
                             distance_threshold_km=float(spoofer_cfg.get("distance_threshold_km", 500))),
        inbox=upstream, geo=FixtureGeo.from_hosts(hosts), inference=ValleyFreeInference(topology, prefixes),
        rng=random.Random(f"{seed}:spoofer"),
    )
    master_key = random.Random(f"{seed}:master").randbytes(32)
    caller = client_cfg.get("caller", "alice@voip.example.net")
    callee = client_cfg.get("callee", "relay7@voip.example.net")
    spoofer.register(seal_registration(pub, RegistrationRecord(
        caller, master_key, callee, client_cfg.get("callee_password", "pw-callee"),
        client_cfg.get("upstream_id", "alice.im@chat.example.net"), client_cfg.get("upstream_password", "pw-im"))))
    proxy.register(callee, spoofer.sip_endpoint)
    proxy.register(caller, (client_cfg["addr"], SIP_PORT))

    pages = [PageLoad(p.get("url", url), int(float(p.get("at_s", 1)) * 1000), bool(p.get("fetch_objects", True)))
             for p in sc.get("pages") or []]
    client = ClientSession(
        ClientConfig(client_cfg["addr"], caller, callee, master_key, proxy.endpoint, codecs=(codec_name,),
                     ua_profile=client_cfg.get("ua_profile", "pjsua"), group_size=group_size,
                     navigation_urls=frozenset(p.url for p in pages)),
        net.transport(), upstream, random.Random(f"{seed}:client"))
    teardown = sc.get("teardown_after_s", 1)
    driver = BrowserDriver(client, pages, None if teardown is None else int(float(teardown) * 1000))

    net.attach(proxy.addr, proxy)
    net.attach(spoofer.addr, spoofer)
    net.attach(client.config.addr, client)
    net.add_driver(driver)
    return World(sc, net, spoofer, client, proxy, driver, upstream, site, registry)


def run_world(world: World) -> dict:
    sc = world.scenario
    start_ms = int(float(sc.get("call_at_s", 0)) * 1000)
    world.net.now = start_ms
    world.client.start(start_ms)
    if sc.get("run_for_s") is not None:
        end = start_ms + int(float(sc["run_for_s"]) * 1000)
    else:
        end = start_ms + int(float(sc.get("duration_s", 600)) * 1000)
    world.net.run_until(end, stop=world.done)
    return report(world)


def report(world: World) -> dict:
    sc, client, spoofer, net = world.scenario, world.client, world.spoofer, world.net
    codec = lookup(sc.get("codec", "G.711"))
    group_size = int(sc.get("group_size", 10))
    cstats = client.stats()
    pages = []
    by_url = {p["url"]: p for p in cstats["pages"]}
    for load in world.driver.loads:
        entry = dict(by_url.get(load.url) or {"url": load.url, "status": "not_started", "html_s": None, "full_page_s": None})
        entry["objects_ok"] = sum(1 for u, r in load.results.items() if u != load.url and r == "ok")
        entry["objects_504"] = sum(1 for r in load.results.values() if r == "504")
        entry["objects_gap"] = sum(1 for r in load.results.values() if r == "gap")
        entry["gap"] = entry["status"] == PageStatus.GAP.value
        pages.append(entry)
    sessions = list(spoofer.sessions.values())
    censor = net.censor
    rewritten = censor.rewritten_to
    dummy_endpoints = {(s.dummy.addr, s.dummy.rtp_port) for s in sessions}
    return {
        "scenario": sc.get("name", Path(sc.get("_path", "scenario")).stem),
        "seed": int(sc.get("seed", 0)),
        "codec": codec.name,
        "group_size": group_size,
        "goodput_model_Bps": round(goodput(codec, group_size), 3),
        "virtual_time_s": net.now / 1000,
        "pages": pages,
        "client": cstats,
        "spoofer": {
            "sessions": len(sessions),
            "rtp_sent": sum(s.sender.rtp_sent for s in sessions),
            "rtcp_sent": sum(s.sender.rtcp_sent for s in sessions),
            "rejects": spoofer.rejects,
            "ignored_invites": spoofer.ignored_invites,
            "end_reasons": [s.end_reason for s in sessions if s.end_reason],
            "dummy_hosts": sorted(a for a, _ in dummy_endpoints),
            "data_blocks": sum(s.mux.data_blocks for s in sessions),
            "parity_blocks": sum(s.mux.parity_blocks for s in sessions),
            "filler_blocks": sum(s.mux.filler_blocks for s in sessions),
        },
        "network": net.stats(),
        "censor": {
            "observed": len(censor.log.entries),
            "acks_seen": censor.log.count(sip="ACK"),
            "bindings": {k: sorted(v) for k, v in censor.log.bindings.items()},
            "attack": dict(censor.outcomes),
            "rewritten_to": sorted(rewritten),
            "media_to_rewritten": sum(n for (a, _), n in net.sent_to.items() if a in rewritten),
        },
        "upstream_messages": world.upstream.sent,
    }


def run_scenario(scenario: dict | str | os.PathLike, *, seed: int | None = None, codec: str | None = None) -> dict:
    if not isinstance(scenario, dict):
        scenario = load_scenario(scenario)
    return run_world(build_world(scenario, seed=seed, codec=codec))


def lookup_path(report_data: Any, path: str) -> Any:
    cur = report_data
    for part in path.split("."):
        if isinstance(cur, list):
            try:
                cur = cur[int(part)]
            except (ValueError, IndexError):
                raise KeyError(path) from None
        elif isinstance(cur, dict) and part in cur:
            cur = cur[part]
        else:
            raise KeyError(path)
    return cur


def check_assertions(report_data: dict, assertions: list[dict]) -> list[dict]:
    results = []
    for a in assertions or []:
        path = a.get("path")
        try:
            value = lookup_path(report_data, path)
        except KeyError:
            results.append({"path": path, "value": None, "ok": False, "why": "missing"})
            continue
        ok = True
        if "equals" in a:
            ok &= value == a["equals"]
        if "min" in a:
            ok &= value is not None and value >= a["min"]
        if "max" in a:
            ok &= value is not None and value <= a["max"]
        results.append({"path": path, "value": value, "ok": bool(ok)})
    return results
