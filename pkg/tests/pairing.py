"""Wire a client straight to a relay through loopback transports, no network model."""

import random

from voipspoof.client import ClientConfig, ClientSession
from voipspoof.dummy_hosts import DummyHostRecord, DummyRegistry, FixtureScanner, HostEntry, PortState
from voipspoof.prefetch import SyntheticSite
from voipspoof.registration import RegistrationRecord, generate_keypair, seal_registration
from voipspoof.spoofer import Spoofer, SpooferConfig
from voipspoof.transport import DatagramKind, LoopbackTransport
from voipspoof.upstream import UpstreamChannel

SPOOFER = "130.126.24.53"
CLIENT = "58.32.17.20"
PROXY = ("216.115.20.10", 5060)
CALLER = "alice@voip.example.net"
CALLEE = "relay7@voip.example.net"
OPEN = (PortState.OPEN,) * 3


class Pair:
    def __init__(self, dummies=("64.17.0.10",), states=OPEN, seed=0, site=None, **spoofer_cfg):
        rng = random.Random(seed)
        self.now = 0
        self.hosts = {a: HostEntry(a, states, (41.0, -87.0)) for a in dummies}
        self.scanner = FixtureScanner(self.hosts, lambda: self.now / 1000)
        self.registry = DummyRegistry(DummyHostRecord(a, *states, rtp_port=30000, location=(41.0, -87.0))
                                      for a in dummies)
        self.site = site or SyntheticSite(object_sizes=[2000, 3000])
        self.up = UpstreamChannel(latency_ms=200)
        self.s_wire, self.c_wire = LoopbackTransport(), LoopbackTransport()
        priv, pub = generate_keypair()
        self.spoofer = Spoofer(SPOOFER, priv, self.registry, self.scanner, self.s_wire, self.site, PROXY,
                               config=SpooferConfig(fetch_latency_ms=100, **spoofer_cfg), inbox=self.up,
                               rng=random.Random(seed + 1))
        self.key = rng.randbytes(32)
        self.spoofer.register(seal_registration(pub, RegistrationRecord(CALLER, self.key, CALLEE, "p", "im", "p")))
        self.client = ClientSession(ClientConfig(CLIENT, CALLER, CALLEE, self.key, PROXY), self.c_wire, self.up,
                                    random.Random(seed + 2))
        self.delivered_to_client = []
        self.to_dummy = []
        self._s_seen = self._c_seen = 0
        # hook: callable(datagram) -> datagram | None, applied to relay output
        self.tamper = None

    def flush(self):
        while self._s_seen < len(self.s_wire.sent) or self._c_seen < len(self.c_wire.sent):
            for d in self.s_wire.sent[self._s_seen:]:
                self._s_seen += 1
                if self.tamper is not None:
                    d = self.tamper(d)
                    if d is None:
                        continue
                self.delivered_to_client.append(d)
                self.client.on_datagram(d, self.now)
            for d in self.c_wire.sent[self._c_seen:]:
                self._c_seen += 1
                if d.kind is DatagramKind.SIP:
                    self.spoofer.on_datagram(d, self.now)
                else:
                    self.to_dummy.append(d)

    def run(self, until_ms, step=20):
        while self.now <= until_ms:
            self.spoofer.tick(self.now)
            self.client.tick(self.now)
            self.flush()
            self.now += step
        self.now -= step

    def call(self):
        self.client.start(self.now)
        self.flush()
        self.run(self.now + 40)
        return self
