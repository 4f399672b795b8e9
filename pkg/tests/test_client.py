import threading
from dataclasses import replace

import pytest

from voipspoof.client import ClientState, PageStatus
from voipspoof.errors import GatewayTimeout, IntegrityFailure, SessionTimeout, UnrecoverableGap
from voipspoof.prefetch import SyntheticSite, build_request, embedded_urls, response_body
from voipspoof.sip import Kind, parse
from voipspoof.transport import Datagram, DatagramKind

from pairing import CLIENT, Pair

URL = "http://news.example.org/"


def client_sip(pair, kind):
    return [d for d in pair.c_wire.sent if d.kind is DatagramKind.SIP and parse(d.payload).kind is kind]


def load_page(pair, url=URL, budget_ms=30_000):
    nav = pair.client.begin_request(build_request(url), pair.now)
    end = pair.now + budget_ms
    while pair.client.resolve(nav) is None and pair.now < end:
        pair.run(pair.now + 20)
    return nav


def test_acks_verified_answer_and_streams_dummy_traffic():
    pair = Pair().call()
    assert pair.client.state is ClientState.STREAMING
    assert len(client_sip(pair, Kind.ACK)) == 1
    pair.run(pair.now + 1000)
    assert pair.to_dummy and all(d.dst[0] == "64.17.0.10" for d in pair.to_dummy)
    assert {d.dst[1] for d in pair.to_dummy} == {30000, 30001}


def test_tampered_answer_gets_no_ack():
    pair = Pair()

    def rewrite(d):
        msg = parse(d.payload) if d.kind is DatagramKind.SIP else None
        if msg is not None and msg.kind is Kind.OK:
            forged = replace(msg, sdp=replace(msg.sdp, media_address="203.0.113.66"))
            return Datagram(d.claimed_src, d.dst, forged.serialize(), d.kind)
        return d

    pair.tamper = rewrite
    pair.call()
    pair.run(pair.now + 1000)
    assert pair.client.state is ClientState.ABORTED
    assert isinstance(pair.client.error, IntegrityFailure)
    assert client_sip(pair, Kind.ACK) == []
    assert all(d.kind is DatagramKind.SIP for d in pair.c_wire.sent)


def test_invite_timeout():
    pair = Pair()
    pair.tamper = lambda d: None
    pair.call()
    pair.run(33_000, step=1000)
    assert pair.client.state is ClientState.ABORTED
    assert isinstance(pair.client.error, SessionTimeout)


def test_page_and_objects_come_from_one_request():
    pair = Pair().call()
    nav = load_page(pair)
    html = pair.client.resolve(nav)
    assert html.startswith(b"HTTP/1.1 200")
    objects = embedded_urls(response_body(html), URL)
    pair.run(pair.now + 3000)
    for u in objects:
        h = pair.client.begin_request(build_request(u), pair.now)
        assert pair.client.resolve(h) is not None
    assert pair.up.sent == 1
    (page,) = pair.client.history
    assert page.status is PageStatus.COMPLETE
    assert page.html_s <= page.full_page_s


def test_missing_object_is_gateway_timeout():
    pair = Pair(site=SyntheticSite(object_sizes=[500], missing=1)).call()
    load_page(pair)
    pair.run(pair.now + 3000)
    h = pair.client.begin_request(build_request(URL + "static/missing0.png"), pair.now)
    with pytest.raises(GatewayTimeout):
        pair.client.resolve(h)
    assert pair.client.serve(build_request(URL + "static/missing0.png")).startswith(b"HTTP/1.1 504")


def test_two_losses_in_a_group_is_a_gap():
    pair = Pair(site=SyntheticSite(object_sizes=[20_000])).call()
    seen = [0]

    def drop_three(d):
        if d.kind is DatagramKind.RTP:
            seen[0] += 1
            # three neighbours in the object part: at least two share a parity group
            if seen[0] in (200, 201, 202):
                return None
        return d

    pair.tamper = drop_three
    html = pair.client.resolve(load_page(pair))
    obj = embedded_urls(response_body(html), URL)[0]
    handle = pair.client.begin_request(build_request(obj), pair.now)
    with pytest.raises(UnrecoverableGap):
        while pair.client.resolve(handle) is None and pair.now < 30_000:
            pair.run(pair.now + 20)
    (page,) = pair.client.history
    assert page.status is PageStatus.GAP and page.full_page_s is None
    assert pair.client.stats()["fec_gaps"] >= 1
    assert pair.client.serve(build_request(obj)).startswith(b"HTTP/1.1 504")


def test_single_loss_per_group_is_repaired():
    pair = Pair(site=SyntheticSite(object_sizes=[20_000])).call()
    seen = [0]

    def drop_every_eleventh(d):
        if d.kind is DatagramKind.RTP:
            seen[0] += 1
            if seen[0] % 11 == 0:
                return None
        return d

    pair.tamper = drop_every_eleventh
    nav = load_page(pair)
    assert pair.client.resolve(nav).startswith(b"HTTP/1.1 200")
    assert pair.client.stats()["fec_recovered"] > 0


def test_teardown_is_idempotent():
    pair = Pair().call()
    pair.client.teardown(pair.now)
    pair.client.teardown(pair.now)
    assert pair.up.sent == 1
    assert pair.client.state is ClientState.CLOSING
    pair.run(pair.now + 400)
    assert pair.client.state is ClientState.CLOSED


def test_teardown_deadline_closes_without_bye():
    pair = Pair().call()
    pair.tamper = lambda d: None
    pair.client.teardown(pair.now)
    pair.run(pair.now + 31_000, step=500)
    assert pair.client.state is ClientState.CLOSED


def test_request_before_call_is_refused():
    pair = Pair()
    with pytest.raises(SessionTimeout):
        pair.client.begin_request(build_request(URL), 0)


def test_blocking_request_from_browser_thread():
    pair = Pair().call()
    result = {}
    t = threading.Thread(target=lambda: result.update(r=pair.client.http_request(build_request(URL), pair.now, 5)))
    t.start()
    while t.is_alive() and pair.now < 30_000:
        pair.run(pair.now + 200)
    t.join(5)
    assert result["r"].startswith(b"HTTP/1.1 200")


def test_unknown_object_with_no_page_loading():
    pair = Pair().call()
    h = pair.client.begin_request(build_request(URL + "x.png"), pair.now)
    with pytest.raises(GatewayTimeout):
        pair.client.resolve(h)
    assert pair.up.sent == 0
    assert CLIENT == pair.client.config.addr
