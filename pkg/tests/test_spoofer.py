import pytest

from voipspoof.errors import DuplicateTask, NoCandidate, NoSession, SpoofingUnsupported, UnknownCallee
from voipspoof.dummy_hosts import PortState
from voipspoof.sip import Kind, build_invite, BUILTIN_UA_PROFILES, parse
from voipspoof.spoofer import SessionState
from voipspoof.transport import Datagram, DatagramKind
from voipspoof.upstream import UpstreamMessage

from pairing import CALLEE, CLIENT, SPOOFER, Pair


def sip_sent(pair, kind):
    return [d for d in pair.s_wire.sent if d.kind is DatagramKind.SIP and parse(d.payload).kind is kind]


def test_ok_names_the_dummy_and_never_the_relay():
    pair = Pair().call()
    (ok,) = sip_sent(pair, Kind.OK)
    assert SPOOFER.encode() not in ok.payload
    msg = parse(ok.payload)
    assert msg.contact == "64.17.0.10:5060" and msg.sdp.media_address == "64.17.0.10"
    (session,) = pair.spoofer.sessions.values()
    assert session.state is SessionState.STREAMING
    assert pair.registry.hosts["64.17.0.10"].assigned_to == CALLEE


def test_media_is_spoofed_and_on_codec_cadence():
    pair = Pair().call()
    start = len(pair.s_wire.sent)
    pair.run(pair.now + 10_000)
    media = [d for d in pair.s_wire.sent[start:] if d.kind is not DatagramKind.SIP]
    rtp = [d for d in media if d.kind is DatagramKind.RTP]
    rtcp = [d for d in media if d.kind is DatagramKind.RTCP]
    assert all(d.claimed_src[0] == "64.17.0.10" for d in media)
    assert all(d.dst == pair.client.rtp_endpoint for d in rtp)
    assert 499 <= len(rtp) <= 501
    assert len(rtcp) == 2
    assert {d.size for d in rtp} == {d.size for d in rtcp}


def test_unknown_callee_is_ignored_silently():
    pair = Pair()
    inv = build_invite("bob@x.net", "nobody@voip.example.net", CLIENT, BUILTIN_UA_PROFILES["pjsua"])
    with pytest.raises(UnknownCallee):
        pair.spoofer.handle_invite(inv)
    pair.spoofer.on_datagram(Datagram((CLIENT, 5060), (SPOOFER, 5060), inv.serialize(), DatagramKind.SIP), 0)
    assert pair.s_wire.sent == [] and pair.spoofer.ignored_invites == 1


def test_no_live_dummy_rejects():
    pair = Pair(states=(PortState.CLOSED, PortState.OPEN, PortState.OPEN)).call()
    assert len(sip_sent(pair, Kind.REJECT)) == 1
    assert pair.client.state.value == "aborted"
    assert isinstance(pair.client.error, NoCandidate)


def test_upstream_request_schedules_fetch_and_duplicates_are_refused():
    pair = Pair().call()
    msg = UpstreamMessage("http://news.example.org/", CLIENT, 7)
    pair.spoofer.handle_upstream(msg, pair.now)
    with pytest.raises(DuplicateTask):
        pair.spoofer.handle_upstream(msg, pair.now)
    (session,) = pair.spoofer.sessions.values()
    assert session.fetches[0][0] == pair.now + 100
    with pytest.raises(NoSession):
        pair.spoofer.handle_upstream(UpstreamMessage("http://a/", "9.9.9.9", 1))


def test_terminate_sends_bye_from_dummy_and_releases():
    pair = Pair().call()
    pair.spoofer.handle_upstream(UpstreamMessage("TERMINATE", CLIENT, 3), pair.now)
    (bye,) = sip_sent(pair, Kind.BYE)
    assert bye.claimed_src == ("64.17.0.10", 5060)
    assert pair.registry.hosts["64.17.0.10"].assigned_to is None
    pair.flush()
    assert pair.client.state.value == "closed"
    count = len(pair.s_wire.sent)
    pair.run(pair.now + 1000)
    assert len(pair.s_wire.sent) == count


def test_lost_dummy_ends_session():
    pair = Pair(monitor_interval_ms=1000).call()
    pair.hosts["64.17.0.10"].schedule.append((1.5, (PortState.OPEN, PortState.CLOSED, PortState.OPEN)))
    pair.run(3000)
    (session,) = pair.spoofer.sessions.values()
    assert session.state is SessionState.TERMINATED and session.end_reason == "dummy host lost"


def test_scanner_outage_keeps_session():
    pair = Pair(monitor_interval_ms=500).call()
    pair.scanner.available = False
    pair.run(2000)
    (session,) = pair.spoofer.sessions.values()
    assert session.state is SessionState.STREAMING


def test_transport_without_spoofing_refuses():
    pair = Pair().call()
    pair.s_wire.supports_spoofing = False
    with pytest.raises(SpoofingUnsupported):
        pair.run(pair.now + 100)


def test_next_call_gets_same_dummy():
    pair = Pair(dummies=("64.17.0.10", "64.17.0.11", "64.17.0.12"), seed=4).call()
    first = next(iter(pair.spoofer.sessions.values())).dummy.addr
    pair.spoofer.handle_upstream(UpstreamMessage("TERMINATE", CLIENT, 1), pair.now)
    pair.flush()
    inv = build_invite("alice@voip.example.net", CALLEE, CLIENT, BUILTIN_UA_PROFILES["pjsua"])
    session = pair.spoofer.handle_invite(inv)
    assert session.dummy.addr == first
