import threading

import pytest
from hypothesis import given, strategies as st

from voipspoof.errors import MalformedRecord
from voipspoof.upstream import TERMINATE, UpstreamChannel, UpstreamMessage, channel


def test_message_validation():
    with pytest.raises(ValueError):
        UpstreamMessage("http://a/", "1.2.3.4", 0)
    with pytest.raises(ValueError):
        UpstreamMessage("http://a/", "1.2.3.4", 256)
    with pytest.raises(ValueError):
        UpstreamMessage("", "1.2.3.4", 1)
    assert UpstreamMessage(TERMINATE, "1.2.3.4", 3).is_terminate
    with pytest.raises(MalformedRecord):
        UpstreamMessage.decode("http://a/\t1.2.3.4")
    with pytest.raises(MalformedRecord):
        UpstreamMessage.decode("http://a/\t1.2.3.4\t999")


@given(url=st.text(alphabet=st.characters(blacklist_characters="\t\n\r", blacklist_categories=("Cs",)),
                   min_size=1).filter(lambda s: s.strip() == s),
       task=st.integers(1, 255))
def test_encode_round_trip(url, task):
    msg = UpstreamMessage(url, "58.32.17.20", task)
    assert UpstreamMessage.decode(msg.encode()) == msg


def test_channel_latency_and_order():
    ch = UpstreamChannel(latency_ms=200)
    a = UpstreamMessage("http://a/", "1.1.1.1", 1)
    b = UpstreamMessage("http://b/", "1.1.1.1", 2)
    ch.send(a, 0)
    ch.send(b, 0)
    assert ch.next_due() == 200
    assert ch.receive(199) == []
    assert ch.receive(200) == [a, b]
    assert ch.next_due() is None and ch.sent == 2


def test_channel_registry_and_threads():
    ch = channel("test-shared")
    assert channel("test-shared") is ch
    msgs = [UpstreamMessage(f"http://x/{i}", "1.1.1.1", 1 + i % 255) for i in range(400)]
    threads = [threading.Thread(target=lambda part=msgs[i::4]: [ch.send(m, 0) for m in part]) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    got = ch.receive(10_000)
    assert sorted(m.url for m in got) == sorted(m.url for m in msgs)
