import struct

import pytest
from hypothesis import given, settings, strategies as st

from voipspoof.errors import MalformedRecord
from voipspoof.prefetch import (END_OF_PAGE, FixtureFetcher, HttpPairRecord, RecordParser, Resource, SyntheticSite,
                                build_request, decode_records, embedded_urls, encode_records, normalize_url,
                                prefetch, request_url, response_body, synthetic_page)

URL = "http://news.example.org/"


def test_record_layout():
    rec = HttpPairRecord(b"GET / HTTP/1.1\r\n\r\n", b"HTTP/1.1 200 OK\r\n\r\nhi")
    raw = rec.encode()
    assert raw[:2] == struct.pack(">H", len(rec.request))
    assert raw[2 + len(rec.request):6 + len(rec.request)] == struct.pack(">I", len(rec.response))
    assert END_OF_PAGE.encode() == b"\xff\xff"
    assert decode_records(raw + END_OF_PAGE.encode()) == [rec, END_OF_PAGE]


def test_record_errors():
    with pytest.raises(MalformedRecord):
        HttpPairRecord(b"", b"x").encode()
    with pytest.raises(MalformedRecord):
        HttpPairRecord(b"x" * 0xFFFF, b"").encode()
    with pytest.raises(MalformedRecord):
        decode_records(b"\x00\x00")
    with pytest.raises(MalformedRecord, match="trailing"):
        decode_records(b"\x00\x05abc")
    parser = RecordParser()
    parser.feed(b"\xff\xff")
    with pytest.raises(MalformedRecord):
        parser.feed(b"x")


@settings(max_examples=60, deadline=None)
@given(bodies=st.lists(st.binary(max_size=300), max_size=6), cut=st.integers(1, 50))
def test_incremental_parse_any_chunking(bodies, cut):
    records = [HttpPairRecord(build_request(f"{URL}o{i}"), b) for i, b in enumerate(bodies)] + [END_OF_PAGE]
    raw = encode_records(records)
    parser = RecordParser()
    got = []
    for i in range(0, len(raw), cut):
        got += parser.feed(raw[i:i + cut])
    assert got == records and parser.done


def test_request_helpers():
    req = build_request("HTTP://News.Example.org/a?b=1#frag")
    assert req.startswith(b"GET http://news.example.org/a?b=1 HTTP/1.1\r\nHost: news.example.org\r\n")
    assert request_url(req) == "http://news.example.org/a?b=1"
    assert request_url(b"GET /x HTTP/1.1\r\nHost: h.org\r\n\r\n") == "http://h.org/x"
    assert normalize_url("HTTP://X.org") == "http://x.org/"


def test_embedded_urls_dedup_and_resolve():
    html = (b'<img src="/a.png"><script src="b.js"></script><link rel="stylesheet" href="/c.css">'
            b'<link rel="canonical" href="/x"><img src="/a.png"><img src="data:xyz"><a href="/page2">')
    assert embedded_urls(html, "http://h.org/dir/") == [
        "http://h.org/a.png", "http://h.org/dir/b.js", "http://h.org/c.css"]


def test_synthetic_page_sizes():
    res = synthetic_page(URL)
    assert len(res) == 8
    assert len(res[URL].body) == 20480
    assert sum(len(r.body) for r in res.values()) == 160 * 1024
    assert len(embedded_urls(res[URL].body, URL)) == 7
    with pytest.raises(ValueError):
        synthetic_page(URL, html_size=50)


def test_prefetch_whole_page():
    site = SyntheticSite(URL, object_sizes=[100, 200, 300])
    records = prefetch(URL, site)
    assert records[-1] is END_OF_PAGE
    assert records[0].url == URL
    assert [len(response_body(r.response)) for r in records[1:-1]] == [100, 200, 300]
    assert site.requests[0] == URL and len(site.requests) == 4


def test_prefetch_missing_object_skipped():
    site = SyntheticSite(URL, object_sizes=[10], missing=1)
    records = prefetch(URL, site)
    assert len(records) == 3
    assert len(site.requests) == 3


def test_prefetch_failed_page_is_502():
    records = prefetch("http://nowhere.example/", FixtureFetcher())
    assert len(records) == 2 and records[1] is END_OF_PAGE
    assert records[0].response.startswith(b"HTTP/1.1 502")


def test_non_html_not_scanned():
    fetcher = FixtureFetcher({"http://h.org/f.txt": Resource(b'<img src="/x.png">', "text/plain")})
    assert len(prefetch("http://h.org/f.txt", fetcher)) == 2
