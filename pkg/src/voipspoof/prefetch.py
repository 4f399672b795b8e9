"""Page capture on the relay side and the record format that carries it.

A page travels as a sequence of request/response pairs inside one task
stream, each framed as::

    u16 request length | request | u32 response length | response

and terminated by a bare ``0xFFFF`` request length (End-of-Page).
"""

from __future__ import annotations

import logging
import mimetypes
import random
import struct
from dataclasses import dataclass
from html.parser import HTMLParser
from typing import Protocol
from urllib.parse import urljoin, urlsplit, urlunsplit

from .errors import FetchFailure, MalformedRecord

logger = logging.getLogger(__name__)

END_OF_PAGE_LEN = 0xFFFF
MAX_REQUEST = END_OF_PAGE_LEN - 1
_REQ_LEN = struct.Struct(">H")
_RESP_LEN = struct.Struct(">I")

# tag -> attributes that name an embedded resource
RESOURCE_ATTRS = {
    "img": ("src",), "script": ("src",), "link": ("href",), "iframe": ("src",),
    "source": ("src",), "embed": ("src",), "object": ("data",),
    "video": ("src", "poster"), "audio": ("src",),
}


@dataclass(frozen=True)
class HttpPairRecord:
    request: bytes
    response: bytes

    @property
    def is_end_of_page(self) -> bool:
        return not self.request and not self.response

    def encode(self) -> bytes:
        if self.is_end_of_page:
            return _REQ_LEN.pack(END_OF_PAGE_LEN)
        if not self.request:
            raise MalformedRecord("only the End-of-Page sentinel may have an empty request")
        if len(self.request) > MAX_REQUEST:
            raise MalformedRecord(f"request of {len(self.request)} bytes does not fit the length field")
        return _REQ_LEN.pack(len(self.request)) + self.request + _RESP_LEN.pack(len(self.response)) + self.response

    @property
    def url(self) -> str:
        return request_url(self.request)


END_OF_PAGE = HttpPairRecord(b"", b"")


def encode_records(records: list[HttpPairRecord]) -> bytes:
    return b"".join(r.encode() for r in records)


class RecordParser:
    """Incremental decoder for a task stream; feed bytes, collect whole records."""

    def __init__(self):
        self._buf = bytearray()
        self.done = False

    def feed(self, data: bytes) -> list[HttpPairRecord]:
        if self.done:
            if data:
                raise MalformedRecord("data after End-of-Page")
            return []
        self._buf += data
        out = []
        while not self.done:
            if len(self._buf) < 2:
                break
            (req_len,) = _REQ_LEN.unpack_from(self._buf)
            if req_len == END_OF_PAGE_LEN:
                del self._buf[:2]
                self.done = True
                out.append(END_OF_PAGE)
                break
            if req_len == 0:
                raise MalformedRecord("empty request in task stream")
            head = 2 + req_len
            if len(self._buf) < head + 4:
                break
            (resp_len,) = _RESP_LEN.unpack_from(self._buf, head)
            end = head + 4 + resp_len
            if len(self._buf) < end:
                break
            out.append(HttpPairRecord(bytes(self._buf[2:head]), bytes(self._buf[head + 4:end])))
            del self._buf[:end]
        return out


def decode_records(data: bytes) -> list[HttpPairRecord]:
    parser = RecordParser()
    records = parser.feed(data)
    if parser._buf:
        raise MalformedRecord(f"{len(parser._buf)} trailing bytes")
    return records


def normalize_url(url: str) -> str:
    """Cache key: lower-case scheme and host, no fragment, query kept."""
    parts = urlsplit(url.strip())
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), parts.path or "/", parts.query, ""))


def build_request(url: str, method: str = "GET") -> bytes:
    """Proxy-style request with an absolute-form target, as a browser sends to a proxy."""
    url = normalize_url(url)
    return f"{method} {url} HTTP/1.1\r\nHost: {urlsplit(url).netloc}\r\nConnection: close\r\n\r\n".encode()


def request_url(request: bytes) -> str:
    """The absolute URL named by a request line (``GET http://... HTTP/1.1``)."""
    line = request.split(b"\r\n", 1)[0].decode("latin-1")
    parts = line.split()
    if len(parts) < 2:
        raise MalformedRecord(f"bad request line {line!r}")
    target = parts[1]
    if target.startswith("/"):
        for header in request.split(b"\r\n")[1:]:
            name, _, value = header.decode("latin-1").partition(":")
            if name.strip().lower() == "host":
                return f"http://{value.strip()}{target}"
    return target


def build_response(body: bytes, content_type: str = "application/octet-stream", status: int = 200,
                   reason: str = "OK") -> bytes:
    head = f"HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {len(body)}\r\n\r\n"
    return head.encode() + body


def response_body(response: bytes) -> bytes:
    return response.partition(b"\r\n\r\n")[2]


@dataclass(frozen=True)
class Resource:
    body: bytes
    content_type: str = "application/octet-stream"


class Fetcher(Protocol):
    def fetch(self, url: str) -> Resource: ...


class FixtureFetcher:
    """Serves resources from memory; unknown URLs raise FetchFailure."""

    def __init__(self, resources: dict[str, Resource | bytes] | None = None):
        self.resources: dict[str, Resource] = {}
        self.requests: list[str] = []
        for url, res in (resources or {}).items():
            self.add(url, res)

    def add(self, url: str, res: Resource | bytes) -> None:
        if isinstance(res, (bytes, bytearray)):
            ctype = mimetypes.guess_type(urlsplit(url).path)[0] or "text/html"
            res = Resource(bytes(res), ctype)
        self.resources[normalize_url(url)] = res

    def fetch(self, url: str) -> Resource:
        self.requests.append(url)
        try:
            return self.resources[normalize_url(url)]
        except KeyError:
            raise FetchFailure(f"no such resource: {url}") from None


class _RefCollector(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.refs: list[str] = []

    def handle_starttag(self, tag, attrs):
        wanted = RESOURCE_ATTRS.get(tag)
        if not wanted:
            return
        attrs = dict(attrs)
        if tag == "link" and "stylesheet" not in (attrs.get("rel") or "").lower().split() \
                and "icon" not in (attrs.get("rel") or "").lower():
            return
        for name in wanted:
            value = attrs.get(name)
            if value and not value.startswith(("data:", "javascript:")):
                self.refs.append(value)

    handle_startendtag = handle_starttag


def embedded_urls(html: bytes, base_url: str) -> list[str]:
    """Absolute URLs of resources the page embeds, in document order, deduplicated."""
    collector = _RefCollector()
    collector.feed(html.decode("utf-8", errors="replace"))
    collector.close()
    seen, out = set(), []
    for ref in collector.refs:
        url = urljoin(base_url, ref)
        key = normalize_url(url)
        if key not in seen:
            seen.add(key)
            out.append(url)
    return out


def prefetch(url: str, fetcher: Fetcher) -> list[HttpPairRecord]:
    """Fetch a page and everything it embeds, ending with the End-of-Page sentinel.

    If the page itself cannot be fetched the result is a single 502 record.
    Embedded objects that fail are left out; the client then answers them
    with a gateway timeout.
    """
    try:
        page = fetcher.fetch(url)
    except FetchFailure as exc:
        logger.info("prefetch of %s failed: %s", url, exc)
        err = build_response(str(exc).encode(), "text/plain", 502, "Bad Gateway")
        return [HttpPairRecord(build_request(url), err), END_OF_PAGE]
    records = [HttpPairRecord(build_request(url), build_response(page.body, page.content_type))]
    if page.content_type.startswith("text/html"):
        for obj_url in embedded_urls(page.body, url):
            try:
                obj = fetcher.fetch(obj_url)
            except FetchFailure as exc:
                logger.info("skipping embedded object: %s", exc)
                continue
            records.append(HttpPairRecord(build_request(obj_url), build_response(obj.body, obj.content_type)))
    records.append(END_OF_PAGE)
    return records


_OBJECT_KINDS = (("img", ".png", "image/png"), ("script", ".js", "application/javascript"),
                 ("link", ".css", "text/css"), ("img", ".jpg", "image/jpeg"))


def synthetic_page(url: str, html_size: int = 20480, object_sizes: list[int] | None = None,
                   seed: int = 0, missing: int = 0) -> dict[str, Resource]:
    """A page whose html is exactly ``html_size`` bytes embedding objects of the given sizes.

    The default makes a 160 KiB page: 20 KiB of html plus seven 20 KiB
    objects.  ``missing`` extra references point at objects that do not
    exist.
    """
    rng = random.Random(seed)
    if object_sizes is None:
        object_sizes = [20480] * 7
    base = url.rstrip("/")
    resources: dict[str, Resource] = {}
    tags = []
    for i, size in enumerate(object_sizes):
        tag, ext, ctype = _OBJECT_KINDS[i % len(_OBJECT_KINDS)]
        obj_url = f"{base}/static/obj{i}{ext}"
        resources[obj_url] = Resource(rng.randbytes(size), ctype)
        tags.append(_tag_for(tag, f"/static/obj{i}{ext}"))
    for i in range(missing):
        tags.append(_tag_for("img", f"/static/missing{i}.png"))
    head = "<!DOCTYPE html>\n<html><head><title>fixture</title></head><body>\n" + "\n".join(tags) + "\n"
    tail = "</body></html>\n"
    filler_len = html_size - len(head) - len(tail)
    if filler_len < 0:
        raise ValueError(f"html_size {html_size} too small for {len(tags)} references")
    filler = "".join(rng.choice("abcdefghijklmnopqrstuvwxyz ") for _ in range(filler_len))
    if filler_len >= 7:
        filler = "<p>" + filler[: filler_len - 7] + "</p>"
    html = (head + filler + tail).encode()
    assert len(html) == html_size
    resources[url] = Resource(html, "text/html; charset=utf-8")
    return resources


def _tag_for(tag: str, path: str) -> str:
    if tag == "link":
        return f'<link rel="stylesheet" href="{path}">'
    return f'<{tag} src="{path}"></{tag}>' if tag == "script" else f'<{tag} src="{path}">'


class SyntheticSite(FixtureFetcher):
    """A fixture fetcher pre-loaded with :func:`synthetic_page` output."""

    def __init__(self, url: str = "http://news.example.org/", **kwargs):
        super().__init__(synthetic_page(url, **kwargs))
        self.page_url = url
