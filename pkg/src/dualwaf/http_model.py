"""Raw HTTP request parsing and canonical inspection payloads.

Both detection layers look at the same text: the request path, raw query,
body and a small set of header values, joined by single spaces and decoded
until percent/entity escapes stop changing it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence
from urllib.parse import unquote, unquote_plus

from .errors import MalformedRequest

DEFAULT_INSPECTED_HEADERS = ("Cookie", "User-Agent", "Referer")
DEFAULT_MAX_ROUNDS = 5

_TOKEN_RE = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")
_LINE_RE = re.compile(r"([^\n]*?)(\r\n|\n)")
_ENTITY_RE = re.compile(r"&(lt|gt|amp|quot);|&#([0-9]{1,7});|&#[xX]([0-9a-fA-F]{1,6});")
_NAMED_ENTITIES = {"lt": "<", "gt": ">", "amp": "&", "quot": '"'}
_SURROGATE_RE = re.compile("[\ud800-\udfff]")


@dataclass(frozen=True)
class HttpRequest:
    method: str
    target: str
    version: str
    path: str
    raw_query: str
    query: tuple[tuple[str, str], ...]
    headers: tuple[tuple[str, str], ...]
    body: bytes
    raw: bytes
    # raw header lines and the terminator after every head line (request
    # line, each header, blank separator); "" marks a missing terminator
    header_lines: tuple[str, ...] = field(default=(), repr=False)
    line_breaks: tuple[str, ...] = field(default=(), repr=False)

    def header(self, name: str, default: str | None = None) -> str | None:
        lname = name.lower()
        for k, v in self.headers:
            if k.lower() == lname:
                return v
        return default

    def header_values(self, name: str) -> list[str]:
        lname = name.lower()
        return [v for k, v in self.headers if k.lower() == lname]

    @property
    def request_line(self) -> str:
        return f"{self.method} {self.target} {self.version}"

    def serialize(self) -> bytes:
        """Rebuild the request bytes from the parsed parts."""
        lines = [self.request_line, *self.header_lines]
        if len(self.line_breaks) > len(lines):
            lines.append("")
        out = []
        for line, brk in zip(lines, self.line_breaks):
            out.append(line)
            out.append(brk)
        head = "".join(out).encode("utf-8", "surrogateescape")
        return head + self.body

    def body_text(self) -> str:
        return _printable_ascii(self.body)


def split_query(raw_query: str) -> tuple[tuple[str, str], ...]:
    pairs = []
    for segment in raw_query.split("&"):
        if not segment:
            continue
        name, _, value = segment.partition("=")
        pairs.append((name, value))
    return tuple(pairs)


def parse_raw_request(text: str | bytes) -> HttpRequest:
    """Parse an HTTP/1.x request.

    Accepts ``str`` or ``bytes``; ``str`` input is UTF-8 encoded first. Raises
    :class:`MalformedRequest` for anything that is not a request.
    """
    if isinstance(text, str):
        try:
            raw = text.encode("utf-8", "surrogateescape")
        except UnicodeEncodeError as exc:
            raise MalformedRequest(f"unencodable request text: {exc}") from None
    elif isinstance(text, (bytes, bytearray, memoryview)):
        raw = bytes(text)
    else:
        raise TypeError(f"expected str or bytes, got {type(text).__name__}")

    sep = _find_head_end(raw)
    if sep is None:
        head_bytes, body = raw, b""
    else:
        head_bytes, body = raw[:sep], raw[sep:]
    head = head_bytes.decode("utf-8", "surrogateescape")

    lines: list[str] = []
    breaks: list[str] = []
    pos = 0
    for m in _LINE_RE.finditer(head):
        lines.append(m.group(1))
        breaks.append(m.group(2))
        pos = m.end()
    if pos < len(head):
        lines.append(head[pos:])
        breaks.append("")
    if not lines:
        raise MalformedRequest("empty request")

    request_line = lines[0]
    parts = request_line.split(" ")
    if len(parts) < 3:
        raise MalformedRequest(f"request line needs 3 parts: {request_line[:80]!r}")
    method, version = parts[0], parts[-1]
    target = " ".join(parts[1:-1])
    if not version.startswith("HTTP/"):
        raise MalformedRequest(f"bad HTTP version: {version[:40]!r}")
    if not _TOKEN_RE.match(method):
        raise MalformedRequest(f"bad method token: {method[:40]!r}")

    header_lines = lines[1:]
    # a trailing empty line is the head/body separator, not a header
    if header_lines and header_lines[-1] == "" and sep is not None:
        header_lines = header_lines[:-1]
    headers = []
    for line in header_lines:
        name, colon, value = line.partition(":")
        if not colon or not name or name != name.strip():
            raise MalformedRequest(f"bad header line: {line[:80]!r}")
        headers.append((name, value.strip(" \t")))

    path, _, raw_query = target.partition("?")
    return HttpRequest(
        method=method,
        target=target,
        version=version,
        path=path,
        raw_query=raw_query,
        query=split_query(raw_query),
        headers=tuple(headers),
        body=body,
        raw=raw,
        header_lines=tuple(header_lines),
        line_breaks=tuple(breaks),
    )


def _find_head_end(raw: bytes) -> int | None:
    """Offset just past the blank line ending the head, or None."""
    best = None
    for marker in (b"\r\n\r\n", b"\n\n", b"\r\n\n", b"\n\r\n"):
        i = raw.find(marker)
        if i >= 0 and (best is None or i < best[0]):
            best = (i, i + len(marker))
    if raw.startswith(b"\r\n") or raw.startswith(b"\n"):
        # blank first line: no request line at all; let the parser reject it
        return None
    return None if best is None else best[1]


def _decode_entities(s: str) -> str:
    def repl(m: re.Match) -> str:
        if m.group(1):
            return _NAMED_ENTITIES[m.group(1)]
        code = int(m.group(2)) if m.group(2) else int(m.group(3), 16)
        if code == 0 or code > 0x10FFFF or 0xD800 <= code <= 0xDFFF:
            return m.group(0)
        return chr(code)

    return _ENTITY_RE.sub(repl, s)


def decode_once(s: str, plus_as_space: bool = False) -> str:
    """One decoding pass: percent escapes, then HTML entities."""
    s = unquote_plus(s, errors="replace") if plus_as_space else unquote(s, errors="replace")
    return _decode_entities(s)


def decode_fixpoint(s: str, max_rounds: int = DEFAULT_MAX_ROUNDS,
                    plus_as_space: bool = False) -> tuple[str, int]:
    """Decode repeatedly until a pass changes nothing or ``max_rounds`` passes ran.

    Returns the decoded string and the number of passes applied.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        out = decode_once(s, plus_as_space)
        if out == s:
            break
        s = out
    return s, rounds


@dataclass(frozen=True)
class InspectionPayload:
    text: str
    decode_rounds: int


def _printable_ascii(data: bytes) -> str:
    return "".join(chr(b) if 0x20 <= b <= 0x7E else "�" for b in data)


def _scrub(s: str) -> str:
    return _SURROGATE_RE.sub("�", s)


def inspection_components(req: HttpRequest,
                          header_allowlist: Sequence[str] = DEFAULT_INSPECTED_HEADERS
                          ) -> list[tuple[str, bool]]:
    """(component, plus_as_space) pairs in the fixed inspection order."""
    comps = [(_scrub(req.path), False), (_scrub(req.raw_query), True),
             (req.body_text(), True)]
    for name in header_allowlist:
        for value in req.header_values(name):
            comps.append((_scrub(value), False))
    return [(c, plus) for c, plus in comps if c]


def inspection_payload(req: HttpRequest,
                       header_allowlist: Iterable[str] = DEFAULT_INSPECTED_HEADERS,
                       max_rounds: int = DEFAULT_MAX_ROUNDS) -> InspectionPayload:
    decoded = []
    rounds = 1
    for comp, plus in inspection_components(req, tuple(header_allowlist)):
        text, r = decode_fixpoint(comp, max_rounds, plus_as_space=plus)
        decoded.append(text)
        rounds = max(rounds, r)
    return InspectionPayload(" ".join(decoded), rounds)
