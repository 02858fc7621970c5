"""Wire framing for the queue protocol.

Requests are arrays of bulk strings: ``*<n>\\r\\n`` then ``n`` items of
``$<len>\\r\\n<bytes>\\r\\n``.  Responses are ``+OK\\r\\n``, ``:<int>\\r\\n``,
``-ERR <msg>\\r\\n``, or an array of bulk strings.  Both parsers are
incremental so a connection can feed raw socket reads of any size and pull
out complete frames as they become available, which is what makes
pipelining work.
"""
from __future__ import annotations

from typing import Iterable, Optional

__all__ = [
    "ProtocolError",
    "encode_command",
    "encode_array",
    "encode_int",
    "encode_error",
    "OK_REPLY",
    "RequestParser",
    "ResponseParser",
    "Reply",
]

MAX_BULK_LEN = 8 * 1024 * 1024
MAX_REQUEST_ITEMS = 64
MAX_REPLY_ITEMS = 1_048_576

OK_REPLY = b"+OK\r\n"


class ProtocolError(Exception):
    """The byte stream violates the framing rules; the connection is dead."""


def encode_command(*args: bytes) -> bytes:
    """Frame one request (verb plus arguments) as an array of bulk strings."""
    return encode_array(args)


def encode_array(items: Iterable[bytes]) -> bytes:
    parts = []
    count = 0
    for item in items:
        parts.append(b"$%d\r\n%s\r\n" % (len(item), item))
        count += 1
    return b"*%d\r\n" % count + b"".join(parts)


def encode_int(value: int) -> bytes:
    return b":%d\r\n" % value


def encode_error(message: str) -> bytes:
    clean = message.replace("\r\n", " ").replace("\r", " ").replace("\n", " ")
    return ("-ERR " + clean + "\r\n").encode("utf-8")


# A decoded response: ("ok", None) | ("int", n) | ("err", message) | ("array", [bytes...])
Reply = tuple


class _Buffer:
    """Byte accumulator with line/extent extraction."""

    __slots__ = ("_data", "_pos")

    def __init__(self) -> None:
        self._data = bytearray()
        self._pos = 0

    def feed(self, data: bytes) -> None:
        self._data += data

    def _compact(self) -> None:
        if self._pos > 65536 and self._pos * 2 > len(self._data):
            del self._data[: self._pos]
            self._pos = 0

    def take_line(self) -> Optional[bytes]:
        """Return the next CRLF-terminated line without the terminator."""
        idx = self._data.find(b"\r\n", self._pos)
        if idx < 0:
            if len(self._data) - self._pos > MAX_BULK_LEN:
                raise ProtocolError("line exceeds maximum frame size")
            return None
        line = bytes(self._data[self._pos : idx])
        self._pos = idx + 2
        self._compact()
        return line

    def take_exact(self, n: int) -> Optional[bytes]:
        """Return n bytes plus their trailing CRLF, or None if incomplete."""
        if len(self._data) - self._pos < n + 2:
            return None
        chunk = bytes(self._data[self._pos : self._pos + n])
        if self._data[self._pos + n : self._pos + n + 2] != b"\r\n":
            raise ProtocolError("bulk string not terminated by CRLF")
        self._pos += n + 2
        self._compact()
        return chunk

    def pending(self) -> int:
        return len(self._data) - self._pos


def _parse_count(line: bytes, prefix: int, what: str, limit: int) -> int:
    if not line or line[0] != prefix:
        raise ProtocolError(f"expected {what} header, got {line[:32]!r}")
    try:
        count = int(line[1:])
    except ValueError as exc:
        raise ProtocolError(f"bad {what} length {line[1:32]!r}") from exc
    if count < 0 or count > limit:
        raise ProtocolError(f"{what} length {count} out of range")
    return count


class RequestParser:
    """Incremental parser for the server side of a connection."""

    def __init__(self) -> None:
        self._buf = _Buffer()
        self._items: list[bytes] = []
        self._want: Optional[int] = None  # items remaining in current array
        self._bulk: Optional[int] = None  # byte length of current bulk

    def feed(self, data: bytes) -> None:
        self._buf.feed(data)

    def next_request(self) -> Optional[list[bytes]]:
        """Return the next complete request, or None if more bytes are needed.

        Raises ProtocolError on malformed input; the caller should reply
        with an error and close the connection.
        """
        while True:
            if self._want is None:
                line = self._buf.take_line()
                if line is None:
                    return None
                self._want = _parse_count(line, ord("*"), "array", MAX_REQUEST_ITEMS)
                self._items = []
            if self._want == 0:
                request, self._items, self._want = self._items, [], None
                return request
            if self._bulk is None:
                line = self._buf.take_line()
                if line is None:
                    return None
                self._bulk = _parse_count(line, ord("$"), "bulk", MAX_BULK_LEN)
            chunk = self._buf.take_exact(self._bulk)
            if chunk is None:
                return None
            self._items.append(chunk)
            self._bulk = None
            self._want -= 1


class ResponseParser:
    """Incremental parser for the client side of a connection."""

    def __init__(self) -> None:
        self._buf = _Buffer()
        self._items: list[bytes] = []
        self._want: Optional[int] = None
        self._bulk: Optional[int] = None

    def feed(self, data: bytes) -> None:
        self._buf.feed(data)

    def next_reply(self) -> Optional[Reply]:
        while True:
            if self._want is None:
                line = self._buf.take_line()
                if line is None:
                    return None
                kind = line[:1]
                if kind == b"+":
                    return ("ok", bytes(line[1:]))
                if kind == b":":
                    try:
                        return ("int", int(line[1:]))
                    except ValueError as exc:
                        raise ProtocolError(f"bad integer reply {line!r}") from exc
                if kind == b"-":
                    return ("err", line[1:].decode("utf-8", "replace"))
                self._want = _parse_count(line, ord("*"), "array", MAX_REPLY_ITEMS)
                self._items = []
            if self._want == 0:
                items, self._items, self._want = self._items, [], None
                return ("array", items)
            if self._bulk is None:
                line = self._buf.take_line()
                if line is None:
                    return None
                self._bulk = _parse_count(line, ord("$"), "bulk", MAX_BULK_LEN)
            chunk = self._buf.take_exact(self._bulk)
            if chunk is None:
                return None
            self._items.append(chunk)
            self._bulk = None
            self._want -= 1
