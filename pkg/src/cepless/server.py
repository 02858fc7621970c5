"""In-memory event queue server.

Holds named FIFO queues of opaque byte payloads and serves them over TCP
with the framing in :mod:`cepless.wire`.  Commands:

    PING                        -> +PONG
    QCREATE <name>              -> +OK            (idempotent)
    QDELETE <name>              -> +OK            (-ERR if unknown)
    PUSH <name> <payload>       -> :<len after>   (auto-creates the queue)
    RANGE <name> <start> <n>    -> array of up to n payloads from offset
    TRIM <name> <n>             -> :<removed>     (drops from the head)
    LEN <name>                  -> :<len>

RANGE and LEN treat unknown queues as empty, so consumers can poll before
their producer has pushed anything.  Responses on one connection always come
back in request order, which is what clients rely on when pipelining.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import os
import socket
import threading
from collections import deque
from typing import Optional

from . import contract
from .events import is_valid_queue_name
from .wire import OK_REPLY, ProtocolError, RequestParser, encode_array, encode_error, encode_int

__all__ = ["QueueServer", "QueueStore", "DEFAULT_MAX_QUEUE_ITEMS", "DEFAULT_MAX_PAYLOAD", "main"]

log = logging.getLogger(__name__)

DEFAULT_MAX_QUEUE_ITEMS = 10_000_000
DEFAULT_MAX_PAYLOAD = 1_048_576

_PONG_REPLY = b"+PONG\r\n"


class CommandError(Exception):
    """Maps to an -ERR reply; the connection stays usable."""


class QueueStore:
    """Named FIFO queues behind one lock.

    A single lock is deliberate: every operation is a short append, slice,
    or popleft, so lock hold times are tiny and fairness across connections
    matters more than parallelism inside the store.
    """

    def __init__(self, max_items: int = DEFAULT_MAX_QUEUE_ITEMS):
        self._queues: dict[str, deque[bytes]] = {}
        self._lock = threading.Lock()
        self.max_items = max_items

    def create(self, name: str) -> None:
        with self._lock:
            self._queues.setdefault(name, deque())

    def delete(self, name: str) -> None:
        with self._lock:
            if self._queues.pop(name, None) is None:
                raise CommandError(f"no such queue '{name}'")

    def push(self, name: str, payload: bytes) -> int:
        with self._lock:
            queue = self._queues.get(name)
            if queue is None:
                queue = self._queues[name] = deque()
            if len(queue) >= self.max_items:
                raise CommandError(f"queue '{name}' full ({self.max_items} items)")
            queue.append(payload)
            return len(queue)

    def range(self, name: str, start: int, count: int) -> list[bytes]:
        with self._lock:
            queue = self._queues.get(name)
            if queue is None or start >= len(queue):
                return []
            return list(itertools.islice(queue, start, start + count))

    def trim(self, name: str, count: int) -> int:
        with self._lock:
            queue = self._queues.get(name)
            if queue is None:
                return 0
            removed = min(count, len(queue))
            if removed == len(queue):
                queue.clear()
            else:
                for _ in range(removed):
                    queue.popleft()
            return removed

    def length(self, name: str) -> int:
        with self._lock:
            queue = self._queues.get(name)
            return 0 if queue is None else len(queue)

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._queues)


def _int_arg(raw: bytes, what: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise CommandError(f"{what} is not an integer") from None


def _name_arg(raw: bytes) -> str:
    try:
        name = raw.decode("ascii")
    except UnicodeDecodeError:
        raise CommandError("invalid queue name") from None
    if not is_valid_queue_name(name):
        raise CommandError(f"invalid queue name '{name}'")
    return name


class QueueServer:
    """TCP front end over a QueueStore."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = contract.DEFAULT_QUEUE_PORT,
        *,
        max_items: int = DEFAULT_MAX_QUEUE_ITEMS,
        max_payload: int = DEFAULT_MAX_PAYLOAD,
    ):
        self.store = QueueStore(max_items=max_items)
        self.max_payload = max_payload
        self._host = host
        self._port = port
        self._sock: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._stopped = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        if self._sock is None:
            raise RuntimeError("server not started")
        return self._sock.getsockname()[:2]

    @property
    def endpoint(self) -> str:
        return contract.format_address(self.address)

    def start(self) -> "QueueServer":
        if self._sock is not None:
            raise RuntimeError("server already started")
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self._host, self._port))
        sock.listen(128)
        # A blocked accept() does not reliably wake when another thread
        # closes the socket, so poll with a short timeout instead.
        sock.settimeout(0.25)
        self._sock = sock
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="queue-accept", daemon=True
        )
        self._accept_thread.start()
        log.info("queue server listening on %s", self.endpoint)
        return self

    def stop(self) -> None:
        self._stopped.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        with self._conns_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                conn.close()
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)

    def serve_forever(self) -> None:
        if self._sock is None:
            self.start()
        self._stopped.wait()

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while not self._stopped.is_set():
            try:
                conn, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._conns_lock:
                self._conns.add(conn)
            thread = threading.Thread(
                target=self._serve_connection,
                args=(conn, peer),
                name=f"queue-conn-{peer[1]}",
                daemon=True,
            )
            thread.start()

    def _serve_connection(self, conn: socket.socket, peer: tuple) -> None:
        parser = RequestParser()
        try:
            while True:
                try:
                    data = conn.recv(262144)
                except OSError:
                    return
                if not data:
                    return
                parser.feed(data)
                out = bytearray()
                while True:
                    try:
                        request = parser.next_request()
                    except ProtocolError as exc:
                        out += encode_error(f"protocol: {exc}")
                        try:
                            conn.sendall(out)
                        except OSError:
                            pass
                        return
                    if request is None:
                        break
                    out += self._dispatch(request)
                if out:
                    try:
                        conn.sendall(out)
                    except OSError:
                        return
        finally:
            with self._conns_lock:
                self._conns.discard(conn)
            try:
                conn.close()
            except OSError:
                pass

    def _dispatch(self, request: list[bytes]) -> bytes:
        if not request:
            return encode_error("empty request")
        verb = request[0].upper()
        args = request[1:]
        try:
            if verb == b"PUSH":
                self._expect(verb, args, 2)
                payload = args[1]
                if len(payload) > self.max_payload:
                    raise CommandError(
                        f"payload of {len(payload)} bytes exceeds limit {self.max_payload}"
                    )
                return encode_int(self.store.push(_name_arg(args[0]), payload))
            if verb == b"RANGE":
                self._expect(verb, args, 3)
                start = _int_arg(args[1], "start")
                count = _int_arg(args[2], "count")
                if start < 0 or count < 0:
                    raise CommandError("start and count must be non-negative")
                return encode_array(self.store.range(_name_arg(args[0]), start, count))
            if verb == b"TRIM":
                self._expect(verb, args, 2)
                count = _int_arg(args[1], "count")
                if count < 0:
                    raise CommandError("count must be non-negative")
                return encode_int(self.store.trim(_name_arg(args[0]), count))
            if verb == b"LEN":
                self._expect(verb, args, 1)
                return encode_int(self.store.length(_name_arg(args[0])))
            if verb == b"QCREATE":
                self._expect(verb, args, 1)
                self.store.create(_name_arg(args[0]))
                return OK_REPLY
            if verb == b"QDELETE":
                self._expect(verb, args, 1)
                self.store.delete(_name_arg(args[0]))
                return OK_REPLY
            if verb == b"PING":
                self._expect(verb, args, 0)
                return _PONG_REPLY
            raise CommandError(f"unknown command {verb.decode('ascii', 'replace')!r}")
        except CommandError as exc:
            return encode_error(str(exc))

    @staticmethod
    def _expect(verb: bytes, args: list[bytes], count: int) -> None:
        if len(args) != count:
            raise CommandError(
                f"wrong number of arguments for {verb.decode('ascii', 'replace').lower()!r}"
            )


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cepless-queue-server", description="In-memory event queue server."
    )
    parser.add_argument(
        "--bind",
        default=os.environ.get(contract.ENV_QUEUE_ADDR, f"127.0.0.1:{contract.DEFAULT_QUEUE_PORT}"),
        help="host:port to listen on (default %(default)s)",
    )
    parser.add_argument(
        "--max-queue-items",
        type=int,
        default=DEFAULT_MAX_QUEUE_ITEMS,
        help="per-queue item cap; further pushes are rejected (default %(default)s)",
    )
    parser.add_argument(
        "--max-payload-bytes",
        type=int,
        default=DEFAULT_MAX_PAYLOAD,
        help="largest accepted payload (default %(default)s)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    host, port = contract.parse_address(args.bind, contract.DEFAULT_QUEUE_PORT)
    server = QueueServer(
        host, port, max_items=args.max_queue_items, max_payload=args.max_payload_bytes
    )
    server.start()
    print(f"queue server on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
