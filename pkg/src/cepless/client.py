"""Batching queue client.

The client owns two background workers per attached queue pair: a send
worker that drains a local buffer into PUSH commands (at most
``out_batch_size`` per flush, pipelined on one connection), and a receive
worker that polls with RANGE for up to ``in_batch_size`` payloads, hands
them to a callback, and acknowledges them with TRIM for exactly the count
it received.  Empty polls back off linearly (k * increment, capped) and any
successful transfer resets the backoff.

TRIM always follows a successful RANGE and uses the observed item count,
never the requested batch size: a producer may push between the two
commands, and trimming more than was read would drop events.  The server
preserves per-connection response order, so both commands ride the same
connection.
"""
from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from . import contract
from .wire import ProtocolError, Reply, ResponseParser, encode_command

__all__ = [
    "BatchingConfig",
    "LinearBackoff",
    "QueueConnection",
    "QueueClient",
    "ServerError",
    "ConnectionLost",
    "ShutdownTimeout",
]


class ServerError(Exception):
    """The server answered -ERR."""


class ConnectionLost(Exception):
    """The TCP stream died mid-exchange."""


class ShutdownTimeout(Exception):
    """stop() gave up before the send buffer drained."""

    def __init__(self, unsent: int):
        super().__init__(f"{unsent} payloads still unflushed at shutdown")
        self.unsent = unsent


@dataclass(frozen=True)
class BatchingConfig:
    """Tunables for the background workers.

    The backoff increment default is far above one nanosecond on purpose:
    sub-microsecond increments make an idle client hammer the server with
    RANGE polls for minutes before the cap bites.  Latency-sensitive runs
    can still pass increment_ns=1.
    """

    out_batch_size: int = 512
    in_batch_size: int = 4096
    backoff_increment_ns: int = 100_000
    backoff_cap_ns: int = 10_000_000
    send_buffer_limit: int = 2_000_000

    def __post_init__(self) -> None:
        if self.out_batch_size < 1 or self.in_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.backoff_increment_ns < 1 or self.backoff_cap_ns < self.backoff_increment_ns:
            raise ValueError("need 1 <= increment <= cap")


class LinearBackoff:
    """Linear backoff: the k-th consecutive idle poll sleeps k * increment,
    capped; any progress resets k to zero."""

    def __init__(self, increment_ns: int, cap_ns: int):
        if increment_ns < 1 or cap_ns < increment_ns:
            raise ValueError("need 1 <= increment <= cap")
        self.increment_ns = increment_ns
        self.cap_ns = cap_ns
        self._idle_polls = 0

    def next_sleep_ns(self) -> int:
        self._idle_polls += 1
        return min(self._idle_polls * self.increment_ns, self.cap_ns)

    def reset(self) -> None:
        self._idle_polls = 0

    @property
    def idle_polls(self) -> int:
        return self._idle_polls


class QueueConnection:
    """One TCP connection speaking the queue protocol.

    ``execute`` writes every command in one send and then reads exactly one
    reply per command, relying on the server's per-connection ordering.
    Not thread-safe; each worker owns its own connection.
    """

    def __init__(self, address: tuple[str, int], timeout: float = 10.0):
        self.address = address
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._parser = ResponseParser()

    def connect(self) -> None:
        self.close()
        try:
            sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise ConnectionLost(f"connect to {self.address}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._parser = ResponseParser()

    @property
    def connected(self) -> bool:
        return self._sock is not None

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def execute(self, commands: Sequence[Sequence[bytes]]) -> list[Reply]:
        """Send all commands pipelined, return their replies in order."""
        if self._sock is None:
            self.connect()
        assert self._sock is not None
        payload = b"".join(encode_command(*command) for command in commands)
        try:
            self._sock.sendall(payload)
            replies: list[Reply] = []
            while len(replies) < len(commands):
                reply = self._parser.next_reply()
                if reply is not None:
                    replies.append(reply)
                    continue
                data = self._sock.recv(262144)
                if not data:
                    raise ConnectionLost("server closed the connection")
                self._parser.feed(data)
            return replies
        except (OSError, ProtocolError) as exc:
            self.close()
            raise ConnectionLost(str(exc)) from exc

    # Convenience wrappers used by control paths; raise ServerError on -ERR.

    def one(self, *command: bytes) -> Reply:
        reply = self.execute([command])[0]
        if reply[0] == "err":
            raise ServerError(reply[1])
        return reply

    def ping(self) -> None:
        self.one(b"PING")

    def qcreate(self, name: str) -> None:
        self.one(b"QCREATE", name.encode())

    def qdelete(self, name: str) -> None:
        self.one(b"QDELETE", name.encode())

    def push(self, name: str, payload: bytes) -> int:
        return self.one(b"PUSH", name.encode(), payload)[1]

    def range(self, name: str, start: int, count: int) -> list[bytes]:
        return self.one(b"RANGE", name.encode(), str(start).encode(), str(count).encode())[1]

    def trim(self, name: str, count: int) -> int:
        return self.one(b"TRIM", name.encode(), str(count).encode())[1]

    def length(self, name: str) -> int:
        return self.one(b"LEN", name.encode())[1]


class ControlLog:
    """Cursor over an append-only control queue.

    Control queues are never trimmed: each side reads with RANGE at its own
    offset and reacts only to payloads meant for it, so the manager and the
    worker can share one queue without stealing each other's messages.
    """

    def __init__(self, conn, queue: str, offset: int = 0):
        self.conn = conn
        self.queue = queue
        self.offset = offset

    def post(self, payload: bytes) -> None:
        self.conn.push(self.queue, payload)

    def poll(self) -> list[bytes]:
        items = self.conn.range(self.queue, self.offset, 64)
        self.offset += len(items)
        return items


def _default_sleep(ns: int) -> None:
    time.sleep(ns / 1e9)


class QueueClient:
    """Host-side client for one operator's queue pair.

    ``send_queue`` receives payloads appended via :meth:`send`; a background
    worker flushes them in FIFO order.  ``recv_queue`` is polled by a second
    worker that passes each batch (a list of payload bytes, FIFO) to
    ``on_batch`` before acknowledging it.  Either queue may be None to run
    one-directional.

    The callback runs on the receive worker thread; a raised exception
    leaves the batch unacknowledged and it is redelivered on the next poll.
    """

    def __init__(
        self,
        address: tuple[str, int],
        *,
        send_queue: Optional[str] = None,
        recv_queue: Optional[str] = None,
        on_batch: Optional[Callable[[list[bytes]], None]] = None,
        config: BatchingConfig = BatchingConfig(),
        connection_factory: Optional[Callable[[], QueueConnection]] = None,
        sleep_ns: Callable[[int], None] = _default_sleep,
        name: str = "client",
    ):
        if recv_queue is not None and on_batch is None:
            raise ValueError("recv_queue requires an on_batch callback")
        if send_queue is None and recv_queue is None:
            raise ValueError("need at least one of send_queue, recv_queue")
        self.address = address
        self.send_queue = send_queue
        self.recv_queue = recv_queue
        self.on_batch = on_batch
        self.config = config
        self.name = name
        self._connection_factory = connection_factory or (lambda: QueueConnection(address))
        self._sleep_ns = sleep_ns

        self._buffer: list[bytes] = []
        self._buffer_lock = threading.Lock()
        self._buffer_ready = threading.Condition(self._buffer_lock)
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []
        self._started = False
        self._stopped = False

        self._send_conn = self._connection_factory() if send_queue else None
        self._recv_conn = self._connection_factory() if recv_queue else None
        self._send_backoff = LinearBackoff(config.backoff_increment_ns, config.backoff_cap_ns)
        self._recv_backoff = LinearBackoff(config.backoff_increment_ns, config.backoff_cap_ns)
        self._pending_batch: list[bytes] = []  # popped but not yet flushed
        self._redeliver: Optional[list[bytes]] = None  # received but callback failed

        # counters, read by tests and the bench harness
        self.sent = 0
        self.received = 0
        self.flushes = 0
        self.polls = 0
        self.reconnects = 0
        self.rejected = 0
        self.callback_errors = 0
        self.buffer_high_water = 0

    # -- producer side ---------------------------------------------------

    def send(self, payload: bytes) -> None:
        """Queue one payload for delivery. Never blocks on the network."""
        if self.send_queue is None:
            raise RuntimeError("client has no send queue")
        if self._stopped or self._stopping.is_set():
            raise RuntimeError("client is stopped")
        with self._buffer_ready:
            if len(self._buffer) >= self.config.send_buffer_limit:
                raise BufferError(
                    f"send buffer at limit ({self.config.send_buffer_limit} payloads)"
                )
            self._buffer.append(payload)
            if len(self._buffer) > self.buffer_high_water:
                self.buffer_high_water = len(self._buffer)
            self._buffer_ready.notify()

    def send_many(self, payloads: Iterable[bytes]) -> None:
        for payload in payloads:
            self.send(payload)

    def unsent(self) -> int:
        with self._buffer_lock:
            return len(self._buffer) + len(self._pending_batch)

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "QueueClient":
        if self._started:
            raise RuntimeError("client already started")
        self._started = True
        if self.send_queue is not None:
            thread = threading.Thread(
                target=self._send_loop, name=f"{self.name}-send", daemon=True
            )
            self._threads.append(thread)
            thread.start()
        if self.recv_queue is not None:
            thread = threading.Thread(
                target=self._recv_loop, name=f"{self.name}-recv", daemon=True
            )
            self._threads.append(thread)
            thread.start()
        return self

    def stop(self, timeout: float = 10.0) -> None:
        """Flush the send buffer, then stop both workers.

        Raises ShutdownTimeout if payloads remain unflushed when the
        deadline passes (the workers are abandoned as daemons).
        """
        if self._stopped:
            raise RuntimeError("client already stopped")
        self._stopped = True
        self._stopping.set()
        with self._buffer_ready:
            self._buffer_ready.notify_all()
        deadline = time.monotonic() + timeout
        for thread in self._threads:
            thread.join(max(0.0, deadline - time.monotonic()))
        for conn in (self._send_conn, self._recv_conn):
            if conn is not None:
                conn.close()
        leftover = self.unsent()
        if leftover:
            raise ShutdownTimeout(leftover)

    # -- send worker ------------------------------------------------------

    def _pop_batch(self) -> list[bytes]:
        with self._buffer_lock:
            if self._pending_batch:
                return self._pending_batch
            take = min(len(self._buffer), self.config.out_batch_size)
            self._pending_batch = self._buffer[:take]
            del self._buffer[:take]
            return self._pending_batch

    def _send_iteration(self) -> bool:
        """One flush attempt. Returns True if any payload left the client.

        Replies are inspected per payload: successes count as sent, payloads
        the server can never accept (oversize) are dropped and counted in
        ``rejected``, and payloads bounced by a full queue stay pending so a
        later attempt retries them once the consumer has trimmed.
        """
        assert self.send_queue is not None and self._send_conn is not None
        batch = self._pop_batch()
        if not batch:
            return False
        queue = self.send_queue.encode()
        commands = [(b"PUSH", queue, payload) for payload in batch]
        replies = self._send_conn.execute(commands)
        retry: list[bytes] = []
        sent = dropped = 0
        for payload, reply in zip(batch, replies):
            if reply[0] != "err":
                sent += 1
            elif "full" in reply[1]:
                retry.append(payload)
            else:
                dropped += 1
        self.flushes += 1
        self.sent += sent
        self.rejected += dropped
        with self._buffer_lock:
            self._pending_batch = retry
        return sent > 0 or dropped > 0

    def _send_loop(self) -> None:
        stalled = 0  # consecutive no-progress passes while stopping
        while True:
            try:
                progressed = self._send_iteration()
            except ConnectionLost:
                self.reconnects += 1
                progressed = False
            if progressed:
                self._send_backoff.reset()
                stalled = 0
                continue
            if self._stopping.is_set():
                if not self.unsent():
                    return
                stalled += 1
                if stalled >= 8:
                    return  # stop() reports the stranded payloads
                self._sleep_ns(self._send_backoff.next_sleep_ns())
                continue
            if self.unsent():
                # connection down or queue full: cool off, then retry
                self._sleep_ns(self._send_backoff.next_sleep_ns())
                continue
            with self._buffer_ready:
                if not self._buffer and not self._stopping.is_set():
                    self._buffer_ready.wait(self._send_backoff.next_sleep_ns() / 1e9)

    # -- receive worker ---------------------------------------------------

    def _recv_iteration(self) -> bool:
        """One poll: RANGE, deliver, TRIM. Returns True if events moved."""
        assert self.recv_queue is not None and self._recv_conn is not None
        assert self.on_batch is not None
        if self._redeliver is not None:
            batch = self._redeliver
            self.on_batch(list(batch))  # may raise; stays queued for retry
            self._redeliver = None
            self._recv_conn.trim(self.recv_queue, len(batch))
            self.received += len(batch)
            return True
        self.polls += 1
        reply = self._recv_conn.execute(
            [(b"RANGE", self.recv_queue.encode(), b"0", str(self.config.in_batch_size).encode())]
        )[0]
        if reply[0] == "err":
            raise ServerError(reply[1])
        batch = reply[1]
        if not batch:
            return False
        try:
            self.on_batch(list(batch))
        except Exception:
            self.callback_errors += 1
            self._redeliver = batch
            raise
        self._recv_conn.trim(self.recv_queue, len(batch))
        self.received += len(batch)
        return True

    def _recv_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                progressed = self._recv_iteration()
            except ConnectionLost:
                self.reconnects += 1
                # Batch was not trimmed; it will be redelivered by RANGE.
                self._redeliver = None
                self._sleep_ns(self._recv_backoff.next_sleep_ns())
                continue
            except ServerError:
                self._sleep_ns(self._recv_backoff.next_sleep_ns())
                continue
            except Exception:
                # Callback failure: leave the batch unacknowledged, retry
                # after a backoff so a persistent bug cannot spin the CPU.
                self._sleep_ns(self._recv_backoff.next_sleep_ns())
                continue
            if progressed:
                self._recv_backoff.reset()
            else:
                self._sleep_ns(self._recv_backoff.next_sleep_ns())
