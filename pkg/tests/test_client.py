import math
import random
import threading
import time

import pytest

from cepless.client import (
    BatchingConfig,
    LinearBackoff,
    QueueClient,
    QueueConnection,
    ShutdownTimeout,
)
from cepless.server import QueueStore

from .fakes import FakeConnection, run_consumer_schedule


class TestLinearBackoff:
    def test_progression_and_cap(self):
        backoff = LinearBackoff(increment_ns=100, cap_ns=450)
        assert [backoff.next_sleep_ns() for _ in range(7)] == [
            100, 200, 300, 400, 450, 450, 450,
        ]

    def test_reset(self):
        backoff = LinearBackoff(increment_ns=10, cap_ns=1000)
        backoff.next_sleep_ns()
        backoff.next_sleep_ns()
        backoff.reset()
        assert backoff.next_sleep_ns() == 10

    def test_validation(self):
        with pytest.raises(ValueError):
            LinearBackoff(0, 10)
        with pytest.raises(ValueError):
            LinearBackoff(10, 5)

    def test_long_run_is_capped_never_overflowing(self):
        backoff = LinearBackoff(increment_ns=1, cap_ns=50)
        values = [backoff.next_sleep_ns() for _ in range(10_000)]
        assert values[:50] == list(range(1, 51))
        assert set(values[50:]) == {50}


def _manual_client(store, **kwargs) -> QueueClient:
    """Client wired to an in-process store; iterations driven by the test."""
    kwargs.setdefault("connection_factory", lambda: FakeConnection(store))
    kwargs.setdefault("address", ("fake", 0))
    return QueueClient(**kwargs)


class TestSendWorker:
    def test_flush_count_is_ceil_n_over_b(self):
        store = QueueStore()
        for total, batch in [(1037, 128), (1, 128), (128, 128), (129, 128), (640, 64)]:
            client = _manual_client(
                store,
                send_queue="s-in",
                config=BatchingConfig(out_batch_size=batch),
            )
            for i in range(total):
                client.send(b"p%d" % i)
            while client._send_iteration():
                pass
            assert client.flushes == math.ceil(total / batch)
            assert client.sent == total
            assert store.length("s-in") == total
            store.trim("s-in", total)

    def test_fifo_order_preserved(self):
        store = QueueStore()
        client = _manual_client(
            store, send_queue="f-in", config=BatchingConfig(out_batch_size=7)
        )
        payloads = [b"ev%04d" % i for i in range(100)]
        client.send_many(payloads)
        while client._send_iteration():
            pass
        assert store.range("f-in", 0, 1000) == payloads

    def test_each_flush_is_one_pipelined_execute(self):
        store = QueueStore()
        client = _manual_client(
            store, send_queue="b-in", config=BatchingConfig(out_batch_size=10)
        )
        client.send_many(b"x%d" % i for i in range(25))
        while client._send_iteration():
            pass
        conn = client._send_conn
        sizes = [len(cmds) for cmds in conn.executed]
        assert sizes == [10, 10, 5]

    def test_buffer_limit(self):
        client = _manual_client(
            QueueStore(),
            send_queue="l-in",
            config=BatchingConfig(send_buffer_limit=3),
        )
        for i in range(3):
            client.send(b"x")
        with pytest.raises(BufferError):
            client.send(b"x")

    def test_full_queue_bounces_are_retried_in_order(self):
        store = QueueStore(max_items=2)
        client = _manual_client(
            store, send_queue="fq-in", config=BatchingConfig(out_batch_size=10)
        )
        client.send_many([b"a", b"b", b"c", b"d"])
        assert client._send_iteration() is True  # a,b land; c,d bounce
        assert store.range("fq-in", 0, 10) == [b"a", b"b"]
        assert client.unsent() == 2
        assert client._send_iteration() is False  # still full, nothing moves
        store.trim("fq-in", 2)
        assert client._send_iteration() is True
        assert store.range("fq-in", 0, 10) == [b"c", b"d"]
        assert client.rejected == 0
        assert client.sent == 4


class TestReceiveWorker:
    def test_trim_uses_observed_count_not_batch_size(self):
        store = QueueStore()
        got = []
        client = _manual_client(
            store,
            recv_queue="r-in",
            on_batch=got.extend,
            config=BatchingConfig(in_batch_size=100),
        )
        for i in range(5):
            store.push("r-in", b"%d" % i)
        assert client._recv_iteration() is True
        assert got == [b"0", b"1", b"2", b"3", b"4"]
        assert store.length("r-in") == 0
        trims = [c for cmds in client._recv_conn.executed for c in cmds if c[0] == b"TRIM"]
        assert trims[-1][2] == b"5"

    def test_push_between_range_and_trim_is_not_lost(self):
        # The adversarial interleaving: producer lands an event after the
        # consumer's RANGE but before its TRIM.  A trim of the observed
        # count must leave the late event queued.
        store = QueueStore()
        got = []
        late = []

        def interleave(command):
            if command[0] == b"TRIM" and not late:
                late.append(True)
                store.push("race-in", b"late")

        client = QueueClient(
            address=("fake", 0),
            recv_queue="race-in",
            on_batch=got.extend,
            config=BatchingConfig(in_batch_size=100),
            connection_factory=lambda: FakeConnection(store, before_command=interleave),
        )
        store.push("race-in", b"early1")
        store.push("race-in", b"early2")
        assert client._recv_iteration() is True
        assert got == [b"early1", b"early2"]
        assert store.range("race-in", 0, 10) == [b"late"]
        assert client._recv_iteration() is True
        assert got == [b"early1", b"early2", b"late"]

    def test_empty_poll_returns_false(self):
        client = _manual_client(QueueStore(), recv_queue="z-in", on_batch=lambda b: None)
        assert client._recv_iteration() is False

    def test_callback_failure_leaves_batch_unacknowledged(self):
        store = QueueStore()
        calls = []

        def flaky(batch):
            calls.append(list(batch))
            if len(calls) == 1:
                raise RuntimeError("downstream hiccup")

        client = _manual_client(store, recv_queue="c-in", on_batch=flaky)
        store.push("c-in", b"a")
        store.push("c-in", b"b")
        with pytest.raises(RuntimeError):
            client._recv_iteration()
        assert store.length("c-in") == 2  # not trimmed
        assert client._recv_iteration() is True
        assert store.length("c-in") == 0
        assert calls == [[b"a", b"b"], [b"a", b"b"]]
        assert client.callback_errors == 1


class TestSchedules:
    """Randomized producer/consumer interleavings against the real store."""

    def test_exactly_once_under_random_schedules(self):
        rng = random.Random(20260817)
        for _ in range(300):
            batch = rng.choice([1, 2, 3, 8, 64])
            total = rng.randint(1, 120)
            produced, delivered = run_consumer_schedule(rng, total, batch)
            assert delivered == produced

    def test_crash_before_trim_duplicates_but_never_loses(self):
        rng = random.Random(99)
        for _ in range(120):
            produced, delivered = run_consumer_schedule(
                rng, rng.randint(1, 80), rng.choice([1, 3, 16]), crash_rate=0.3
            )
            seen = set()
            deduped = []
            for item in delivered:
                if item not in seen:
                    seen.add(item)
                    deduped.append(item)
            assert deduped == produced
            assert len(delivered) >= len(produced)


class TestLiveClient:
    """Threaded client against a real server over TCP."""

    def test_round_trip_and_stop_drains(self, queue_server):
        got = []
        done = threading.Event()
        payloads = [b"ev%05d" % i for i in range(1000)]

        def on_batch(batch):
            got.extend(batch)
            if len(got) >= len(payloads):
                done.set()

        client = QueueClient(
            queue_server.address,
            send_queue="live-in",
            recv_queue="live-in",
            on_batch=on_batch,
            config=BatchingConfig(out_batch_size=64, in_batch_size=256),
        ).start()
        client.send_many(payloads)
        assert done.wait(10), f"only {len(got)} of {len(payloads)} arrived"
        client.stop()
        assert got == payloads
        assert client.sent == len(payloads)
        assert client.received == len(payloads)

    def test_stop_flushes_pending_sends(self, queue_server):
        client = QueueClient(
            queue_server.address,
            send_queue="drain-in",
            config=BatchingConfig(out_batch_size=16),
        ).start()
        client.send_many(b"x%d" % i for i in range(500))
        client.stop()
        check = QueueConnection(queue_server.address)
        assert check.length("drain-in") == 500
        check.close()

    def test_double_stop_and_send_after_stop(self, queue_server):
        client = QueueClient(queue_server.address, send_queue="ds-in").start()
        client.stop()
        with pytest.raises(RuntimeError, match="already stopped"):
            client.stop()
        with pytest.raises(RuntimeError, match="stopped"):
            client.send(b"x")

    def test_reconnect_after_server_restart(self):
        from cepless.server import QueueServer

        server = QueueServer("127.0.0.1", 0).start()
        port = server.address[1]
        got = []
        client = QueueClient(
            ("127.0.0.1", port),
            send_queue="rc-in",
            recv_queue="rc-in",
            on_batch=got.extend,
            config=BatchingConfig(out_batch_size=8, in_batch_size=8),
        ).start()
        client.send_many(b"a%d" % i for i in range(20))
        deadline = time.monotonic() + 5
        while len(got) < 20 and time.monotonic() < deadline:
            time.sleep(0.01)
        assert len(got) == 20

        server.stop()
        time.sleep(0.1)
        server2 = QueueServer("127.0.0.1", port).start()
        try:
            client.send_many(b"b%d" % i for i in range(20))
            deadline = time.monotonic() + 10
            while len(got) < 40 and time.monotonic() < deadline:
                time.sleep(0.01)
            # a flush may straddle the crash, so duplicates are possible;
            # losses are not
            assert {item for item in got if item.startswith(b"b")} == {
                b"b%d" % i for i in range(20)
            }
            assert client.reconnects >= 1
            client.stop()
        finally:
            server2.stop()

    def test_oversize_payload_dropped_with_count(self, queue_server):
        client = QueueClient(
            queue_server.address,
            send_queue="ov-in",
            config=BatchingConfig(out_batch_size=8),
        ).start()
        huge = b"x" * (queue_server.max_payload + 1)
        client.send_many([b"ok1", huge, b"ok2"])
        deadline = time.monotonic() + 5
        while client.sent < 2 and time.monotonic() < deadline:
            time.sleep(0.01)
        client.stop()
        assert client.sent == 2
        assert client.rejected == 1
        check = QueueConnection(queue_server.address)
        assert check.range("ov-in", 0, 10) == [b"ok1", b"ok2"]
        check.close()

    def test_slow_shutdown_raises(self):
        # No server listening: the send worker cannot flush, so stop() must
        # report the stranded payloads instead of pretending success.
        client = QueueClient(
            ("127.0.0.1", 1), send_queue="void-in"
        ).start()
        client.send(b"stranded")
        with pytest.raises(ShutdownTimeout) as err:
            client.stop(timeout=0.5)
        assert err.value.unsent == 1
