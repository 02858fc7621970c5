import socket
import threading

import pytest

from cepless.client import QueueConnection, ServerError
from cepless.server import QueueServer
from cepless.wire import encode_command


@pytest.fixture
def conn(queue_server):
    connection = QueueConnection(queue_server.address)
    connection.connect()
    yield connection
    connection.close()


def test_ping(conn):
    assert conn.one(b"PING") == ("ok", b"PONG")


def test_push_autocreates_and_counts(conn):
    assert conn.push("auto-in", b"a") == 1
    assert conn.push("auto-in", b"b") == 2
    assert conn.length("auto-in") == 2


def test_fifo_order(conn):
    for i in range(10):
        conn.push("fifo-in", b"%d" % i)
    assert conn.range("fifo-in", 0, 100) == [b"%d" % i for i in range(10)]


def test_range_is_non_destructive(conn):
    conn.push("peek-in", b"x")
    assert conn.range("peek-in", 0, 10) == [b"x"]
    assert conn.range("peek-in", 0, 10) == [b"x"]
    assert conn.length("peek-in") == 1


def test_range_offset_and_count(conn):
    for i in range(5):
        conn.push("slice-in", b"%d" % i)
    assert conn.range("slice-in", 1, 2) == [b"1", b"2"]
    assert conn.range("slice-in", 4, 10) == [b"4"]
    assert conn.range("slice-in", 5, 10) == []
    assert conn.range("slice-in", 0, 0) == []


def test_trim_removes_from_head(conn):
    for i in range(4):
        conn.push("trim-in", b"%d" % i)
    assert conn.trim("trim-in", 2) == 2
    assert conn.range("trim-in", 0, 10) == [b"2", b"3"]
    assert conn.trim("trim-in", 99) == 2
    assert conn.length("trim-in") == 0


def test_unknown_queue_reads_as_empty(conn):
    assert conn.range("nope-in", 0, 5) == []
    assert conn.length("nope-in") == 0
    assert conn.trim("nope-in", 3) == 0


def test_qcreate_idempotent_qdelete_strict(conn):
    conn.qcreate("q-in")
    conn.qcreate("q-in")
    conn.push("q-in", b"x")
    conn.qdelete("q-in")
    assert conn.length("q-in") == 0
    with pytest.raises(ServerError, match="no such queue"):
        conn.qdelete("q-in")


def test_empty_payload_is_preserved(conn):
    conn.push("e-in", b"")
    assert conn.range("e-in", 0, 1) == [b""]


def test_binary_payload_with_crlf(conn):
    blob = b"\r\n\x00\xff" * 10
    conn.push("bin-in", blob)
    assert conn.range("bin-in", 0, 1) == [blob]


def test_payload_size_limit(queue_server, conn):
    limit = queue_server.max_payload
    conn.push("big-in", b"x" * limit)
    with pytest.raises(ServerError, match="exceeds limit"):
        conn.push("big-in", b"x" * (limit + 1))
    assert conn.length("big-in") == 1


def test_queue_capacity_rejects_new():
    server = QueueServer("127.0.0.1", 0, max_items=3).start()
    try:
        conn = QueueConnection(server.address)
        for i in range(3):
            conn.push("cap-in", b"%d" % i)
        with pytest.raises(ServerError, match="full"):
            conn.push("cap-in", b"overflow")
        # the resident events are intact, and trimming frees capacity
        assert conn.range("cap-in", 0, 10) == [b"0", b"1", b"2"]
        conn.trim("cap-in", 1)
        assert conn.push("cap-in", b"3") == 3
        conn.close()
    finally:
        server.stop()


@pytest.mark.parametrize(
    "name", ["UPPER", "has_underscore", "", "x" * 65, "sp ace", "dot.ted"]
)
def test_invalid_queue_names_rejected(conn, name):
    with pytest.raises(ServerError, match="invalid queue name"):
        conn.one(b"PUSH", name.encode(), b"x")


def test_unknown_command(conn):
    with pytest.raises(ServerError, match="unknown command"):
        conn.one(b"FLY", b"away")


def test_wrong_arg_count(conn):
    with pytest.raises(ServerError, match="wrong number of arguments"):
        conn.one(b"PUSH", b"only-name")


def test_non_integer_args(conn):
    with pytest.raises(ServerError, match="not an integer"):
        conn.one(b"RANGE", b"q-in", b"zero", b"10")


def test_verbs_case_insensitive(conn):
    assert conn.one(b"ping") == ("ok", b"PONG")


def test_pipelined_responses_in_request_order(queue_server):
    # Raw socket: six commands in a single write, then read six replies.
    sock = socket.create_connection(queue_server.address)
    try:
        wire = (
            encode_command(b"PUSH", b"pipe-in", b"a")
            + encode_command(b"PUSH", b"pipe-in", b"b")
            + encode_command(b"LEN", b"pipe-in")
            + encode_command(b"RANGE", b"pipe-in", b"0", b"10")
            + encode_command(b"TRIM", b"pipe-in", b"2")
            + encode_command(b"LEN", b"pipe-in")
        )
        sock.sendall(wire)
        expected = b":1\r\n:2\r\n:2\r\n*2\r\n$1\r\na\r\n$1\r\nb\r\n:2\r\n:0\r\n"
        got = b""
        while len(got) < len(expected):
            chunk = sock.recv(4096)
            assert chunk, "server closed early"
            got += chunk
        assert got == expected
    finally:
        sock.close()


def test_protocol_error_closes_connection(queue_server):
    sock = socket.create_connection(queue_server.address)
    try:
        sock.sendall(b"GARBAGE\r\n")
        data = sock.recv(4096)
        assert data.startswith(b"-ERR protocol")
        assert sock.recv(4096) == b""  # closed
    finally:
        sock.close()


def test_interleaved_producers_keep_per_producer_order(queue_server):
    # Two producer connections racing; the merged queue must preserve each
    # producer's own order even though the interleaving is arbitrary.
    def produce(tag: bytes):
        conn = QueueConnection(queue_server.address)
        for i in range(200):
            conn.push("merge-in", b"%s%03d" % (tag, i))
        conn.close()

    threads = [threading.Thread(target=produce, args=(t,)) for t in (b"a", b"b")]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    check = QueueConnection(queue_server.address)
    merged = check.range("merge-in", 0, 1000)
    check.close()
    assert len(merged) == 400
    for tag in (b"a", b"b"):
        ours = [item for item in merged if item.startswith(tag)]
        assert ours == [b"%s%03d" % (tag, i) for i in range(200)]
