"""Operator worker runtime.

This is the program that runs inside an operator container process.  It
reads its wiring from the environment, announces readiness on the control
queue, waits for activation, then consumes its input queue in batches:

    read up to batch_size with RANGE
    transform each payload
    flush outputs (plus any dead letters) and TRIM the inputs
    in one pipelined exchange

Outputs are pushed before inputs are trimmed, so a crash at any point
redelivers the in-flight batch instead of losing it; duplicates are possible
after a crash, losses are not.  A drain request finishes the current batch,
acknowledges with a drained message, and exits 0 without touching the input
queue again, which is what makes hot updates lossless.

The transform is payload -> iterable of payloads.  A transform exception
sends that payload to the dead-letter queue (instance id + '-dlq') wrapped
in a small JSON record; the batch keeps going.
"""
from __future__ import annotations

import argparse
import base64
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from . import contract
from .client import ConnectionLost, ControlLog, LinearBackoff, QueueConnection
from .events import DecodingError, decode_event

__all__ = [
    "WorkerContext",
    "run_worker",
    "forward_transform",
    "drop_transform",
    "make_fraud_transform",
    "transform_from_config",
    "main",
]

log = logging.getLogger(__name__)

Transform = Callable[[bytes], Iterable[bytes]]

_CTL_POLL_SLEEP_NS = 500_000  # idle wait for activation; on the swap critical path
_CONNECT_RETRY_LIMIT = 40


@dataclass(frozen=True)
class WorkerContext:
    """Wiring handed to the worker by its manager via the environment."""

    queue_addr: tuple[str, int]
    in_queue: str
    out_queue: str
    ctl_queue: str
    batch_size: int = 1024
    backoff_ns: int = 100_000

    @property
    def dlq(self) -> str:
        base = self.in_queue
        if base.endswith(contract.IN_SUFFIX):
            base = base[: -len(contract.IN_SUFFIX)]
        return base + contract.DLQ_SUFFIX

    @classmethod
    def from_environ(cls, environ: Mapping[str, str]) -> "WorkerContext":
        missing = [
            name
            for name in (contract.ENV_QUEUE_ADDR, contract.ENV_IN_QUEUE,
                         contract.ENV_OUT_QUEUE, contract.ENV_CTL_QUEUE)
            if not environ.get(name)
        ]
        if missing:
            raise KeyError(f"missing environment: {', '.join(missing)}")
        return cls(
            queue_addr=contract.parse_address(
                environ[contract.ENV_QUEUE_ADDR], contract.DEFAULT_QUEUE_PORT
            ),
            in_queue=environ[contract.ENV_IN_QUEUE],
            out_queue=environ[contract.ENV_OUT_QUEUE],
            ctl_queue=environ[contract.ENV_CTL_QUEUE],
            batch_size=int(environ.get(contract.ENV_BATCH_SIZE, "1024")),
            backoff_ns=int(environ.get(contract.ENV_BACKOFF_NS, "100000")),
        )


def forward_transform(payload: bytes) -> Iterable[bytes]:
    return (payload,)


def drop_transform(payload: bytes) -> Iterable[bytes]:
    return ()


def make_fraud_transform(threshold: float) -> Transform:
    """Pass events whose 'amount' attribute strictly exceeds the threshold.

    The passed payload is forwarded byte-identical, never re-encoded, so a
    chain of runtimes cannot drift. Events without a numeric amount are an
    error (dead-lettered by the runtime loop).
    """

    def fraud(payload: bytes) -> Iterable[bytes]:
        event = decode_event(payload)
        amount = event.attrs.get("amount")
        if isinstance(amount, bool) or not isinstance(amount, (int, float)):
            raise DecodingError("amount", f"missing or non-numeric: {amount!r}")
        if amount > threshold:
            return (payload,)
        return ()

    return fraud


def transform_from_config(config: Mapping) -> Transform:
    kind = config.get("kind", "forward")
    if kind == "forward":
        return forward_transform
    if kind == "drop":
        return drop_transform
    if kind == "fraud":
        return make_fraud_transform(float(config.get("threshold", 0.78)))
    raise ValueError(f"unknown operator kind {kind!r}")


def _dead_letter(payload: bytes, error: Exception) -> bytes:
    record = {
        "error": f"{type(error).__name__}: {error}",
        "payload_b64": base64.b64encode(payload).decode("ascii"),
        "ts": time.time_ns() // 1000,
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _connect_with_retry(context: WorkerContext) -> QueueConnection:
    conn = QueueConnection(context.queue_addr, timeout=2.0)
    backoff = LinearBackoff(1_000_000, 50_000_000)
    for attempt in range(_CONNECT_RETRY_LIMIT):
        try:
            conn.connect()
            return conn
        except ConnectionLost:
            time.sleep(backoff.next_sleep_ns() / 1e9)
    raise ConnectionLost(f"queue server unreachable at {context.queue_addr}")


def run_worker(
    transform: Transform,
    context: Optional[WorkerContext] = None,
    *,
    environ: Optional[Mapping[str, str]] = None,
    stop_flag: Optional[Callable[[], bool]] = None,
) -> int:
    """Run the consume loop until drained. Returns the process exit code.

    ``stop_flag`` is a test hook: when it returns True the loop exits as if
    drained (without posting the drained marker).
    """
    if context is None:
        context = WorkerContext.from_environ(environ if environ is not None else os.environ)
    conn = _connect_with_retry(context)
    ctl = ControlLog(conn, context.ctl_queue)
    backoff = LinearBackoff(context.backoff_ns, max(context.backoff_ns, 10_000_000))
    in_queue = context.in_queue.encode()
    out_queue = context.out_queue.encode()
    dlq = context.dlq.encode()

    ctl.post(contract.CTL_READY)
    log.info("worker ready on %s -> %s", context.in_queue, context.out_queue)

    activated = False
    while not activated:
        if stop_flag is not None and stop_flag():
            return 0
        for message in ctl.poll():
            if message == contract.CTL_ACTIVATE:
                activated = True
            elif message == contract.CTL_DRAIN:
                ctl.post(contract.CTL_DRAINED)
                log.info("drained before activation")
                return 0
        if not activated:
            time.sleep(_CTL_POLL_SLEEP_NS / 1e9)

    log.info("worker activated")
    while True:
        if stop_flag is not None and stop_flag():
            return 0
        drain = any(m == contract.CTL_DRAIN for m in ctl.poll())
        if drain:
            ctl.post(contract.CTL_DRAINED)
            log.info("drained")
            return 0
        batch = conn.range(context.in_queue, 0, context.batch_size)
        if not batch:
            time.sleep(backoff.next_sleep_ns() / 1e9)
            continue
        outputs: list[bytes] = []
        letters: list[bytes] = []
        for payload in batch:
            try:
                outputs.extend(transform(payload))
            except Exception as exc:  # noqa: BLE001 - operator code is untrusted
                letters.append(_dead_letter(payload, exc))
        _flush_then_trim(conn, out_queue, dlq, in_queue, outputs, letters, len(batch), backoff)
        backoff.reset()


def _flush_then_trim(
    conn: QueueConnection,
    out_queue: bytes,
    dlq: bytes,
    in_queue: bytes,
    outputs: list[bytes],
    letters: list[bytes],
    consumed: int,
    backoff: LinearBackoff,
) -> None:
    """Push all outputs, then trim the inputs, pipelined on one connection.

    The server applies the commands strictly in order, so the trim can only
    take effect after every push landed.  Bounced pushes (queue full) are
    retried before trimming; pushes the server can never accept are
    dead-lettered so the loop cannot wedge.
    """
    pending = [(out_queue, payload) for payload in outputs] + [
        (dlq, letter) for letter in letters
    ]
    while pending:
        commands = [(b"PUSH", queue, payload) for queue, payload in pending]
        replies = conn.execute(commands)
        bounced = []
        for (queue, payload), reply in zip(pending, replies):
            if reply[0] != "err":
                continue
            if "full" in reply[1]:
                bounced.append((queue, payload))
            elif queue != dlq:
                bounced_letter = _dead_letter(payload, RuntimeError(reply[1]))
                bounced.append((dlq, bounced_letter))
            else:
                log.error("dead letter rejected by server: %s", reply[1])
        if bounced and len(bounced) == len(pending):
            time.sleep(backoff.next_sleep_ns() / 1e9)
        pending = bounced
    conn.trim(in_queue.decode(), consumed)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Queue-driven operator worker.")
    parser.add_argument("--kind", default=None, help="override operator.json kind")
    parser.add_argument("--threshold", type=float, default=None)
    parser.add_argument("--config", default="operator.json")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s worker: %(message)s"
    )

    config: dict = {}
    config_path = Path(args.config)
    if config_path.is_file():
        config = json.loads(config_path.read_text())
    if args.kind is not None:
        config["kind"] = args.kind
    if args.threshold is not None:
        config["threshold"] = args.threshold

    try:
        context = WorkerContext.from_environ(os.environ)
    except KeyError as exc:
        print(f"worker: {exc.args[0]}", file=sys.stderr)
        return 2
    try:
        transform = transform_from_config(config)
    except ValueError as exc:
        print(f"worker: {exc}", file=sys.stderr)
        return 2
    try:
        return run_worker(transform, context)
    except ConnectionLost as exc:
        print(f"worker: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
