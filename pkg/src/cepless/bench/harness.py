"""Benchmark runner.

The producer is open loop: event i is due at t0 + i/rate regardless of how
the pipeline is doing, so a slow consumer shows up as latency (or a failed
run), never as a silently reduced offered load.  If the producer itself
cannot hold the schedule within 5%, the run is marked and `RateError` raised
with the partial metrics attached.
"""

from __future__ import annotations

import logging
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .. import contract
from ..client import BatchingConfig, QueueConnection
from ..manager import NodeManager, ProcessBackend
from ..operators import publish_reference_operators
from ..registry import Registry
from ..server import QueueServer
from ..udo import StaleAddress, UdoInterface
from .generator import PayloadPool
from .metrics import (
    RunMetrics,
    count_duplicates,
    longest_gap_us,
    now_us,
    per_second_bins,
    summarize_us,
)
from .pipeline import DirectPipeline, SinkRecord, extract_seq_ts, forward_query, fraud_query

log = logging.getLogger(__name__)

# Published stock operators, keyed by (query, threshold).
_STOCK_VERSIONS = {
    ("forward", None): ("forward-op", "1.0.0"),
    ("fraud", 0.78): ("fraud-filter", "1.0.0"),
    ("fraud", 0.9): ("fraud-filter", "1.1.0"),
    ("fraud", 0.5): ("fraud-filter", "2.0.0"),
}
_THRESHOLD_OF_VERSION = {"1.0.0": 0.78, "1.1.0": 0.9, "2.0.0": 0.5}


class RateError(RuntimeError):
    """Producer missed its own schedule by more than 5%."""

    def __init__(self, message: str, metrics: RunMetrics):
        super().__init__(message)
        self.metrics = metrics


@dataclass(frozen=True)
class RunConfig:
    mode: str = "cepless"  # "direct" | "cepless"
    query: str = "forward"  # "forward" | "fraud"
    threshold: float = 0.78
    rate: float = 1000.0
    duration_s: float = 10.0
    warmup_s: float = 2.0
    in_batch: int = 4096
    out_batch: int = 512
    backoff_ns: int = 100_000
    seed: int = 7
    pool_size: int = 65_536
    keep_samples: bool = True
    update_at: Optional[float] = None  # seconds into the measured window
    update_version: str = "2.0.0"
    redeploy: bool = False  # baseline: tear down + redeploy instead of hot update
    drain_timeout_s: float = 60.0

    def __post_init__(self):
        if self.mode not in ("direct", "cepless"):
            raise ValueError(f"unknown mode: {self.mode}")
        if self.query not in ("forward", "fraud"):
            raise ValueError(f"unknown query: {self.query}")
        if self.rate <= 0 or self.duration_s <= 0 or self.warmup_s < 0:
            raise ValueError("rate/duration must be positive, warmup non-negative")
        if self.update_at is not None and not 0 <= self.update_at < self.duration_s:
            raise ValueError("update_at must fall inside the measured window")

    def operator(self) -> tuple[str, str]:
        key = (self.query, None if self.query == "forward" else self.threshold)
        try:
            return _STOCK_VERSIONS[key]
        except KeyError:
            raise ValueError(f"no stock operator for query={self.query} threshold={self.threshold}") from None

    def graph(self):
        if self.query == "forward":
            return forward_query()
        name, version = self.operator()
        return fraud_query(self.threshold, operator=name, version=version)

    def total_events(self) -> int:
        return int(round(self.rate * (self.warmup_s + self.duration_s)))


class BenchServices:
    """Queue server + registry + node manager for self-contained runs.

    `external(control_addr)` instead points at an already-running control
    endpoint (e.g. one brought up by `bench serve-all`).
    """

    def __init__(self, control, queue_addr: tuple[str, int], owned: list):
        self.control = control
        self.queue_addr = queue_addr
        self._owned = owned

    @classmethod
    def local(cls, config: RunConfig, root: Optional[Path] = None) -> "BenchServices":
        tmp = None
        if root is None:
            tmp = tempfile.TemporaryDirectory(prefix="cepless-bench-")
            root = Path(tmp.name)
        root = Path(root)
        server = QueueServer("127.0.0.1", 0).start()
        registry = Registry(root / "registry")
        publish_reference_operators(registry, root / "scratch")
        manager = NodeManager(
            registry,
            server.address,
            backend=ProcessBackend(root / "logs"),
            batch_size=config.in_batch,
            backoff_ns=config.backoff_ns,
            supervise_interval=0.1,
        )
        owned = [manager, server]
        if tmp is not None:
            owned.append(tmp)
        return cls(manager, server.address, owned)

    @classmethod
    def external(cls, control_addr: str) -> "BenchServices":
        addr = contract.parse_address(control_addr, contract.DEFAULT_CONTROL_PORT)
        return cls(addr, (addr[0], contract.DEFAULT_QUEUE_PORT), [])

    def close(self) -> None:
        for item in self._owned:
            try:
                if isinstance(item, NodeManager):
                    item.close()
                elif isinstance(item, QueueServer):
                    item.stop()
                else:
                    item.cleanup()
            except Exception as exc:  # noqa: BLE001 - best-effort teardown
                log.warning("bench service teardown: %s", exc)

    def __enter__(self) -> "BenchServices":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class _Pacer:
    """Open-loop schedule over the epoch-anchored clock."""

    def __init__(self, rate: float, total: int):
        self.period_us = 1_000_000.0 / rate
        self.total = total
        self.t0 = now_us()
        self.max_lag_us = 0

    # Bursts are chunked so the caller's lag check runs at a bounded
    # interval even when the schedule is hopelessly ahead of the producer.
    BURST_CAP = 50_000

    def due_through(self, i: int) -> tuple[int, int]:
        """(events due so far, current time)."""
        now = now_us()
        due = min(self.total, i + self.BURST_CAP, int((now - self.t0) / self.period_us) + 1)
        return due, now

    def wait_for(self, i: int) -> None:
        target = self.t0 + i * self.period_us
        while True:
            now = now_us()
            if now >= target:
                return
            time.sleep(min((target - now) / 1e6, 0.05))

    def note_lag(self, i: int, now: int) -> None:
        lag = now - (self.t0 + i * self.period_us)
        if lag > self.max_lag_us:
            self.max_lag_us = int(lag)


def _finish_metrics(
    config: RunConfig,
    sink: SinkRecord,
    produced: int,
    pool: PayloadPool,
    pacer: _Pacer,
    producer_elapsed_us: int,
    rate_error: bool,
    update: Optional[dict],
    thresholds_by_phase: Optional[tuple[float, float]] = None,
) -> RunMetrics:
    window_start = pacer.t0 + int(config.warmup_s * 1_000_000)
    window_end = window_start + int(config.duration_s * 1_000_000)

    in_window = [
        (lat, recv)
        for lat, recv in zip(sink.latency_us, sink.recv_us)
        if window_start <= recv <= window_end
    ]
    samples = [lat for lat, _ in in_window]
    recv_in_window = [recv for _, recv in in_window]

    expected = _expected_seqs(config, produced, pool, thresholds_by_phase, sink)
    delivered_set = set(sink.seqs)
    duplicates = count_duplicates(sink.seqs)
    lost = len(expected - delivered_set) if expected is not None else 0
    unexpected = len(delivered_set - expected) if expected is not None else 0

    producer_rate = produced / (producer_elapsed_us / 1e6) if producer_elapsed_us else 0.0
    metrics = RunMetrics(
        mode=config.mode,
        query=config.query,
        target_rate=config.rate,
        duration_s=config.duration_s,
        warmup_s=config.warmup_s,
        seed=config.seed,
        produced=produced,
        delivered=len(sink),
        duplicates=duplicates,
        lost=lost,
        throughput_eps=len(recv_in_window) / config.duration_s,
        producer_rate_eps=producer_rate,
        rate_error=rate_error,
        latency=summarize_us(samples),
        output_bins=per_second_bins(recv_in_window, window_start, int(config.duration_s)),
        latency_samples_us=samples if config.keep_samples else [],
        update=update,
        config={
            "threshold": config.threshold,
            "in_batch": config.in_batch,
            "out_batch": config.out_batch,
            "backoff_ns": config.backoff_ns,
            "pool_size": config.pool_size,
            "max_producer_lag_us": pacer.max_lag_us,
            "unexpected": unexpected,
            "max_output_gap_ms": (
                longest_gap_us(recv_in_window, window_start, min(window_end, max(recv_in_window)))
                / 1000.0
                if recv_in_window
                else None
            ),
        },
    )
    return metrics


def _expected_seqs(
    config: RunConfig,
    produced: int,
    pool: PayloadPool,
    thresholds_by_phase: Optional[tuple[float, float]],
    sink: SinkRecord,
) -> Optional[set[int]]:
    """The set of seqs that must come out, or None when it is not a function
    of the input alone (mid-band seqs during an update run are checked
    separately by `check_update_bands`)."""
    if config.query == "forward":
        return set(range(produced))
    if thresholds_by_phase is None:
        threshold = config.threshold
        return {i for i in range(produced) if pool.amount_of(i) > threshold}
    high = max(thresholds_by_phase)
    low = min(thresholds_by_phase)
    must = {i for i in range(produced) if pool.amount_of(i) > high}
    # Mid-band events are legitimately either-or; count the delivered ones as
    # expected so they are not flagged, and let the band check bound them.
    delivered = set(sink.seqs)
    mid = {i for i in range(produced) if low < pool.amount_of(i) <= high}
    return must | (mid & delivered)


def check_update_bands(
    produced: int,
    pool: PayloadPool,
    delivered_seqs: list[int],
    old_threshold: float,
    new_threshold: float,
) -> dict:
    """Audit a threshold-lowering update (old > new).

    Events above the old threshold must always pass; events at or below the
    new one must never pass; the mid band must flip exactly once, from
    dropped to passed, in seq order.
    """
    if new_threshold >= old_threshold:
        raise ValueError("expected a threshold-lowering update")
    delivered = set(delivered_seqs)
    missing_high = [i for i in range(produced) if pool.amount_of(i) > old_threshold and i not in delivered]
    leaked_low = sorted(
        i for i in delivered if i < produced and pool.amount_of(i) <= new_threshold
    )
    mid = [i for i in range(produced) if new_threshold < pool.amount_of(i) <= old_threshold]
    mid_delivered = [i for i in mid if i in delivered]
    mid_dropped = [i for i in mid if i not in delivered]
    clean_flip = not mid_delivered or not mid_dropped or max(mid_dropped) < min(mid_delivered)
    return {
        "missing_above_old": len(missing_high),
        "leaked_below_new": len(leaked_low),
        "mid_band_total": len(mid),
        "mid_band_delivered": len(mid_delivered),
        "clean_flip": clean_flip,
        "flip_seq": min(mid_delivered) if mid_delivered else None,
    }


# -- direct mode -------------------------------------------------------------


def _run_direct(config: RunConfig) -> RunMetrics:
    pool = PayloadPool(config.seed, min(config.pool_size, max(config.total_events(), 1)))
    pipeline = DirectPipeline(config.graph())
    sink = SinkRecord()
    total = config.total_events()
    pacer = _Pacer(config.rate, total)
    abort_lag_us = max(2_000_000, int(0.05 * (config.warmup_s + config.duration_s) * 1_000_000))

    i = 0
    rate_error = False
    while i < total:
        due, now = pacer.due_through(i)
        if due <= i:
            pacer.wait_for(i)
            continue
        pacer.note_lag(i, now)
        if pacer.max_lag_us > abort_lag_us:
            rate_error = True
            break
        while i < due:
            ts = now_us()
            out = pipeline.process(pool.event(i, ts))
            if out is not None:
                sink.add(i, ts, now_us())
            i += 1
    elapsed = now_us() - pacer.t0

    produced = i
    if not rate_error and produced / (elapsed / 1e6) < 0.95 * config.rate:
        rate_error = True
    metrics = _finish_metrics(config, sink, produced, pool, pacer, elapsed, rate_error, None)
    if rate_error:
        raise RateError(
            f"direct producer managed {metrics.producer_rate_eps:.0f}/s of {config.rate:.0f}/s",
            metrics,
        )
    return metrics


# -- queue-backed mode -------------------------------------------------------


class _Route:
    """Mutable send target so an updater thread can repoint the producer
    mid-run (it may even swap in a whole new interface).

    While paused, emitted payloads are buffered in order instead of sent;
    the producer keeps generating on schedule, mirroring an upstream source
    that keeps appending during a pipeline restart and is replayed after.
    """

    def __init__(self, iface: UdoInterface):
        self.iface = iface
        self.address = None
        self.paused = threading.Event()
        self._buffer: list[bytes] = []
        self._buf_lock = threading.Lock()

    def emit(self, payload: bytes) -> None:
        if self.paused.is_set():
            with self._buf_lock:
                if self.paused.is_set():
                    self._buffer.append(payload)
                    return
        while True:
            target, address = self.iface, self.address
            try:
                target.send_payload(address, payload)
                return
            except (StaleAddress, RuntimeError):
                # Teardown raced the pause flag; wait for the new route.
                time.sleep(0.001)

    def resume(self) -> None:
        """Replay everything buffered during the pause, then go live."""
        while True:
            with self._buf_lock:
                backlog = self._buffer[:]
                self._buffer.clear()
                if not backlog:
                    self.paused.clear()
                    return
            for payload in backlog:
                self.iface.send_payload(self.address, payload)


def _run_cepless(config: RunConfig, services: Optional[BenchServices]) -> RunMetrics:
    owned = services is None
    if owned:
        services = BenchServices.local(config)
    try:
        return _run_cepless_inner(config, services)
    finally:
        if owned:
            services.close()


def _run_cepless_inner(config: RunConfig, services: BenchServices) -> RunMetrics:
    batching = BatchingConfig(
        out_batch_size=config.out_batch,
        in_batch_size=config.in_batch,
        backoff_increment_ns=config.backoff_ns,
        backoff_cap_ns=max(10_000_000, config.backoff_ns),
    )
    name, version = config.operator()
    pool = PayloadPool(config.seed, min(config.pool_size, max(config.total_events(), 1)))
    sink = SinkRecord()
    sink_lock = threading.Lock()

    route = _Route(UdoInterface(services.control, batching=batching))
    try:
        return _measure_cepless(config, services, route, batching, name, version, pool, sink, sink_lock)
    finally:
        route.iface.close()


def _measure_cepless(
    config: RunConfig,
    services: BenchServices,
    route: _Route,
    batching: BatchingConfig,
    name: str,
    version: str,
    pool: PayloadPool,
    sink: SinkRecord,
    sink_lock: threading.Lock,
) -> RunMetrics:
    route.address = route.iface.deploy_operator(name, version)

    def on_batch(payloads: list[bytes]) -> None:
        t = now_us()
        with sink_lock:
            add = sink.add
            for payload in payloads:
                seq, ts = extract_seq_ts(payload)
                add(seq, ts, t)

    route.iface.add_batch_listener(route.address, on_batch)

    update_info: dict = {}
    updater: Optional[threading.Thread] = None
    pacer = _Pacer(config.rate, config.total_events())

    def apply_update() -> None:
        due_us = pacer.t0 + int((config.warmup_s + config.update_at) * 1_000_000)
        while now_us() < due_us:
            time.sleep(0.001)
        update_info["style"] = "redeploy" if config.redeploy else "hot"
        update_info["requested_at_us"] = now_us()
        try:
            if config.redeploy:
                # Full pipeline restart: the operator is torn down together
                # with the host-side clients, then everything is stood up
                # again from the registry.  The producer buffers (pauses)
                # meanwhile, mirroring what replacing a whole deployed query
                # costs on a classic engine.
                route.paused.set()
                try:
                    old = route.iface
                    old.remove_operator(route.address, timeout=30.0)
                    old.close()
                    fresh = UdoInterface(services.control, batching=batching)
                    new_address = fresh.deploy_operator(name, config.update_version)
                    fresh.add_batch_listener(new_address, on_batch)
                    route.iface = fresh
                    route.address = new_address
                finally:
                    route.resume()
            else:
                update_info["report"] = route.iface.update_operator(
                    route.address, config.update_version
                )
        except Exception as exc:  # noqa: BLE001 - recorded, surfaces in metrics
            update_info["error"] = str(exc)
            log.error("update during run failed: %s", exc)
        update_info["completed_at_us"] = now_us()
        update_info["duration_ms"] = (
            update_info["completed_at_us"] - update_info["requested_at_us"]
        ) / 1000.0

    if config.update_at is not None:
        updater = threading.Thread(target=apply_update, name="bench-update", daemon=True)
        updater.start()

    total = config.total_events()
    # During update/redeploy experiments the producer is expected to fall
    # behind while the route is paused and then catch up, so the mid-run lag
    # abort only guards plain throughput runs.
    abort_on_lag = config.update_at is None
    abort_lag_us = max(2_000_000, int(0.05 * (config.warmup_s + config.duration_s) * 1_000_000))
    i = 0
    rate_error = False
    try:
        while i < total:
            due, now = pacer.due_through(i)
            if due <= i:
                pacer.wait_for(i)
                continue
            pacer.note_lag(i, now)
            if abort_on_lag and pacer.max_lag_us > abort_lag_us:
                rate_error = True
                break
            while i < due:
                route.emit(pool.build(i, now_us()))
                i += 1
    except BufferError:
        rate_error = True
    producer_elapsed = now_us() - pacer.t0
    produced = i

    if updater is not None:
        updater.join(timeout=30.0)

    _drain(route, sink, config.drain_timeout_s)

    thresholds = None
    if config.update_at is not None and config.query == "fraud":
        thresholds = (config.threshold, _THRESHOLD_OF_VERSION[config.update_version])
        if thresholds[1] < thresholds[0]:
            update_info["bands"] = check_update_bands(
                produced, pool, sink.seqs, thresholds[0], thresholds[1]
            )
    if update_info.get("requested_at_us") is not None:
        # Two views of the outage.  window_gap is the longest output silence
        # while the update was in progress, but with a sparse output stream
        # (fraud at a high threshold) natural inter-output spacing floors it
        # well above the real stall.  max_stall is the largest delivery
        # latency in the same window: events due during the swap arrive late
        # by exactly the stall length, independent of output spacing, so it
        # resolves sub-spacing outages and converges to the gap when output
        # is dense.
        w0 = update_info["requested_at_us"] - 1_000_000
        w1 = update_info["completed_at_us"] + 1_000_000
        update_info["window_gap_ms"] = (
            longest_gap_us(sink.recv_us, update_info["requested_at_us"], w1) / 1000.0
        )
        stalls = [
            lat for lat, recv in zip(sink.latency_us, sink.recv_us) if w0 <= recv <= w1
        ]
        update_info["max_stall_ms"] = max(stalls) / 1000.0 if stalls else None

    update_doc = update_info or None
    try:
        route.iface.remove_operator(route.address, timeout=config.drain_timeout_s)
    except Exception as exc:  # noqa: BLE001 - run already measured; log and move on
        log.warning("operator teardown after run: %s", exc)

    if produced / (producer_elapsed / 1e6) < 0.95 * config.rate:
        rate_error = True
    metrics = _finish_metrics(
        config, sink, produced, pool, pacer, producer_elapsed, rate_error, update_doc, thresholds
    )
    if rate_error:
        raise RateError(
            f"producer managed {metrics.producer_rate_eps:.0f}/s of {config.rate:.0f}/s "
            f"(max lag {pacer.max_lag_us / 1000:.0f}ms)",
            metrics,
        )
    return metrics


def _drain(route: _Route, sink: SinkRecord, timeout_s: float) -> None:
    """Wait until the operator's queues are empty and deliveries go quiet."""
    deadline = time.monotonic() + timeout_s
    probe = QueueConnection(
        contract.parse_address(route.address.queue_server, contract.DEFAULT_QUEUE_PORT)
    )
    try:
        stable_since = None
        last_count = -1
        while time.monotonic() < deadline:
            queues = route.address.queues
            backlog = probe.length(queues.input) + probe.length(queues.output)
            count = len(sink)
            if backlog == 0 and count == last_count:
                if stable_since is None:
                    stable_since = time.monotonic()
                elif time.monotonic() - stable_since > 0.3:
                    return
            else:
                stable_since = None
                last_count = count
            time.sleep(0.05)
        log.warning("drain timed out with backlog still present")
    finally:
        probe.close()


def run_once(config: RunConfig, services: Optional[BenchServices] = None) -> RunMetrics:
    if config.mode == "direct":
        return _run_direct(config)
    return _run_cepless(config, services)


def run_many(config: RunConfig, runs: int, services: Optional[BenchServices] = None) -> list[RunMetrics]:
    out = []
    for k in range(runs):
        out.append(run_once(replace(config, seed=config.seed + k), services))
    return out
