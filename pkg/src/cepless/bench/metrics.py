"""Latency/throughput accounting for benchmark runs.

All timestamps are integer microseconds on a shared epoch-anchored monotonic
clock (`now_us`), so latencies computed across producer and consumer code in
the same process are immune to wall-clock steps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

# Anchor chosen once per process: monotonic time shifted to the epoch.
_ANCHOR_NS = time.time_ns() - time.monotonic_ns()


def now_us() -> int:
    """Epoch-anchored monotonic clock in microseconds."""
    return (time.monotonic_ns() + _ANCHOR_NS) // 1000


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: smallest value with at least pct% of mass at
    or below it.  `sorted_values` must be sorted ascending and non-empty."""
    if not sorted_values:
        raise ValueError("no samples")
    if not 0.0 < pct <= 100.0:
        raise ValueError(f"percentile out of range: {pct}")
    rank = math.ceil(pct / 100.0 * len(sorted_values))
    return sorted_values[rank - 1]


def summarize_us(samples_us: Sequence[int]) -> dict:
    """Summary statistics (in milliseconds) over microsecond samples."""
    if not samples_us:
        return {"count": 0}
    ordered = sorted(samples_us)
    n = len(ordered)
    return {
        "count": n,
        "mean_ms": sum(ordered) / n / 1000.0,
        "min_ms": ordered[0] / 1000.0,
        "max_ms": ordered[-1] / 1000.0,
        "p50_ms": nearest_rank(ordered, 50) / 1000.0,
        "p90_ms": nearest_rank(ordered, 90) / 1000.0,
        "p95_ms": nearest_rank(ordered, 95) / 1000.0,
        "p99_ms": nearest_rank(ordered, 99) / 1000.0,
    }


def per_second_bins(times_us: Iterable[int], start_us: int, seconds: int) -> list[int]:
    """Count events per wall second, clamped to [start, start + seconds)."""
    bins = [0] * seconds
    end_us = start_us + seconds * 1_000_000
    for t in times_us:
        if start_us <= t < end_us:
            bins[(t - start_us) // 1_000_000] += 1
    return bins


def longest_gap_us(times_us: Sequence[int], window_start_us: int, window_end_us: int) -> int:
    """Longest stretch inside [start, end] with no event at all.

    Boundary gaps count: a window that ends long after the last event
    reports that trailing silence.  An empty window is one large gap.
    """
    if window_end_us <= window_start_us:
        return 0
    inside = sorted(t for t in times_us if window_start_us <= t <= window_end_us)
    if not inside:
        return window_end_us - window_start_us
    best = inside[0] - window_start_us
    for prev, cur in zip(inside, inside[1:]):
        if cur - prev > best:
            best = cur - prev
    return max(best, window_end_us - inside[-1])


def count_duplicates(seqs: Iterable[int]) -> int:
    seen: set[int] = set()
    dups = 0
    for s in seqs:
        if s in seen:
            dups += 1
        else:
            seen.add(s)
    return dups


def missing_from(seqs: Iterable[int], expected: set[int]) -> set[int]:
    return expected - set(seqs)


@dataclass
class RunMetrics:
    """One benchmark run's outcome.  Raw latency samples ride along so that
    multiple runs can be pooled without losing percentile fidelity."""

    mode: str
    query: str
    target_rate: float
    duration_s: float
    warmup_s: float
    seed: int
    produced: int = 0
    delivered: int = 0
    duplicates: int = 0
    lost: int = 0
    throughput_eps: float = 0.0
    producer_rate_eps: float = 0.0
    rate_error: bool = False
    latency: dict = field(default_factory=dict)
    output_bins: list = field(default_factory=list)
    latency_samples_us: list = field(default_factory=list)
    update: dict | None = None
    config: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        doc = {
            "mode": self.mode,
            "query": self.query,
            "target_rate": float(self.target_rate),
            "duration_s": float(self.duration_s),
            "warmup_s": float(self.warmup_s),
            "seed": self.seed,
            "produced": self.produced,
            "delivered": self.delivered,
            "duplicates": self.duplicates,
            "lost": self.lost,
            "throughput_eps": float(self.throughput_eps),
            "producer_rate_eps": float(self.producer_rate_eps),
            "rate_error": self.rate_error,
            "latency": self.latency,
            "output_bins": list(self.output_bins),
            "latency_samples_us": list(self.latency_samples_us),
            "config": dict(self.config),
        }
        if self.update is not None:
            doc["update"] = self.update
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "RunMetrics":
        return cls(
            mode=doc["mode"],
            query=doc["query"],
            target_rate=doc["target_rate"],
            duration_s=doc["duration_s"],
            warmup_s=doc["warmup_s"],
            seed=doc["seed"],
            produced=doc["produced"],
            delivered=doc["delivered"],
            duplicates=doc["duplicates"],
            lost=doc["lost"],
            throughput_eps=doc["throughput_eps"],
            producer_rate_eps=doc["producer_rate_eps"],
            rate_error=doc["rate_error"],
            latency=doc["latency"],
            output_bins=doc["output_bins"],
            latency_samples_us=doc["latency_samples_us"],
            update=doc.get("update"),
            config=doc.get("config", {}),
        )


def pool_latency(runs: Iterable[RunMetrics]) -> dict:
    """Percentiles over the union of every run's raw samples."""
    merged: list[int] = []
    for run in runs:
        merged.extend(run.latency_samples_us)
    return summarize_us(merged)


def aggregate_table(runs: list[RunMetrics]) -> str:
    """Plain-text summary table, one row per (mode, query, rate) group.

    Throughput statistics are across runs; latency percentiles are over the
    pooled raw samples of the group.  Deterministic for a given run list.
    """
    groups: dict[tuple, list[RunMetrics]] = {}
    for run in runs:
        groups.setdefault((run.mode, run.query, run.target_rate), []).append(run)

    header = (
        f"{'mode':<9} {'query':<8} {'rate':>9} {'runs':>5} "
        f"{'thr mean':>10} {'thr min':>10} {'thr max':>10} "
        f"{'lat mean':>9} {'p90':>8} {'p95':>8} {'p99':>8}"
    )
    lines = [header, "-" * len(header)]
    for key in sorted(groups):
        members = groups[key]
        thr = [r.throughput_eps for r in members]
        lat = pool_latency(members)
        if lat["count"]:
            lat_cols = (
                f"{lat['mean_ms']:>9.3f} {lat['p90_ms']:>8.3f} "
                f"{lat['p95_ms']:>8.3f} {lat['p99_ms']:>8.3f}"
            )
        else:
            lat_cols = f"{'-':>9} {'-':>8} {'-':>8} {'-':>8}"
        lines.append(
            f"{key[0]:<9} {key[1]:<8} {key[2]:>9.0f} {len(members):>5} "
            f"{sum(thr) / len(thr):>10.1f} {min(thr):>10.1f} {max(thr):>10.1f} "
            + lat_cols
        )
    return "\n".join(lines)
