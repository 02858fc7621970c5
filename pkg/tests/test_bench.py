"""Benchmark harness pieces: metrics math, generator determinism, graph
validation, payload fast paths, and short end-to-end runs."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cepless.bench.generator import PayloadPool, make_transactions, reference_payload
from cepless.bench.harness import BenchServices, RateError, RunConfig, run_once
from cepless.bench.metrics import (
    RunMetrics,
    aggregate_table,
    count_duplicates,
    longest_gap_us,
    missing_from,
    nearest_rank,
    per_second_bins,
    pool_latency,
    summarize_us,
)
from cepless.bench.pipeline import (
    DirectPipeline,
    GraphError,
    QueryGraph,
    Vertex,
    extract_seq_ts,
    forward_query,
    fraud_query,
    validate_chain,
)
from cepless.events import Event, decode_event, encode_event


# -- percentiles ---------------------------------------------------------------


def brute_force_percentile(values, pct):
    """Smallest value with at least pct% of the sample at or below it."""
    ordered = sorted(values)
    need = math.ceil(pct / 100.0 * len(ordered))
    for v in ordered:
        if sum(1 for x in ordered if x <= v) >= need:
            return v
    return ordered[-1]


@given(
    st.lists(st.integers(min_value=0, max_value=10**7), min_size=1, max_size=300),
    st.sampled_from([1, 10, 25, 50, 75, 90, 95, 99, 99.9, 100]),
)
@settings(max_examples=300)
def test_nearest_rank_matches_brute_force(values, pct):
    assert nearest_rank(sorted(values), pct) == brute_force_percentile(values, pct)


def test_nearest_rank_small_samples():
    assert nearest_rank([7], 99) == 7
    assert nearest_rank([1, 2], 50) == 1
    assert nearest_rank([1, 2], 51) == 2
    assert nearest_rank([1, 2, 3, 4], 100) == 4


def test_nearest_rank_rejects_bad_input():
    with pytest.raises(ValueError):
        nearest_rank([], 50)
    with pytest.raises(ValueError):
        nearest_rank([1], 0)
    with pytest.raises(ValueError):
        nearest_rank([1], 101)


def test_summarize_us_known_values():
    samples = list(range(1000, 0, -1))  # 1..1000 us, reversed on purpose
    s = summarize_us(samples)
    assert s["count"] == 1000
    assert s["min_ms"] == 0.001
    assert s["max_ms"] == 1.0
    assert s["p50_ms"] == 0.5
    assert s["p99_ms"] == 0.99
    assert abs(s["mean_ms"] - 0.5005) < 1e-9
    assert summarize_us([]) == {"count": 0}


# -- bins and gaps -------------------------------------------------------------


def test_per_second_bins_clamps_and_counts():
    t0 = 5_000_000
    times = [t0, t0 + 1, t0 + 999_999, t0 + 1_000_000, t0 + 2_500_000, t0 - 1, t0 + 3_000_000]
    assert per_second_bins(times, t0, 3) == [3, 1, 1]


def test_longest_gap_edges():
    assert longest_gap_us([], 0, 1_000_000) == 1_000_000
    assert longest_gap_us([500_000], 0, 1_000_000) == 500_000
    assert longest_gap_us([100, 200, 900], 0, 1000) == 700
    assert longest_gap_us([100], 200, 100) == 0
    # events outside the window are invisible
    assert longest_gap_us([5, 2_000_000], 1_000_000, 1_500_000) == 500_000


def test_seq_accounting_helpers():
    assert count_duplicates([1, 2, 3]) == 0
    assert count_duplicates([1, 2, 2, 3, 3, 3]) == 3
    assert missing_from([0, 2], {0, 1, 2}) == {1}


# -- generator -----------------------------------------------------------------


def test_transactions_deterministic_per_seed():
    a = make_transactions(11, 50)
    b = make_transactions(11, 50)
    c = make_transactions(12, 50)
    assert a == b
    assert a != c
    assert all(0.0 <= t.amount < 1.0 for t in a)


def test_payload_pool_matches_reference_encoder():
    pool = PayloadPool(3, 64)
    for seq, ts in [(0, 0), (7, 123456), (63, -5), (64, 2**40), (1000, 1_700_000_000_000_000)]:
        assert pool.build(seq, ts) == reference_payload(pool, seq, ts)


def test_payload_pool_cycles():
    pool = PayloadPool(3, 8)
    assert pool.amount_of(2) == pool.amount_of(10)
    assert pool.build(2, 5)[:40] != pool.build(3, 5)[:40]


# -- seq/ts extraction ---------------------------------------------------------


def test_extract_seq_ts_round_trip():
    pool = PayloadPool(5, 32)
    for seq, ts in [(0, 0), (31, 99), (2**63, -(2**60)), (123, 456)]:
        payload = pool.build(seq, ts)
        assert extract_seq_ts(payload) == (seq, ts)
        event = decode_event(payload)
        assert (event.seq, event.ts_produced) == (seq, ts)


def test_extract_seq_ts_survives_hostile_attr_keys():
    # attr keys named like the envelope fields must not confuse the scanner
    event = Event(seq=42, ts_produced=-7, attrs={"ts": 1, "seq": 2, "x": "\"ts\":9"})
    payload = encode_event(event)
    assert extract_seq_ts(payload) == (42, -7)


# -- query graphs ----------------------------------------------------------------


def test_builtin_queries_validate():
    assert [v.kind for v in validate_chain(forward_query())] == ["source", "forward", "sink"]
    chain = validate_chain(fraud_query(0.9))
    assert chain[1].param("threshold") == 0.9


def _graph(vertices, edges):
    return QueryGraph(vertices=tuple(vertices), edges=tuple(edges))


def test_graph_rejections():
    src = Vertex("s", "source")
    snk = Vertex("k", "sink")
    fwd = Vertex("f", "forward")
    cases = [
        _graph([src, snk, fwd], [("s", "f"), ("f", "s")]),  # cycle, sink unreachable
        _graph([src, snk, fwd, Vertex("g", "forward")],
               [("s", "f"), ("s", "g"), ("f", "k"), ("g", "k")]),  # branch
        _graph([src, snk], []),  # disconnected
        _graph([src, snk, Vertex("u", "mystery")], [("s", "u"), ("u", "k")]),
        _graph([src], [("s", "s")]),
        _graph([src, snk, fwd], [("s", "k"), ("k", "f")]),  # chain through the sink
    ]
    for graph in cases:
        with pytest.raises(GraphError):
            validate_chain(graph)


def test_direct_pipeline_semantics():
    fwd = DirectPipeline(forward_query())
    event = Event(seq=1, ts_produced=2, attrs={"amount": 0.5})
    assert fwd.process(event) is event

    flt = DirectPipeline(fraud_query(0.78))
    keep = Event(seq=1, ts_produced=2, attrs={"amount": 0.7800000000000001})
    drop = Event(seq=2, ts_produced=2, attrs={"amount": 0.78})
    assert flt.process(keep) is keep
    assert flt.process(drop) is None


# -- metrics documents -----------------------------------------------------------


def test_run_metrics_doc_round_trip():
    m = RunMetrics(
        mode="direct", query="forward", target_rate=100.0, duration_s=1.0,
        warmup_s=0.0, seed=1, produced=10, delivered=10,
        throughput_eps=10.0, producer_rate_eps=100.0,
        latency={"count": 1, "mean_ms": 0.5}, latency_samples_us=[500],
        update={"style": "hot"},
    )
    again = RunMetrics.from_doc(m.to_doc())
    assert again == m


def test_aggregate_table_groups_and_pools():
    runs = [
        RunMetrics(mode="direct", query="forward", target_rate=100.0, duration_s=1,
                   warmup_s=0, seed=s, throughput_eps=100.0 + s,
                   latency_samples_us=[1000 * (s + 1)])
        for s in range(3)
    ]
    table = aggregate_table(runs)
    assert table == aggregate_table(runs)  # deterministic
    assert "direct" in table and "forward" in table
    row = [ln for ln in table.splitlines() if ln.startswith("direct")][0]
    assert "101.0" in row  # mean throughput
    pooled = pool_latency(runs)
    assert pooled["count"] == 3 and pooled["p99_ms"] == 3.0


# -- runs -----------------------------------------------------------------------


def test_direct_run_exact_accounting():
    cfg = RunConfig(mode="direct", query="forward", rate=2000, duration_s=1.0,
                    warmup_s=0.25, seed=3)
    m = run_once(cfg)
    assert m.produced == 2500
    assert m.delivered == 2500
    assert m.lost == 0 and m.duplicates == 0
    assert not m.rate_error
    assert abs(m.throughput_eps - 2000) / 2000 < 0.05
    assert sum(m.output_bins) == len(m.latency_samples_us)


def test_direct_fraud_run_filters():
    cfg = RunConfig(mode="direct", query="fraud", threshold=0.78, rate=2000,
                    duration_s=1.0, warmup_s=0.0, seed=3)
    m = run_once(cfg)
    assert m.lost == 0 and m.duplicates == 0
    assert 0 < m.delivered < m.produced
    pool = PayloadPool(3, min(cfg.pool_size, m.produced))
    expected = sum(1 for i in range(m.produced) if pool.amount_of(i) > 0.78)
    assert m.delivered == expected


def test_impossible_rate_raises_rate_error():
    cfg = RunConfig(mode="direct", query="forward", rate=5e8, duration_s=0.5,
                    warmup_s=0.0, seed=1)
    with pytest.raises(RateError) as exc:
        run_once(cfg)
    assert exc.value.metrics.rate_error
    assert exc.value.metrics.producer_rate_eps < 0.95 * 5e8


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(mode="warp")
    with pytest.raises(ValueError):
        RunConfig(rate=0)
    with pytest.raises(ValueError):
        RunConfig(update_at=20.0, duration_s=10.0)
    with pytest.raises(ValueError):
        RunConfig(query="fraud", threshold=0.33).operator()


@pytest.mark.slow
def test_cepless_run_against_stack(stack):
    services = BenchServices(stack.manager, stack.server.address, owned=[])
    cfg = RunConfig(mode="cepless", query="forward", rate=1500, duration_s=2.0,
                    warmup_s=0.5, seed=9, in_batch=256, out_batch=128)
    m = run_once(cfg, services)
    assert m.produced == 3750
    assert m.lost == 0 and m.duplicates == 0
    assert abs(m.throughput_eps - 1500) / 1500 < 0.1
    assert m.latency["p99_ms"] < 100
