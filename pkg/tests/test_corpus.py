"""Golden corpus: deterministic content, faithful expected outputs, and
line-level canonical stability."""

import json
import subprocess
import sys

from cepless.canonical import canonical_bytes, parse_canonical
from cepless.corpus import (
    DEFAULT_SEED,
    FRAUD_THRESHOLD,
    build_corpus,
    canonical_case_lines,
    corpus_events,
    expected_fraud_output,
)
from cepless.bench.pipeline import DirectPipeline, fraud_query
from cepless.events import decode_event, encode_event


def test_build_corpus_is_deterministic(tmp_path):
    m1 = build_corpus(tmp_path / "a", count=500)
    m2 = build_corpus(tmp_path / "b", count=500)
    assert m1 == m2
    for name in m1["files"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest == m1
    # manifest itself is canonical
    raw = (tmp_path / "a" / "manifest.json").read_bytes()
    assert raw == canonical_bytes(m1) + b"\n"


def test_corpus_events_structure():
    events = corpus_events(DEFAULT_SEED, 200)
    for i, payload in enumerate(events):
        event = decode_event(payload)
        assert event.seq == i
        assert encode_event(event) == payload
        assert set(event.attrs) == {"amount", "cardId", "terminalId", "timestamp"}
    ts = [decode_event(p).ts_produced for p in events]
    assert ts == sorted(ts) and ts[1] - ts[0] == 1


def test_expected_output_matches_direct_pipeline():
    events = corpus_events(DEFAULT_SEED, 400)
    expected = expected_fraud_output(events, FRAUD_THRESHOLD)
    pipeline = DirectPipeline(fraud_query(FRAUD_THRESHOLD))
    mirrored = []
    for payload in events:
        out = pipeline.process(decode_event(payload))
        if out is not None:
            mirrored.append(encode_event(out))
    assert expected == mirrored
    assert 0 < len(expected) < len(events)


def test_canonical_cases_are_fixed_points():
    lines = canonical_case_lines()
    assert len(lines) == len(set(lines))
    for line in lines:
        doc = parse_canonical(line.encode("utf-8"))
        assert canonical_bytes(doc).decode("utf-8") == line


def test_corpus_cli(tmp_path):
    out = tmp_path / "corpus"
    proc = subprocess.run(
        [sys.executable, "-m", "cepless.corpus", "--out", str(out), "--count", "50"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "manifest.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 50
    assert manifest["files"]["events.jsonl"]["lines"] == 50
