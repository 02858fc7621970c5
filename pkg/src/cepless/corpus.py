"""Deterministic interop corpus.

Writes a fixed, seeded event stream plus its expected filter output and a
set of canonical-encoding exercises.  Any client implementation in any
language can consume these files and check itself byte for byte:

  events.jsonl            one canonical event payload per line
  fraud-0.78-expected.jsonl   the subset a threshold-0.78 amount filter forwards,
                          lines byte-identical to events.jsonl
  canonical-cases.jsonl   one canonical document per line; decode + re-encode
                          must reproduce the exact line
  manifest.json           counts and sha256 digests of the files above

Regeneration with the same seed/count is bit-identical, so the files can be
checked into a fixture directory or rebuilt on demand.
"""

from __future__ import annotations

import argparse
import hashlib
from pathlib import Path

from .bench.generator import PayloadPool
from .canonical import canonical_text
from .worker import make_fraud_transform

DEFAULT_SEED = 87113
DEFAULT_COUNT = 10_000
FRAUD_THRESHOLD = 0.78
_BASE_TS = 1_600_000_000_000_000

# Documents that exercise every encoding rule with a fixed expected form:
# float shortest-form selection, exponent styles, negative zero, key order
# by code point (including astral plane), escapes, 64-bit integers, and the
# generic-document scalar set.
_CANONICAL_CASES = [
    0,
    -1,
    9223372036854775807,
    -9223372036854775808,
    18446744073709551615,
    0.5,
    1.0,
    -2.5,
    1e15,
    9999999999999998.0,
    1e16,
    1e-4,
    1e-5,
    5e-324,
    1.7976931348623157e308,
    0.1,
    2.0000000000000004,
    3.141592653589793,
    -0.0,
    True,
    False,
    None,
    "",
    "plain",
    "quote\" backslash\\ slash/",
    "control" + chr(0) + chr(31) + " tab\t newline\n",
    "unicode é中\U0001f600",
    [],
    {},
    [1, "two", 3.0, None, True, [{"x": -0.0}]],
    {"b": 1, "a": 2, "A": 3, "é": 4, "\U0001f600": 5, "￿": 6},
    {"nested": {"deep": [{"deeper": {"amount": 0.78}}]}},
    {"attrs": {"amount": 0.78}, "seq": 7, "ts": 1000},
]


def corpus_events(seed: int = DEFAULT_SEED, count: int = DEFAULT_COUNT) -> list[bytes]:
    """The fixed event stream: pool attrs, seq 0..count-1, deterministic ts."""
    pool = PayloadPool(seed, count)
    return [pool.build(i, _BASE_TS + i) for i in range(count)]


def expected_fraud_output(events: list[bytes], threshold: float = FRAUD_THRESHOLD) -> list[bytes]:
    transform = make_fraud_transform(threshold)
    out: list[bytes] = []
    for payload in events:
        out.extend(transform(payload))
    return out


def canonical_case_lines() -> list[str]:
    return [canonical_text(doc) for doc in _CANONICAL_CASES]


def _write_lines(path: Path, lines: list[bytes]) -> str:
    body = b"\n".join(lines) + b"\n" if lines else b""
    path.write_bytes(body)
    return hashlib.sha256(body).hexdigest()


def build_corpus(
    out_dir: Path | str,
    seed: int = DEFAULT_SEED,
    count: int = DEFAULT_COUNT,
    threshold: float = FRAUD_THRESHOLD,
) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    events = corpus_events(seed, count)
    expected = expected_fraud_output(events, threshold)
    cases = [line.encode("utf-8") for line in canonical_case_lines()]

    manifest = {
        "seed": seed,
        "count": count,
        "threshold": threshold,
        "base_ts": _BASE_TS,
        "files": {
            "events.jsonl": {
                "lines": len(events),
                "sha256": _write_lines(out / "events.jsonl", events),
            },
            f"fraud-{threshold}-expected.jsonl": {
                "lines": len(expected),
                "sha256": _write_lines(out / f"fraud-{threshold}-expected.jsonl", expected),
            },
            "canonical-cases.jsonl": {
                "lines": len(cases),
                "sha256": _write_lines(out / "canonical-cases.jsonl", cases),
            },
        },
    }
    (out / "manifest.json").write_text(canonical_text(manifest) + "\n")
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cepless-corpus", description="write the deterministic interop corpus"
    )
    parser.add_argument("--out", default="./corpus", help="output directory")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--count", type=int, default=DEFAULT_COUNT)
    parser.add_argument("--threshold", type=float, default=FRAUD_THRESHOLD)
    args = parser.parse_args(argv)
    manifest = build_corpus(args.out, args.seed, args.count, args.threshold)
    for name, info in manifest["files"].items():
        print(f"{name}: {info['lines']} lines sha256={info['sha256'][:16]}…")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
