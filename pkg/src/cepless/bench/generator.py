"""Deterministic synthetic transaction stream for benchmarks.

A seeded generator yields card-transaction attribute sets.  For high-rate
producers the attribute map is pre-encoded once into a canonical JSON blob;
the full event payload is then assembled at emit time from three byte
concatenations, which keeps the hot path allocation-light while remaining
byte-identical to `encode_event`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..canonical import canonical_bytes
from ..events import Event, encode_event


@dataclass(frozen=True)
class Transaction:
    amount: float
    card_id: int
    terminal_id: int
    timestamp: int

    def attrs(self) -> dict:
        return {
            "amount": self.amount,
            "cardId": self.card_id,
            "terminalId": self.terminal_id,
            "timestamp": self.timestamp,
        }


def make_transactions(seed: int, count: int, base_ts: int = 1_600_000_000_000_000) -> list[Transaction]:
    rng = random.Random(seed)
    out = []
    for i in range(count):
        out.append(
            Transaction(
                amount=rng.random(),
                card_id=rng.randrange(1_000_000),
                terminal_id=rng.randrange(10_000),
                timestamp=base_ts + i * 1000,
            )
        )
    return out


class PayloadPool:
    """Cyclic pool of pre-encoded attribute blobs.

    `build(i, ts)` returns the canonical encoding of the event whose attrs are
    pool entry `i % size`, seq is `i`, and ts_produced is `ts`.  Event
    documents have exactly the keys attrs/seq/ts, already in canonical
    (code point) order, so assembly is three appends.
    """

    def __init__(self, seed: int, size: int):
        if size <= 0:
            raise ValueError("pool size must be positive")
        self.transactions = make_transactions(seed, size)
        self.amounts = [t.amount for t in self.transactions]
        # Shared attr dicts: Event never mutates attrs, so reusing the dict
        # object across events keeps the direct-mode hot path allocation-free.
        self._attr_dicts = [t.attrs() for t in self.transactions]
        self._blobs = [canonical_bytes(d) for d in self._attr_dicts]
        self._size = size

    def __len__(self) -> int:
        return self._size

    def amount_of(self, seq: int) -> float:
        return self.amounts[seq % self._size]

    def build(self, seq: int, ts: int) -> bytes:
        return b'{"attrs":%s,"seq":%d,"ts":%d}' % (self._blobs[seq % self._size], seq, ts)

    def event(self, seq: int, ts: int) -> Event:
        return Event(seq=seq, ts_produced=ts, attrs=self._attr_dicts[seq % self._size])


def reference_payload(pool: PayloadPool, seq: int, ts: int) -> bytes:
    """Slow-path encoding used to cross-check `PayloadPool.build`."""
    return encode_event(pool.event(seq, ts))
