"""Canonical JSON document encoding.

Every structured value the platform persists or puts on the wire (events,
registry manifests, status documents, metrics reports) goes through this
module so that equal values always produce identical bytes, regardless of
which language produced them.  The rendering rules:

- object keys sorted by Unicode code point, duplicate keys impossible
- no insignificant whitespace
- UTF-8 output, non-ASCII characters unescaped
- integers in plain decimal, no leading zeros
- floats in shortest round-trip form (exponent written only when the
  decimal exponent falls outside [-4, 16)), negative zero normalized to 0.0
- NaN and infinities rejected
"""
from __future__ import annotations

import json
import math
from typing import Any

__all__ = ["canonical_bytes", "canonical_text", "parse_canonical", "CanonicalError"]


class CanonicalError(ValueError):
    """A value cannot be rendered canonically (or parsed back)."""


def _normalize(value: Any) -> Any:
    """Return a copy of ``value`` fit for canonical rendering.

    Rejects non-finite floats and non-string mapping keys; maps -0.0 to 0.0
    so that the two equal floats share one encoding.
    """
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalError(f"non-finite float {value!r} has no canonical form")
        return 0.0 if value == 0.0 else value
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            if not isinstance(key, str):
                raise CanonicalError(f"object key must be str, got {type(key).__name__}")
            out[key] = _normalize(item)
        return out
    if isinstance(value, (list, tuple)):
        return [_normalize(item) for item in value]
    raise CanonicalError(f"type {type(value).__name__} has no canonical form")


def canonical_text(value: Any) -> str:
    """Render ``value`` as canonical JSON text."""
    try:
        return json.dumps(
            _normalize(value),
            ensure_ascii=False,
            allow_nan=False,
            sort_keys=True,
            separators=(",", ":"),
        )
    except CanonicalError:
        raise
    except (TypeError, ValueError) as exc:
        raise CanonicalError(str(exc)) from exc


def canonical_bytes(value: Any) -> bytes:
    """Render ``value`` as canonical JSON encoded in UTF-8.

    Raises CanonicalError if the text contains lone surrogates, which UTF-8
    cannot carry.
    """
    text = canonical_text(value)
    try:
        return text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise CanonicalError(f"string not encodable as UTF-8: {exc}") from exc


def parse_canonical(data: bytes | str) -> Any:
    """Parse a JSON document produced by :func:`canonical_bytes`.

    Accepts any valid JSON (parsing is forgiving about whitespace and key
    order; only encoding is strict) but rejects NaN/Infinity literals.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CanonicalError(f"document is not UTF-8: {exc}") from exc

    def _reject_constant(name: str) -> Any:
        raise CanonicalError(f"non-finite literal {name} not allowed")

    try:
        return json.loads(data, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise CanonicalError(f"malformed document: {exc}") from exc
