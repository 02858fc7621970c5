"""Event model: the unit of data flowing through queues and operators.

An event is a producer-assigned sequence number, a microsecond production
timestamp, and a flat string-keyed attribute map whose values are strings,
integers, or floats.  ``encode_event``/``decode_event`` define the one wire
representation shared by every runtime, built on :mod:`cepless.canonical`.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Union

from .canonical import CanonicalError, canonical_bytes, parse_canonical

__all__ = [
    "AttrValue",
    "Event",
    "EventBatch",
    "Direction",
    "QueuePair",
    "EncodingError",
    "DecodingError",
    "encode_event",
    "decode_event",
    "is_valid_queue_name",
    "validate_queue_name",
    "MAX_SEQ",
    "MIN_TS",
    "MAX_TS",
]

AttrValue = Union[str, int, float]

MAX_SEQ = 2**64 - 1
MIN_TS = -(2**63)
MAX_TS = 2**63 - 1

_QUEUE_NAME_RE = re.compile(r"^[a-z0-9-]{1,64}$")


class EncodingError(ValueError):
    """An event violates the wire contract and cannot be encoded."""


class DecodingError(ValueError):
    """Bytes on the wire do not form a valid event.

    ``key`` names the offending top-level key or attribute, or None when the
    document itself is malformed.
    """

    def __init__(self, key: str | None, message: str):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


@dataclass(frozen=True, slots=True)
class Event:
    """One event.  ``ts_produced`` is microseconds; ``attrs`` is flat."""

    seq: int
    ts_produced: int
    attrs: Mapping[str, AttrValue] = field(default_factory=dict)


def _check_int(value: int, key: str, lo: int, hi: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise EncodingError(f"{key} must be an int, got {type(value).__name__}")
    if not lo <= value <= hi:
        raise EncodingError(f"{key}={value} outside [{lo}, {hi}]")


def encode_event(event: Event) -> bytes:
    """Encode an event into its canonical byte representation.

    The document has exactly the top-level keys ``seq``, ``ts``, ``attrs``.
    Raises EncodingError on out-of-range integers, non-scalar or boolean
    attribute values, non-finite floats, empty attribute names, or strings
    that UTF-8 cannot carry.
    """
    _check_int(event.seq, "seq", 0, MAX_SEQ)
    _check_int(event.ts_produced, "ts", MIN_TS, MAX_TS)
    if not isinstance(event.attrs, Mapping):
        raise EncodingError(f"attrs must be a mapping, got {type(event.attrs).__name__}")
    attrs: dict[str, AttrValue] = {}
    for name, value in event.attrs.items():
        if not isinstance(name, str) or not name:
            raise EncodingError(f"attribute name must be a non-empty string, got {name!r}")
        if isinstance(value, bool):
            raise EncodingError(f"attrs[{name}]: booleans are not event scalars")
        if isinstance(value, int):
            _check_int(value, f"attrs[{name}]", MIN_TS, MAX_TS)
        elif isinstance(value, float):
            if not math.isfinite(value):
                raise EncodingError(f"attrs[{name}]: non-finite float {value!r}")
        elif not isinstance(value, str):
            raise EncodingError(
                f"attrs[{name}]: value must be str, int, or float, got {type(value).__name__}"
            )
        attrs[name] = value
    try:
        return canonical_bytes({"seq": event.seq, "ts": event.ts_produced, "attrs": attrs})
    except CanonicalError as exc:
        raise EncodingError(str(exc)) from exc


def decode_event(data: bytes | str) -> Event:
    """Decode wire bytes into an Event, validating the full contract."""
    try:
        doc = parse_canonical(data)
    except CanonicalError as exc:
        raise DecodingError(None, str(exc)) from exc
    if not isinstance(doc, dict):
        raise DecodingError(None, f"event document must be an object, got {type(doc).__name__}")
    extra = set(doc) - {"seq", "ts", "attrs"}
    if extra:
        raise DecodingError(sorted(extra)[0], "unexpected top-level key")
    for key in ("seq", "ts", "attrs"):
        if key not in doc:
            raise DecodingError(key, "missing")

    seq = doc["seq"]
    if not isinstance(seq, int) or isinstance(seq, bool) or not 0 <= seq <= MAX_SEQ:
        raise DecodingError("seq", f"must be an integer in [0, 2**64), got {seq!r}")
    ts = doc["ts"]
    if not isinstance(ts, int) or isinstance(ts, bool) or not MIN_TS <= ts <= MAX_TS:
        raise DecodingError("ts", f"must be a 64-bit integer, got {ts!r}")
    raw_attrs = doc["attrs"]
    if not isinstance(raw_attrs, dict):
        raise DecodingError("attrs", f"must be an object, got {type(raw_attrs).__name__}")
    attrs: dict[str, AttrValue] = {}
    for name, value in raw_attrs.items():
        if not name:
            raise DecodingError("attrs", "attribute name must be non-empty")
        if isinstance(value, bool) or not isinstance(value, (str, int, float)):
            raise DecodingError(name, f"attribute must be a scalar, got {value!r}")
        if isinstance(value, int) and not MIN_TS <= value <= MAX_TS:
            raise DecodingError(name, f"integer attribute {value} outside 64-bit range")
        attrs[name] = value
    return Event(seq=seq, ts_produced=ts, attrs=attrs)


class Direction(enum.Enum):
    """Which side of an operator a batch is moving toward."""

    TO_OPERATOR = "in"
    FROM_OPERATOR = "out"


@dataclass(frozen=True, slots=True)
class EventBatch:
    """An ordered group of events moving in one direction."""

    events: tuple[Event, ...]
    direction: Direction

    def __len__(self) -> int:
        return len(self.events)


def is_valid_queue_name(name: str) -> bool:
    """Queue names are 1-64 chars of [a-z0-9-]."""
    return isinstance(name, str) and _QUEUE_NAME_RE.fullmatch(name) is not None


def validate_queue_name(name: str) -> str:
    if not is_valid_queue_name(name):
        raise ValueError(f"invalid queue name {name!r} (want 1-64 chars of [a-z0-9-])")
    return name


@dataclass(frozen=True, slots=True)
class QueuePair:
    """The two queues wired to one operator instance.

    ``input`` carries events toward the operator and ends in ``-in``;
    ``output`` carries its results and ends in ``-out``; both share the
    instance stem.
    """

    input: str
    output: str

    def __post_init__(self) -> None:
        validate_queue_name(self.input)
        validate_queue_name(self.output)
        if not self.input.endswith("-in"):
            raise ValueError(f"input queue {self.input!r} must end in '-in'")
        if not self.output.endswith("-out"):
            raise ValueError(f"output queue {self.output!r} must end in '-out'")
        if self.input[:-3] != self.output[:-4]:
            raise ValueError(
                f"queue pair stems differ: {self.input!r} vs {self.output!r}"
            )

    @property
    def stem(self) -> str:
        return self.input[:-3]

    @classmethod
    def for_instance(cls, instance_id: str) -> "QueuePair":
        return cls(input=f"{instance_id}-in", output=f"{instance_id}-out")
