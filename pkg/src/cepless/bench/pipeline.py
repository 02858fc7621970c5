"""Query graphs and the two pipeline flavours the harness can drive.

A query is a linear chain source -> operator* -> sink.  The direct flavour
runs each operator as an in-process function over `Event` objects (the
native-operator baseline); the queue-backed flavour deploys each operator
through the node manager and moves canonical payload bytes through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..events import Event


class GraphError(ValueError):
    pass


_KINDS = frozenset({"source", "sink", "forward", "filter"})


@dataclass(frozen=True)
class Vertex:
    id: str
    kind: str
    params: tuple = ()

    def param(self, key: str, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class QueryGraph:
    vertices: tuple
    edges: tuple

    def vertex(self, vid: str) -> Vertex:
        for v in self.vertices:
            if v.id == vid:
                return v
        raise GraphError(f"unknown vertex: {vid}")


def validate_chain(graph: QueryGraph) -> list[Vertex]:
    """Check the graph is a single source->...->sink chain; return it in order."""
    ids = [v.id for v in graph.vertices]
    if len(set(ids)) != len(ids):
        raise GraphError("duplicate vertex id")
    for v in graph.vertices:
        if v.kind not in _KINDS:
            raise GraphError(f"unknown vertex kind: {v.kind}")
    sources = [v for v in graph.vertices if v.kind == "source"]
    sinks = [v for v in graph.vertices if v.kind == "sink"]
    if len(sources) != 1 or len(sinks) != 1:
        raise GraphError("need exactly one source and one sink")

    succ: dict[str, str] = {}
    indeg: dict[str, int] = {vid: 0 for vid in ids}
    for src, dst in graph.edges:
        if src not in indeg or dst not in indeg:
            raise GraphError(f"edge references unknown vertex: {src}->{dst}")
        if src in succ:
            raise GraphError(f"vertex has two successors: {src}")
        succ[src] = dst
        indeg[dst] += 1
    for vid, n in indeg.items():
        if n > 1:
            raise GraphError(f"vertex has two predecessors: {vid}")

    order = [sources[0]]
    seen = {sources[0].id}
    cur = sources[0].id
    while cur in succ:
        cur = succ[cur]
        if cur in seen:
            raise GraphError("cycle detected")
        seen.add(cur)
        order.append(graph.vertex(cur))
    if order[-1].kind != "sink":
        raise GraphError("chain does not end at the sink")
    if len(order) != len(ids):
        raise GraphError("disconnected vertices present")
    for v in order[1:-1]:
        if v.kind in ("source", "sink"):
            raise GraphError(f"{v.kind} in the middle of the chain")
    return order


def forward_query() -> QueryGraph:
    return QueryGraph(
        vertices=(
            Vertex("src", "source"),
            Vertex("fwd", "forward", (("operator", "forward-op"),)),
            Vertex("out", "sink"),
        ),
        edges=(("src", "fwd"), ("fwd", "out")),
    )


def fraud_query(threshold: float, operator: str = "fraud-filter", version: str | None = None) -> QueryGraph:
    params = [("operator", operator), ("threshold", threshold)]
    if version is not None:
        params.append(("version", version))
    return QueryGraph(
        vertices=(
            Vertex("src", "source"),
            Vertex("flt", "filter", tuple(params)),
            Vertex("out", "sink"),
        ),
        edges=(("src", "flt"), ("flt", "out")),
    )


def direct_stage(vertex: Vertex):
    """In-process function for one middle vertex: Event -> Event | None."""
    if vertex.kind == "forward":
        return lambda event: event
    if vertex.kind == "filter":
        threshold = float(vertex.param("threshold"))

        def stage(event: Event):
            return event if event.attrs["amount"] > threshold else None

        return stage
    raise GraphError(f"no direct implementation for kind: {vertex.kind}")


class DirectPipeline:
    """The whole middle of the chain fused into one callable."""

    def __init__(self, graph: QueryGraph):
        chain = validate_chain(graph)
        self._stages = [direct_stage(v) for v in chain[1:-1]]

    def process(self, event: Event) -> Event | None:
        for stage in self._stages:
            event = stage(event)
            if event is None:
                return None
        return event


_SEQ_KEY = b'"seq":'
_TS_KEY = b'"ts":'


def extract_seq_ts(payload: bytes) -> tuple[int, int]:
    """Pull seq and ts out of a canonical event payload without a JSON parse.

    Canonical events end with ,"seq":N,"ts":M} and neither key can occur
    later in the document, so searching from the right is unambiguous.
    """
    ts_at = payload.rindex(_TS_KEY)
    seq_at = payload.rindex(_SEQ_KEY, 0, ts_at)
    seq = int(payload[seq_at + len(_SEQ_KEY):payload.index(b",", seq_at)])
    ts = int(payload[ts_at + len(_TS_KEY):-1])
    return seq, ts


@dataclass
class SinkRecord:
    """Accumulates delivery observations at the end of a pipeline."""

    seqs: list = field(default_factory=list)
    recv_us: list = field(default_factory=list)
    latency_us: list = field(default_factory=list)

    def add(self, seq: int, sent_us: int, recv_us: int) -> None:
        self.seqs.append(seq)
        self.recv_us.append(recv_us)
        self.latency_us.append(recv_us - sent_us)

    def __len__(self) -> int:
        return len(self.seqs)
