"""Names shared across process boundaries.

Workers may be written in any language, so everything a worker and the
platform must agree on byte-for-byte lives here: environment variable
names, control-queue payloads, queue name suffixes, and default ports.
"""
from __future__ import annotations

__all__ = [
    "ENV_QUEUE_ADDR",
    "ENV_IN_QUEUE",
    "ENV_OUT_QUEUE",
    "ENV_CTL_QUEUE",
    "ENV_BATCH_SIZE",
    "ENV_BACKOFF_NS",
    "ENV_REGISTRY",
    "CTL_READY",
    "CTL_ACTIVATE",
    "CTL_DRAIN",
    "CTL_DRAINED",
    "IN_SUFFIX",
    "OUT_SUFFIX",
    "CTL_SUFFIX",
    "DLQ_SUFFIX",
    "DEFAULT_QUEUE_PORT",
    "DEFAULT_CONTROL_PORT",
    "parse_address",
    "format_address",
]

# Environment contract handed to every worker process.
ENV_QUEUE_ADDR = "CEPLESS_QUEUE_ADDR"
ENV_IN_QUEUE = "CEPLESS_IN_QUEUE"
ENV_OUT_QUEUE = "CEPLESS_OUT_QUEUE"
ENV_CTL_QUEUE = "CEPLESS_CTL_QUEUE"
ENV_BATCH_SIZE = "CEPLESS_BATCH_SIZE"
ENV_BACKOFF_NS = "CEPLESS_BACKOFF_NS"

# Environment override for the registry root (CLI tools).
ENV_REGISTRY = "CEPLESS_REGISTRY"

# Control-queue payloads.  The control queue is an append-only log that both
# sides read with RANGE at their own offsets and never trim; each side reacts
# only to the payloads addressed to it.
CTL_READY = b"__ready__"        # worker -> manager: booted, waiting for activation
CTL_ACTIVATE = b"__activate__"  # manager -> worker: begin consuming the input queue
CTL_DRAIN = b"__drain__"        # manager -> worker: finish current batch, then stop
CTL_DRAINED = b"__drained__"    # worker -> manager: stopped cleanly, about to exit

# Queue naming scheme around an operator instance id.
IN_SUFFIX = "-in"
OUT_SUFFIX = "-out"
CTL_SUFFIX = "-ctl"
DLQ_SUFFIX = "-dlq"

DEFAULT_QUEUE_PORT = 6480
DEFAULT_CONTROL_PORT = 6481


def parse_address(text: str, default_port: int) -> tuple[str, int]:
    """Parse ``host:port`` (port optional) into a (host, port) pair."""
    text = text.strip()
    if not text:
        raise ValueError("empty address")
    if ":" in text:
        host, _, port_text = text.rpartition(":")
        try:
            port = int(port_text)
        except ValueError as exc:
            raise ValueError(f"bad port in address {text!r}") from exc
        if not 0 <= port <= 65535:
            raise ValueError(f"port {port} out of range in {text!r}")
        return (host or "127.0.0.1", port)
    return (text, default_port)


def format_address(address: tuple[str, int]) -> str:
    return f"{address[0]}:{address[1]}"
