"""Reference operator packages.

Builds the small self-contained packages used by tests, the bench harness,
and serve-all: a directory holding an ``operator.json`` config plus a
``main.py`` that enters the worker runtime.  Real deployments publish their
own directories; these exist so a fresh checkout has something to run.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

from .registry import ConflictError, OperatorDescriptor, Registry

__all__ = ["write_operator_package", "publish_operator", "publish_reference_operators"]

_MAIN_PY = """\
from cepless.worker import main

if __name__ == "__main__":
    raise SystemExit(main())
"""


def write_operator_package(
    dest: Path | str, kind: str, threshold: Optional[float] = None
) -> Path:
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    config: dict = {"kind": kind}
    if threshold is not None:
        config["threshold"] = threshold
    (dest / "operator.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    (dest / "main.py").write_text(_MAIN_PY)
    return dest


def publish_operator(
    registry: Registry,
    name: str,
    version: str,
    kind: str,
    threshold: Optional[float] = None,
    *,
    scratch: Path | str,
) -> OperatorDescriptor:
    package = write_operator_package(Path(scratch) / f"{name}-{version}", kind, threshold)
    return registry.publish(
        name, version, [sys.executable or "python3", "main.py"], package
    )


_REFERENCE_SET = [
    ("forward-op", "1.0.0", "forward", None),
    ("forward-op", "2.0.0", "forward", None),
    ("fraud-filter", "1.0.0", "fraud", 0.78),
    ("fraud-filter", "1.1.0", "fraud", 0.9),
    ("fraud-filter", "2.0.0", "fraud", 0.5),
]


def publish_reference_operators(
    registry: Registry, scratch: Path | str, *, ignore_existing: bool = False
) -> list[OperatorDescriptor]:
    """Publish the stock operators a fresh environment needs.

    forward-op@1.0.0 and 2.0.0, fraud-filter@1.0.0 (threshold 0.78), plus
    the threshold variants the update experiment swaps between: 1.1.0 at
    0.9 and 2.0.0 at 0.5.  With ``ignore_existing`` a restock against a
    populated registry keeps whatever is already published.
    """
    out = []
    for name, version, kind, threshold in _REFERENCE_SET:
        try:
            out.append(publish_operator(registry, name, version, kind, threshold, scratch=scratch))
        except ConflictError:
            if not ignore_existing:
                raise
    return out
