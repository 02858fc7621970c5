"""Command line front end for the benchmark harness.

    cepless-bench run --mode cepless --query forward --rate 1000 --duration 60
    cepless-bench report out/*.json
    cepless-bench serve-all --registry ./registry

`run` is self-contained by default: it boots a private queue server,
registry, and node manager for the duration of the runs.  Point it at an
already-running stack with --control.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path

from .. import contract
from ..canonical import canonical_text, parse_canonical
from ..manager import ControlServer, NodeManager, ProcessBackend
from ..operators import publish_reference_operators
from ..registry import Registry
from ..server import QueueServer
from .harness import BenchServices, RateError, RunConfig, run_once
from .metrics import RunMetrics, aggregate_table


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["direct", "cepless"], default="cepless")
    p.add_argument("--query", choices=["forward", "fraud"], default="forward")
    p.add_argument("--threshold", type=float, default=0.78,
                   help="fraud threshold; must match a published operator version")
    p.add_argument("--rate", type=float, default=1000.0, help="events per second")
    p.add_argument("--duration", type=float, default=10.0, help="measured seconds")
    p.add_argument("--warmup", type=float, default=2.0, help="seconds excluded from metrics")
    p.add_argument("--in-batch-size", type=int, default=4096)
    p.add_argument("--out-batch-size", type=int, default=512)
    p.add_argument("--backoff-ns", type=int, default=100_000)
    p.add_argument("--update-at", type=float, default=None,
                   help="seconds into the measured window to swap operator versions")
    p.add_argument("--update-version", default="2.0.0")
    p.add_argument("--redeploy-baseline", action="store_true",
                   help="full teardown+redeploy instead of a hot update")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--no-samples", action="store_true",
                   help="drop raw latency samples from the run documents")
    p.add_argument("--control", default=None,
                   help="host:port of a running control endpoint (default: self-contained)")
    p.add_argument("--out", default=None, help="directory for per-run metric documents")


def _config_from(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        mode=args.mode,
        query=args.query,
        threshold=args.threshold,
        rate=args.rate,
        duration_s=args.duration,
        warmup_s=args.warmup,
        in_batch=args.in_batch_size,
        out_batch=args.out_batch_size,
        backoff_ns=args.backoff_ns,
        seed=args.seed,
        keep_samples=not args.no_samples,
        update_at=args.update_at,
        update_version=args.update_version,
        redeploy=args.redeploy_baseline,
    )


def _run_line(run: RunMetrics) -> str:
    lat = run.latency
    line = (
        f"{run.mode}/{run.query} rate={run.target_rate:.0f} seed={run.seed}: "
        f"delivered={run.delivered} throughput={run.throughput_eps:.1f}/s "
        f"lost={run.lost} dup={run.duplicates}"
    )
    if lat.get("count"):
        line += f" lat mean={lat['mean_ms']:.3f}ms p99={lat['p99_ms']:.3f}ms"
    if run.update:
        style = run.update.get("style")
        stall = run.update.get("max_stall_ms")
        line += f" update[{style}] dur={run.update.get('duration_ms', 0):.0f}ms"
        if stall is not None:
            line += f" stall={stall:.1f}ms"
    if run.rate_error:
        line += " RATE-ERROR"
    return line


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from(args)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    services = None
    if config.mode == "cepless" and args.control:
        services = BenchServices.external(args.control)

    status = 0
    completed: list[RunMetrics] = []
    for k in range(args.runs):
        run_config = replace(config, seed=config.seed + k)
        try:
            run = run_once(run_config, services)
        except RateError as exc:
            run = exc.metrics
            print(f"run {k}: {exc}", file=sys.stderr)
            status = 1
        completed.append(run)
        print(_run_line(run))
        if out_dir:
            name = f"{run.mode}-{run.query}-{run.target_rate:.0f}-{k:02d}.json"
            (out_dir / name).write_text(canonical_text(run.to_doc()) + "\n")
    if len(completed) > 1:
        print()
        print(aggregate_table(completed))
    return status


def cmd_report(args: argparse.Namespace) -> int:
    paths: list[Path] = []
    for raw in args.files:
        p = Path(raw)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not paths:
        print("no metric documents found", file=sys.stderr)
        return 1
    runs = [RunMetrics.from_doc(parse_canonical(p.read_text())) for p in paths]
    print(aggregate_table(runs))
    updates = [r for r in runs if r.update]
    for r in updates:
        print()
        print(_run_line(r))
    return 0


def cmd_serve_all(args: argparse.Namespace) -> int:
    root = Path(args.registry)
    server = QueueServer(args.host, args.queue_port).start()
    registry = Registry(root)
    publish_reference_operators(registry, root / ".scratch", ignore_existing=True)
    manager = NodeManager(
        registry,
        server.address,
        backend=ProcessBackend(Path(args.logs)),
    )
    control = ControlServer(manager, args.host, args.control_port).start()
    print(f"queue server on {contract.format_address(server.address)}")
    print(f"control endpoint on {contract.format_address(control.address)}")
    print(f"registry at {root.resolve()}")

    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    control.stop()
    manager.close()
    server.stop()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cepless-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one benchmark configuration")
    _add_run_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="aggregate saved run documents")
    p_report.add_argument("files", nargs="+", help="run documents or directories of them")
    p_report.set_defaults(func=cmd_report)

    p_serve = sub.add_parser("serve-all", help="boot queue server, registry, and manager")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--queue-port", type=int, default=contract.DEFAULT_QUEUE_PORT)
    p_serve.add_argument("--control-port", type=int, default=contract.DEFAULT_CONTROL_PORT)
    p_serve.add_argument("--registry", default="./cepless-registry")
    p_serve.add_argument("--logs", default="./cepless-logs")
    p_serve.set_defaults(func=cmd_serve_all)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
