"""Load/latency measurement harness comparing in-process pipelines with
queue-backed operator pipelines."""
