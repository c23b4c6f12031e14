"""Benchmark scenarios, harness, and a minimal control-channel client."""
