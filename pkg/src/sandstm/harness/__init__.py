"""Benchmark harness: workloads, hazard scenarios, repetition rule, reports and CLI."""
