"""Benchmark harness: data handling, experiment runner and CLI."""
