"""Benchmark harness and command line interface."""
