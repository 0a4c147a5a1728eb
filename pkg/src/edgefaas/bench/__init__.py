"""Benchmark harness: scenarios, drivers, statistics and reports."""

from .drivers import (
    DeploymentMissing,
    LinkDown,
    run_faas_bench,
    run_latency_bench,
    run_percolate_bench,
    run_pubsub_reports,
)
from .report import BenchReport, IoError, emit_report, read_report
from .scenario import IncompleteLinks, ParseError, Scenario, builtin_scenario, load_scenario
from .stats import EmptySamples, summarize

__all__ = [
    "BenchReport", "DeploymentMissing", "EmptySamples", "IncompleteLinks", "IoError", "LinkDown",
    "ParseError", "Scenario", "builtin_scenario", "emit_report", "load_scenario", "read_report",
    "run_faas_bench", "run_latency_bench", "run_percolate_bench", "run_pubsub_reports", "summarize",
]
