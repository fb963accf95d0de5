"""Experiment harness: configuration, runs, ablation suites and reports."""

from .experiment import (
    ExperimentConfig,
    ResultsBundle,
    GridTable,
    COMPONENTS,
    fingerprint,
    run,
    gamma_sweep,
    ablate,
    stage_means,
)
from .reporting import StageSummary, summarize, to_tsv, plot_curves, report

__all__ = [
    "ExperimentConfig",
    "ResultsBundle",
    "GridTable",
    "COMPONENTS",
    "fingerprint",
    "run",
    "gamma_sweep",
    "ablate",
    "stage_means",
    "StageSummary",
    "summarize",
    "to_tsv",
    "plot_curves",
    "report",
]
