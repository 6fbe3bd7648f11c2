"""Benchmarks: accuracy/time/bootstrap metrics and the sweep runner."""
from .metrics import (
    EPR_INFINITE,
    accuracy,
    epr,
    epr_long_from_series,
    mem_per_token,
    pbs_per_token,
    throughput,
)
from .runner import (
    CSV_COLUMNS,
    CSV_SCHEMA,
    CellResult,
    ExperimentSpec,
    GenerationReport,
    StepOutcome,
    render_csv,
    render_json,
    run_experiment,
)

__all__ = [
    "EPR_INFINITE",
    "accuracy",
    "epr",
    "epr_long_from_series",
    "mem_per_token",
    "pbs_per_token",
    "throughput",
    "CSV_COLUMNS",
    "CSV_SCHEMA",
    "CellResult",
    "ExperimentSpec",
    "GenerationReport",
    "StepOutcome",
    "render_csv",
    "render_json",
    "run_experiment",
]
