"""Experiment protocols: configuration, repetitions, sweeps and outputs."""

from .config import PRESETS, ExperimentConfig, get_preset, load_config
from .outputs import emit_outputs, load_records, trend_report
from .runner import (
    RunRecord,
    SweepResult,
    aggregate,
    dropout_rate_sweep,
    run_experiment,
    train_with_checkpoint,
)

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "RunRecord",
    "SweepResult",
    "aggregate",
    "dropout_rate_sweep",
    "emit_outputs",
    "get_preset",
    "load_config",
    "load_records",
    "run_experiment",
    "train_with_checkpoint",
    "trend_report",
]
