"""Experiment harness: configuration, run modes, artifacts and the CLI."""

from .config import ExperimentConfig, load_config, parse_config
from .runner import SweepReport, compare_bogolyubov, grad_sweep, run_experiment

__all__ = ["ExperimentConfig", "load_config", "parse_config", "SweepReport",
           "compare_bogolyubov", "grad_sweep", "run_experiment"]
