"""Configuration, experiment drivers, reports and the command line."""

from .config import RunConfig, load_config
from .experiments import EXPERIMENTS, run_experiment
from .report import emit_report

__all__ = ["RunConfig", "load_config", "EXPERIMENTS", "run_experiment", "emit_report"]
