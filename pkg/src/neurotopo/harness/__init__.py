"""Experiment orchestration: config loading, the training run, and reports."""

from .config import RunConfig, load_config, validate_config
from .runner import RunLog, run

__all__ = ["RunConfig", "RunLog", "load_config", "run", "validate_config"]
