"""Experiment harness: configs, seeding, eigen-cache, aggregation and the CLI."""

from .config import ExperimentConfig, config_hash, load_config  # noqa: F401
from .experiments import run_experiment  # noqa: F401
