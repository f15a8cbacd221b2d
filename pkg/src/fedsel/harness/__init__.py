"""Experiment harness: config parsing, runners, plots, CLI, verification."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runner import run_experiment, run_rate_convergence
from .plots import emit_plots
from ..records import RoundRecord  # noqa: F401  (round artifacts live with the engine)
