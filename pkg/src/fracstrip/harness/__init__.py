"""Configuration-driven experiments and the ``fracstrip`` command line."""

from .config import KINDS, ExperimentConfig, load_config, parse_config
from .experiments import HEADERS, RunReport, calibrate_k0, run

__all__ = ["KINDS", "ExperimentConfig", "load_config", "parse_config", "HEADERS", "RunReport",
           "calibrate_k0", "run"]
