from .config import ConfigError, ExperimentConfig, config_hash, parse_config
from .experiments import run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "config_hash", "parse_config",
           "run_experiment"]
