from .config import ConfigError, format_config, parse_config, validate_config
from .experiments import SweepResult, SweepRow, run_experiment
from .fits import fit_reconnection_scaling

__all__ = [
    "ConfigError",
    "parse_config",
    "format_config",
    "validate_config",
    "run_experiment",
    "SweepResult",
    "SweepRow",
    "fit_reconnection_scaling",
]
