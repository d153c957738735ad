"""Multi-agent MAC protocol learning with per-agent learned intrinsic
rewards: contention environment, hand-rolled network kernels, the
two-timescale trainer, and the experiment harness."""

__version__ = "0.1.0"

from .config import ExperimentConfig, RunMode, load_config, save_config
from .env import Action, MacEnv, Observation, StepOutcome
from .errors import (ConfigError, MaclearnError, NumericError, ProtocolError,
                     ShapeError)

__all__ = [
    "Action", "ConfigError", "ExperimentConfig", "MacEnv", "MaclearnError",
    "NumericError", "Observation", "ProtocolError", "RunMode", "ShapeError",
    "StepOutcome", "load_config", "save_config", "__version__",
]
