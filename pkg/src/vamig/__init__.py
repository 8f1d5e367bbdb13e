"""Trust-aware vehicular edge-agent migration testbed with a diffusion-policy
reinforcement learner."""

from .config import (ExperimentConfig, FullConfig, TrainerConfig, TrustConfig,
                     WorldConfig, load_config)
from .diffusion import DiffusionPolicy, NoiseSchedule
from .env import MigrationEnv, decode_action
from .learner import ReplayBuffer, Trainer, train
from .trust import TrustEngine

__version__ = "0.1.0"

__all__ = [
    "DiffusionPolicy", "ExperimentConfig", "FullConfig", "MigrationEnv",
    "NoiseSchedule", "ReplayBuffer", "Trainer", "TrainerConfig", "TrustConfig",
    "TrustEngine", "WorldConfig", "decode_action", "load_config", "train",
    "__version__",
]
