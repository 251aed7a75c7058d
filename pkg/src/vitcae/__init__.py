"""Class-token-conditioned hierarchical ViT autoencoder with per-head attention control."""

from .config import TrainConfig, dump_config, load_config, parse_config
from .dynamics import (
    DiscreteDistribution,
    FreezePolicy,
    HeadState,
    OpinionSystem,
    check_converged,
    consensus_rank,
    freeze_head,
    simulate_opinions,
    update_temperature,
    w1_distance,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateDistributionError,
    DimensionError,
    IntegrationError,
    NumericDomainError,
    TrainingError,
    VitcaeError,
)
from .model import ViTCAE
from .trainer import Trainer, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DegenerateDistributionError", "DimensionError", "DiscreteDistribution",
    "FreezePolicy", "HeadState", "IntegrationError", "NumericDomainError", "OpinionSystem", "TrainConfig",
    "Trainer", "TrainingError", "ViTCAE", "VitcaeError", "check_converged", "consensus_rank", "dump_config",
    "freeze_head", "load_config", "parse_config", "simulate_opinions", "train", "update_temperature",
    "w1_distance",
]
