"""Disentangled imputed video autoencoder for video with missing data."""
from .config import ConfigError, ModelConfig, TrainConfig, config_hash
from .model import DIVE, DiveOutput, NumericalError
from .noise import Noise

__version__ = "0.1.0"
