"""Differential GAN: attribute transfer with a standard and a differential discriminator."""
from .core import EXPRESSIONS, ConfigError, RunConfig, ShapeError, load_config
from .trainer import TrainState, init_state, load_checkpoint, save_checkpoint, train, train_step

__version__ = "0.1.0"

__all__ = [
    "EXPRESSIONS", "ConfigError", "RunConfig", "ShapeError", "load_config",
    "TrainState", "init_state", "load_checkpoint", "save_checkpoint", "train", "train_step",
]
