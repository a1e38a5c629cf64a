"""Graph-world VLN simulator and the SUSA-style differentiable agent."""

from .estimator import SusaNavigator
from .model import ModelConfig, SusaModel, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train, evaluate
from .world import WorldParams, World, Episode, generate_world, make_episode, observe

__all__ = [
    "SusaNavigator", "ModelConfig", "SusaModel", "load_checkpoint",
    "save_checkpoint", "TrainConfig", "train", "evaluate", "WorldParams",
    "World", "Episode", "generate_world", "make_episode", "observe",
]

__version__ = "0.1.0"
