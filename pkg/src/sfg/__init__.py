"""Structure flow-guided depth super-resolution."""

from .config import ModelConfig, RunConfig, TrainConfig
from .data import DegradationConfig, DepthMap, RGBImage, SamplePair
from .model import SFGNet, load_checkpoint, save_checkpoint

__all__ = [
    "DegradationConfig", "DepthMap", "ModelConfig", "RGBImage", "RunConfig", "SFGNet",
    "SamplePair", "TrainConfig", "load_checkpoint", "save_checkpoint",
]
