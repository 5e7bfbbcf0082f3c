"""Text-guided shifted-window transformer U-Net on a from-scratch autodiff core."""

from .autodiff import Tensor, backward, no_grad
from .config import LossConfig, ModelConfig, RunConfig, ScheduleConfig, StageSpec, parse_config
from .model import SwinTextUNet

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "ModelConfig",
    "StageSpec",
    "LossConfig",
    "ScheduleConfig",
    "RunConfig",
    "parse_config",
    "SwinTextUNet",
    "__version__",
]
