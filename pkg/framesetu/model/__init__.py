from .config import ModelConfig
from .pipeline import FrameInterpolator, build_model

__all__ = ["ModelConfig", "FrameInterpolator", "build_model"]
