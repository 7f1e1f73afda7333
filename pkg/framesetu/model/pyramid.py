"""
framesetu/model/pyramid.py

Feature encoder E_θ: frame (B×3×H×W) -> list of L feature grids, level l at
H/2^l × W/2^l with channel_plan[l] channels.
"""

import logging

import torch
import torch.nn as nn

from ..errors import ShapeError, ValidationError
from ..ops.warp import check_finite
from ..seeding import seeded

logger = logging.getLogger(__name__)

DEFAULT_CHANNEL_PLAN = (32, 64, 96)
NEGATIVE_SLOPE = 0.2


class FeatureEncoder(nn.Module):
    """Per level: two 3×3 convolutions with LeakyReLU; levels > 0 open with stride 2."""

    def __init__(self, channel_plan=DEFAULT_CHANNEL_PLAN, in_channels=3):
        super().__init__()
        if not channel_plan:
            raise ValidationError("channel plan must name at least one level")
        self.channel_plan = tuple(int(c) for c in channel_plan)

        levels = []
        prev = in_channels
        for i, ch in enumerate(self.channel_plan):
            levels.append(nn.Sequential(
                nn.Conv2d(prev, ch, 3, stride=1 if i == 0 else 2, padding=1),
                nn.LeakyReLU(NEGATIVE_SLOPE),
                nn.Conv2d(ch, ch, 3, padding=1),
                nn.LeakyReLU(NEGATIVE_SLOPE),
            ))
            prev = ch
        self.levels = nn.ModuleList(levels)

    @property
    def num_levels(self):
        return len(self.channel_plan)

    def forward(self, image):
        if image.dim() != 4:
            raise ShapeError(f"image must be B×C×H×W, got {tuple(image.shape)}")
        factor = 2 ** (self.num_levels - 1)
        h, w = image.shape[-2:]
        if h % factor or w % factor:
            raise ShapeError(
                f"frame size {h}×{w} must be divisible by {factor} for a {self.num_levels}-level pyramid"
            )
        check_finite(image=image)

        pyramid = []
        feat = image
        for level in self.levels:
            feat = level(feat)
            pyramid.append(feat)
        return pyramid


def init_encoder(seed, channel_plan=DEFAULT_CHANNEL_PLAN):
    """Reproducible encoder; conv weights use PyTorch's fan-in scaled default init."""
    with seeded(seed):
        encoder = FeatureEncoder(channel_plan)
    logger.debug(f"[Encoder] Initialised levels={encoder.channel_plan} seed={seed}")
    return encoder


def encode(params, image):
    return params(image)
