"""
framesetu/model/pipeline.py

Wires the feature encoder, the asymmetric blender and the conditional flow
generator into one module:

    f0, f1   = E(I0), E(I1)
    f_t      = ASB(f0, f1, F01, F10, t)
    nll      = -log p(I_t | f_t)
    I_t      = G^-1(z; f_t),  z ~ N(0, tau^2)
"""

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ShapeError
from ..ops.warp import check_finite
from ..seeding import seeded
from .asb import AsymmetricBlender, BlendResult
from .config import ModelConfig
from .nflow import ConditionalFlowGenerator, bits_per_dim, sample_latent
from .pyramid import FeatureEncoder

logger = logging.getLogger(__name__)

QUANTUM = 1.0 / 255.0


def to_model_range(image):
    """[0, 1] intensities -> [-0.5, 0.5]."""
    return image - 0.5


def from_model_range(x):
    return x + 0.5


def dequantize(x, generator):
    """Uniform noise one quantisation step wide."""
    noise = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device)
    return x + noise * QUANTUM


@dataclass
class Condition:
    blend: BlendResult

    @property
    def ft(self):
        return self.blend.ft


class FrameInterpolator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or ModelConfig()
        self.encoder = FeatureEncoder(self.config.channel_plan)
        self.blender = AsymmetricBlender(self.config)
        self.generator = ConditionalFlowGenerator(self.config)

    def check_frames(self, *frames):
        multiple = self.config.size_multiple
        shapes = {tuple(f.shape) for f in frames}
        if len(shapes) != 1:
            raise ShapeError(f"frames disagree in shape: {sorted(shapes)}")
        h, w = frames[0].shape[-2:]
        if h % multiple or w % multiple:
            raise ShapeError(
                f"frame size {h}×{w} is not supported: height and width must be divisible by {multiple}"
            )
        check_finite(**{f"frame{i}": f for i, f in enumerate(frames)})

    def condition(self, I0, I1, flow01, flow10, t, training=False, generator=None):
        self.check_frames(I0, I1)
        f0 = self.encoder(to_model_range(I0))
        f1 = self.encoder(to_model_range(I1))
        blend = self.blender(f0, f1, flow01, flow10, t, training=training, generator=generator)
        return Condition(blend=blend)

    def nll(self, It, cond, generator=None):
        """Batch-mean NLL of It in nats; dequantised when a generator is given."""
        x = to_model_range(It)
        if generator is not None:
            x = dequantize(x, generator)
        return self.generator.nll(x, cond.ft)

    def decode(self, zs, cond):
        """Raw decode in [0, 1] units, not clamped."""
        return from_model_range(self.generator.decode(zs, cond.ft))

    @torch.no_grad()
    def interpolate(self, I0, I1, flow01, flow10, t=0.5, tau=0.3, generator=None):
        """Sample one intermediate frame per batch item, clamped to [0, 1]."""
        cond = self.condition(I0, I1, flow01, flow10, t)
        h, w = I0.shape[-2:]
        zs = sample_latent(
            self.generator.latent_shapes(h, w), tau, generator,
            batch=I0.shape[0], dtype=I0.dtype, device=I0.device,
        )
        return self.decode(zs, cond).clamp(0.0, 1.0)

    def bits_per_dim(self, nll, image):
        """Discrete 8-bit bits per dimension of a per-image NLL in model units."""
        dims = image[0].numel()
        return bits_per_dim(nll + dims * math.log(255.0), dims)


def build_model(config, seed=None):
    """Reproducible FrameInterpolator; seed defaults to config.seed."""
    seed = config.seed if seed is None else seed
    with seeded(seed):
        model = FrameInterpolator(config)
    n_params = sum(p.numel() for p in model.parameters())
    logger.info(
        f"[Model] Built FrameInterpolator levels={config.channel_plan} "
        f"L={config.flow_levels} K={config.flow_steps} params={n_params}"
    )
    return model
