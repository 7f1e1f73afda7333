"""
framesetu/model/nflow.py

Conditional normalizing-flow generator z = G(I_t; f_t) and its exact inverse.

Every invertible layer follows the same contract:

    h, logdet = layer(h, logdet, cond=None, reverse=False)

where `logdet` is a per-sample (B,) accumulator that forward passes add their
log|det J| to and reverse passes subtract it from.

Block schedule, repeated `flow_levels` times:
    squeeze -> transition (actnorm, 1×1) -> K × (actnorm, 1×1, coupling) -> split
The last block emits its whole output instead of splitting.
"""

import logging
import math

import numpy as np
import scipy.linalg
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import NumericalError, ShapeError, ValidationError
from ..ops.warp import check_finite, downscale

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
SINGULAR_DET = 1e-12
NEGATIVE_SLOPE = 0.2


def _zeros_logdet(h):
    return torch.zeros(h.shape[0], dtype=h.dtype, device=h.device)


# ---------------------------------------------------------
# Squeeze / unsqueeze
# ---------------------------------------------------------
def squeeze(h):
    """2×2 space-to-depth: B×C×H×W -> B×4C×H/2×W/2."""
    b, c, hh, ww = h.shape
    if hh % 2 or ww % 2:
        raise ShapeError(f"squeeze needs even spatial dims, got {hh}×{ww}")
    h = h.reshape(b, c, hh // 2, 2, ww // 2, 2)
    h = h.permute(0, 1, 3, 5, 2, 4)
    return h.reshape(b, c * 4, hh // 2, ww // 2)


def unsqueeze(h):
    b, c, hh, ww = h.shape
    if c % 4:
        raise ShapeError(f"unsqueeze needs channels divisible by 4, got {c}")
    h = h.reshape(b, c // 4, 2, 2, hh, ww)
    h = h.permute(0, 1, 4, 2, 5, 3)
    return h.reshape(b, c // 4, hh * 2, ww * 2)


# ---------------------------------------------------------
# Actnorm
# ---------------------------------------------------------
class ActNorm(nn.Module):
    """h' = s ⊙ (h + b) per channel; data-dependent init on the first forward pass."""

    def __init__(self, channels, initialized=False):
        super().__init__()
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.scale = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.register_buffer("initialized", torch.tensor(int(initialized), dtype=torch.uint8))

    def initialize(self, h):
        with torch.no_grad():
            mean = h.mean(dim=(0, 2, 3), keepdim=True)
            var = ((h - mean) ** 2).mean(dim=(0, 2, 3), keepdim=True)
            var = torch.where(var < 1e-8, torch.ones_like(var), var)
            self.bias.copy_(-mean)
            self.scale.copy_(1.0 / (var.sqrt() + 1e-6))
            self.initialized.fill_(1)

    def log_abs_det(self, h):
        return h.shape[2] * h.shape[3] * torch.log(self.scale.abs()).sum()

    def forward(self, h, logdet=None, cond=None, reverse=False):
        if logdet is None:
            logdet = _zeros_logdet(h)
        if (self.scale == 0).any():
            raise NumericalError("actnorm scale has a zero entry")
        if not reverse:
            if not bool(self.initialized):
                self.initialize(h)
            return self.scale * (h + self.bias), logdet + self.log_abs_det(h)
        return h / self.scale - self.bias, logdet - self.log_abs_det(h)


# ---------------------------------------------------------
# Invertible 1×1 convolution
# ---------------------------------------------------------
class InvConv1x1(nn.Module):
    def __init__(self, channels):
        super().__init__()
        weight = torch.randn(channels, channels, dtype=torch.float64).numpy()
        q, _ = scipy.linalg.qr(weight)
        self.weight = nn.Parameter(torch.from_numpy(np.ascontiguousarray(q)).float())

    def log_abs_det(self):
        _, logabsdet = torch.linalg.slogdet(self.weight)
        if logabsdet.item() < math.log(SINGULAR_DET):
            raise NumericalError(
                f"1×1 mixing matrix is singular (|det| < {SINGULAR_DET:g})"
            )
        return logabsdet

    def forward(self, h, logdet=None, cond=None, reverse=False):
        if logdet is None:
            logdet = _zeros_logdet(h)
        hw = h.shape[2] * h.shape[3]
        ld = hw * self.log_abs_det()
        if not reverse:
            return F.conv2d(h, self.weight[:, :, None, None]), logdet + ld
        inverse = torch.linalg.inv(self.weight)
        return F.conv2d(h, inverse[:, :, None, None]), logdet - ld


# ---------------------------------------------------------
# Stabilised affine coupling
# ---------------------------------------------------------
class CouplingNet(nn.Module):
    """Two 3×3 convolutions; the last starts at zero."""

    def __init__(self, cin, cout, hidden=64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, hidden, 3, padding=1),
            nn.LeakyReLU(NEGATIVE_SLOPE),
            nn.Conv2d(hidden, cout, 3, padding=1),
        )
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, x):
        return self.net(x)


class AffineCoupling(nn.Module):
    """
    h'_A = h_A
    h'_B = exp(λ·tanh(w_s(h_A; c)) + η) · h_B + w_b(h_A; c)
    log|det| = λ·Σ tanh(w_s) + η·|h_B|
    Every multiplicative factor lies in (e^{η-|λ|}, e^{η+|λ|}).
    """

    def __init__(self, channels, cond_channels=0, hidden=64):
        super().__init__()
        if channels < 2:
            raise ShapeError(f"coupling needs at least 2 channels, got {channels}")
        self.split_at = channels // 2
        cb = channels - self.split_at
        self.w_s = CouplingNet(self.split_at + cond_channels, cb, hidden)
        self.w_b = CouplingNet(self.split_at + cond_channels, cb, hidden)
        self.lam = nn.Parameter(torch.ones(()))
        self.eta = nn.Parameter(torch.ones(()))

    def _inputs(self, h_a, cond):
        if cond is None:
            return h_a
        if cond.shape[2:] != h_a.shape[2:]:
            cond = F.adaptive_avg_pool2d(cond, h_a.shape[2:])
        return torch.cat([h_a, cond], dim=1)

    def log_scale_and_bias(self, h_a, cond=None):
        inp = self._inputs(h_a, cond)
        return self.lam * torch.tanh(self.w_s(inp)) + self.eta, self.w_b(inp)

    def forward(self, h, logdet=None, cond=None, reverse=False):
        if logdet is None:
            logdet = _zeros_logdet(h)
        h_a, h_b = h[:, :self.split_at], h[:, self.split_at:]
        log_scale, bias = self.log_scale_and_bias(h_a, cond)
        ld = log_scale.sum(dim=(1, 2, 3))
        if not reverse:
            h_b = torch.exp(log_scale) * h_b + bias
            return torch.cat([h_a, h_b], dim=1), logdet + ld
        h_b = (h_b - bias) * torch.exp(-log_scale)
        return torch.cat([h_a, h_b], dim=1), logdet - ld


class FlowStep(nn.Module):
    def __init__(self, channels, cond_channels=0, hidden=64):
        super().__init__()
        self.actnorm = ActNorm(channels)
        self.mixing = InvConv1x1(channels)
        self.coupling = AffineCoupling(channels, cond_channels, hidden)

    def forward(self, h, logdet=None, cond=None, reverse=False):
        layers = (self.actnorm, self.mixing, self.coupling)
        if reverse:
            layers = layers[::-1]
        for layer in layers:
            h, logdet = layer(h, logdet, cond=cond, reverse=reverse)
        return h, logdet


# ---------------------------------------------------------
# Split
# ---------------------------------------------------------
def split(h):
    c = h.shape[1]
    if c % 2:
        raise ShapeError(f"split needs an even channel count, got {c}")
    return h[:, :c // 2], h[:, c // 2:]


def unsplit(h_keep, z_out):
    return torch.cat([h_keep, z_out], dim=1)


class Split(nn.Module):
    """
    Channelwise halving. With a learned prior the split-off half is
    standardised by a conditional Gaussian (zero-initialised, so it starts as
    the standard normal); the latent stays N(0, 1) and -Σ log σ enters log|det|.
    """

    def __init__(self, channels, cond_channels=0, learned_prior=False):
        super().__init__()
        if channels % 2:
            raise ShapeError(f"split needs an even channel count, got {channels}")
        self.prior = None
        if learned_prior:
            self.prior = nn.Conv2d(channels // 2 + cond_channels, channels, 3, padding=1)
            nn.init.zeros_(self.prior.weight)
            nn.init.zeros_(self.prior.bias)

    def _moments(self, keep, cond):
        inp = keep if cond is None else torch.cat([keep, cond], dim=1)
        return torch.chunk(self.prior(inp), 2, dim=1)

    def forward(self, h, logdet=None, cond=None):
        if logdet is None:
            logdet = _zeros_logdet(h)
        keep, z = split(h)
        if self.prior is not None:
            mean, log_std = self._moments(keep, cond)
            z = (z - mean) * torch.exp(-log_std)
            logdet = logdet - log_std.sum(dim=(1, 2, 3))
        return keep, z, logdet

    def reverse(self, keep, z, logdet=None, cond=None):
        if logdet is None:
            logdet = _zeros_logdet(keep)
        if self.prior is not None:
            mean, log_std = self._moments(keep, cond)
            z = z * torch.exp(log_std) + mean
            logdet = logdet + log_std.sum(dim=(1, 2, 3))
        return unsplit(keep, z), logdet


# ---------------------------------------------------------
# Blocks and generator
# ---------------------------------------------------------
class FlowBlock(nn.Module):
    def __init__(self, in_channels, steps, cond_in, cond_channels=32, hidden=64,
                 split=True, learned_prior=False):
        super().__init__()
        channels = 4 * in_channels
        self.adapter = nn.Sequential(
            nn.Conv2d(cond_in, cond_channels, 3, padding=1),
            nn.LeakyReLU(NEGATIVE_SLOPE),
        )
        self.transition = nn.ModuleList([ActNorm(channels), InvConv1x1(channels)])
        self.steps = nn.ModuleList(
            FlowStep(channels, cond_channels, hidden) for _ in range(steps)
        )
        self.split = Split(channels, cond_channels, learned_prior) if split else None
        self.out_channels = channels // 2 if split else channels

    def encode(self, h, logdet, cond_feat):
        cond = self.adapter(cond_feat)
        h = squeeze(h)
        for layer in self.transition:
            h, logdet = layer(h, logdet)
        for step in self.steps:
            h, logdet = step(h, logdet, cond=cond)
        if self.split is None:
            return None, h, logdet
        return self.split(h, logdet, cond=cond)

    def decode(self, h, z, logdet, cond_feat):
        cond = self.adapter(cond_feat)
        if self.split is None:
            h = z
        else:
            h, logdet = self.split.reverse(h, z, logdet, cond=cond)
        for step in reversed(self.steps):
            h, logdet = step(h, logdet, cond=cond, reverse=True)
        for layer in reversed(self.transition):
            h, logdet = layer(h, logdet, reverse=True)
        return unsqueeze(h), logdet


class ConditionalFlowGenerator(nn.Module):
    """
    Block b runs at H/2^(b+1) and is conditioned on the pyramid level of the
    same resolution; blocks coarser than the pyramid's last level get that
    level area-downsampled.
    """

    def __init__(self, config, image_channels=3):
        super().__init__()
        self.config = config
        self.image_channels = image_channels
        plan = config.channel_plan
        blocks = []
        c = image_channels
        for b in range(config.flow_levels):
            block = FlowBlock(
                c, config.flow_steps, plan[self._level_for(b)],
                cond_channels=config.cond_channels, hidden=config.coupling_hidden,
                split=b < config.flow_levels - 1, learned_prior=config.learned_split_prior,
            )
            blocks.append(block)
            c = block.out_channels
        self.blocks = nn.ModuleList(blocks)

    def _level_for(self, b):
        return min(b + 1, len(self.config.channel_plan) - 1)

    def condition(self, ft, b):
        level = self._level_for(b)
        return downscale(ft[level], b + 1 - level)

    def latent_shapes(self, height, width):
        """Per-component (C, h, w) of the latent code for an H×W frame."""
        self._check_size(height, width)
        shapes = []
        c, h, w = self.image_channels, height, width
        for b in range(len(self.blocks)):
            c, h, w = 4 * c, h // 2, w // 2
            if b < len(self.blocks) - 1:
                shapes.append((c // 2, h, w))
                c //= 2
            else:
                shapes.append((c, h, w))
        return shapes

    def _check_size(self, height, width):
        factor = 2 ** len(self.blocks)
        if height % factor or width % factor:
            raise ShapeError(
                f"frame size {height}×{width} must be divisible by {factor} for {len(self.blocks)} flow blocks"
            )

    def encode(self, x, ft):
        """x in model range -> (latent components, per-sample log|det|)."""
        if x.dim() != 4 or x.shape[1] != self.image_channels:
            raise ShapeError(f"expected B×{self.image_channels}×H×W input, got {tuple(x.shape)}")
        self._check_size(*x.shape[2:])
        logdet = _zeros_logdet(x)
        zs = []
        h = x
        for b, block in enumerate(self.blocks):
            h, z, logdet = block.encode(h, logdet, self.condition(ft, b))
            zs.append(z)
        return zs, logdet

    def decode(self, zs, ft):
        if len(zs) != len(self.blocks):
            raise ShapeError(f"latent code has {len(zs)} components, generator expects {len(self.blocks)}")
        last = zs[-1]
        height, width = last.shape[2] * 2 ** len(self.blocks), last.shape[3] * 2 ** len(self.blocks)
        expected = self.latent_shapes(height, width)
        for i, (z, shape) in enumerate(zip(zs, expected)):
            if tuple(z.shape[1:]) != shape:
                raise ShapeError(f"latent component {i} has shape {tuple(z.shape[1:])}, expected {shape}")
            check_finite(**{f"z{i}": z})

        h = None
        logdet = _zeros_logdet(last)
        for b in reversed(range(len(self.blocks))):
            h, logdet = self.blocks[b].decode(h, zs[b], logdet, self.condition(ft, b))
        return h

    def nll_per_sample(self, x, ft):
        zs, logdet = self.encode(x, ft)
        prior = sum(0.5 * (z ** 2 + LOG_2PI).sum(dim=(1, 2, 3)) for z in zs)
        return prior - logdet, zs

    def nll(self, x, ft):
        """Batch-mean negative log-likelihood: -log p_z(z) - log|det ∂z/∂x|."""
        value, _ = self.nll_per_sample(x, ft)
        return value.mean()

    @torch.no_grad()
    def initialize(self, x, ft):
        """Run the data-dependent actnorm initialisation on a batch."""
        self.encode(x, ft)


def sample_latent(shapes, tau, generator=None, batch=1, dtype=torch.float32, device=None):
    """Each element iid N(0, tau^2); tau = 0 yields the all-zero code."""
    if tau < 0:
        raise ValidationError(f"temperature must be >= 0, got {tau}")
    if tau == 0:
        return [torch.zeros(batch, *s, dtype=dtype, device=device) for s in shapes]
    return [
        torch.randn(batch, *s, generator=generator, dtype=dtype, device=device) * tau
        for s in shapes
    ]


def bits_per_dim(nll, num_dims):
    return nll / (num_dims * math.log(2))
