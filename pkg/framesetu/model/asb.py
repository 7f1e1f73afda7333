"""
framesetu/model/asb.py

Asymmetric synergistic blending. Frame 0 supplies the primary content (softmax
splatted to time t); frame 1 is aligned to t by a coarse-to-fine deformable
aligner and only fills the pixels a sparse quasi-binary mask selects.

    Z        = v(f0^0, -|f0^0 - warp(f1^0, F01)|_1)
    f_t0^l   = softmax_splat(f0^l, t, F01^l, Z^l)
    F1t      = (1 - t) F10
    f_t1     = u(-splat_avg(F1t, F1t), f1, f_t0)
    M_b^l    = [density(t F01^l) < eps]
    Mhat^l   = proj(scale(expand(M_b^l), attention(f_t0^l, f_t1^l)))
    Mtilde^l = tanh(|Mhat^l + alpha n| + beta M_b^l)
    f_t^l    = f_t0^l (1 - Mtilde^l) + f_t1^l Mtilde^l
"""

import logging
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from ..errors import ShapeError, ValidationError
from ..ops.warp import (
    backward_warp,
    binary_occlusion_mask,
    check_finite,
    downscale,
    forward_splat_avg,
    forward_splat_softmax,
    rescale_flow,
    upsample_flow,
)

logger = logging.getLogger(__name__)

NEGATIVE_SLOPE = 0.2
# dilation 2 on the 7×7 and 3×3 expansion kernels: radius 6 + 2 = 8, a 17×17 field
EXPAND_KERNELS = ((7, 2), (3, 2), (1, 1))


def _conv3x3(cin, cout, bias=True):
    return nn.Conv2d(cin, cout, 3, padding=1, bias=bias)


def _check_pyramids(*pyramids):
    counts = {len(p) for p in pyramids}
    if len(counts) != 1:
        raise ShapeError(f"pyramid level counts differ: {sorted(counts)}")
    for level in zip(*pyramids):
        shapes = {tuple(g.shape[2:]) for g in level}
        if len(shapes) != 1:
            raise ShapeError(f"pyramid levels disagree spatially: {sorted(shapes)}")


# ---------------------------------------------------------
# Importance metric (v)
# ---------------------------------------------------------
@dataclass
class ImportanceMetric:
    Z: torch.Tensor
    levels: list[torch.Tensor] = field(default_factory=list)

    def at(self, level):
        if level < len(self.levels):
            return self.levels[level]
        return downscale(self.Z, level)


class ImportanceNet(nn.Module):
    def __init__(self, channels, hidden=32):
        super().__init__()
        self.body = nn.Sequential(
            _conv3x3(channels + 1, hidden),
            nn.LeakyReLU(NEGATIVE_SLOPE),
            _conv3x3(hidden, hidden),
            nn.LeakyReLU(NEGATIVE_SLOPE),
        )
        self.head = _conv3x3(hidden, 1)

    def forward(self, f0_0, brightness):
        return self.head(self.body(torch.cat([f0_0, brightness], dim=1)))


def brightness_penalty(f0_0, f1_0, flow01):
    """-‖f0 - warp(f1, F01)‖ with the channelwise L1 norm; one channel."""
    if f0_0.shape != f1_0.shape:
        raise ShapeError(f"level-0 features differ: {tuple(f0_0.shape)} vs {tuple(f1_0.shape)}")
    return -(f0_0 - backward_warp(f1_0, flow01)).abs().sum(dim=1, keepdim=True)


def importance_metric(params, f0_0, f1_0, flow01, num_levels=1):
    Z = params(f0_0, brightness_penalty(f0_0, f1_0, flow01))
    return ImportanceMetric(Z=Z, levels=[downscale(Z, l) for l in range(num_levels)])


def forward_warp_pyramid(f0, t, flow01, Z):
    """Softmax-splat every level of f0 to time t; Z^l is area-averaged, never rescaled."""
    if not 0.0 < float(t) < 1.0:
        raise ValidationError(f"t={t} must lie strictly inside (0, 1)")
    return [
        forward_splat_softmax(feat, t, rescale_flow(flow01, l), Z.at(l))
        for l, feat in enumerate(f0)
    ]


# ---------------------------------------------------------
# Pyramid alignment (u)
# ---------------------------------------------------------
def time_scaled_back_flow(flow10, t):
    if not 0.0 <= float(t) <= 1.0:
        raise ValidationError(f"t={t} outside [0, 1]")
    check_finite(flow10=flow10)
    return flow10 * (1.0 - float(t))


def init_alignment_offset(flow1t):
    """The backward flow splatted by itself and negated: a t->1 displacement at time t."""
    return -forward_splat_avg(flow1t, flow1t)


class DeformableAlignLevel(nn.Module):
    """
    One pyramid level of the aligner. Predicts a refinement of the running
    offset plus `groups` sampling offsets and gates, then aggregates gated
    bilinear samples of f1. The prediction head and the fusion branch start at
    zero, so an untrained level returns f1 warped by the incoming offset.
    """

    def __init__(self, channels, groups=9, hidden=64):
        super().__init__()
        self.groups = groups
        self.body = nn.Sequential(
            _conv3x3(4 + 2 * channels, hidden),
            nn.LeakyReLU(NEGATIVE_SLOPE),
            _conv3x3(hidden, hidden),
            nn.LeakyReLU(NEGATIVE_SLOPE),
        )
        self.head = _conv3x3(hidden, 2 + 3 * groups)
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()
            # distinct gate biases let the sampling points drift apart under training
            self.head.bias[2 + 2 * groups:] = torch.linspace(-0.5, 0.5, groups)
            self.fuse.weight.zero_()
            self.fuse.bias.zero_()

    def forward(self, prior, refine, f1, ft0):
        base = prior + refine
        warped = backward_warp(f1, base)
        head = self.head(self.body(torch.cat([prior, refine, warped, ft0], dim=1)))
        delta, offsets, gates = torch.split(head, [2, 2 * self.groups, self.groups], dim=1)

        refine = refine + delta
        base = base + delta
        weights = torch.softmax(gates, dim=1)
        aligned = torch.zeros_like(f1)
        for k in range(self.groups):
            sample = backward_warp(f1, base + offsets[:, 2 * k:2 * k + 2])
            aligned = aligned + sample * weights[:, k:k + 1]
        out = aligned + self.fuse(torch.cat([aligned, ft0], dim=1))
        return out, refine


class PyramidAligner(nn.Module):
    def __init__(self, channel_plan, groups=9, hidden=64, use_prior=True):
        super().__init__()
        self.use_prior = use_prior
        self.levels = nn.ModuleList(
            DeformableAlignLevel(ch, groups=groups, hidden=hidden) for ch in channel_plan
        )

    def forward(self, offset, f1, ft0):
        if len(f1) != len(self.levels) or len(ft0) != len(self.levels):
            raise ShapeError(
                f"aligner has {len(self.levels)} levels, got pyramids of {len(f1)} and {len(ft0)}"
            )
        _check_pyramids(f1, ft0)

        aligned = [None] * len(self.levels)
        refine = None
        for l in reversed(range(len(self.levels))):
            prior = rescale_flow(offset, l)
            if not self.use_prior:
                prior = torch.zeros_like(prior)
            refine = torch.zeros_like(prior) if refine is None else upsample_flow(refine)
            aligned[l], refine = self.levels[l](prior, refine, f1[l], ft0[l])
        return aligned


def align_pyramid(params, offset, f1, ft0):
    return params(offset, f1, ft0)


# ---------------------------------------------------------
# Adaptive dilation
# ---------------------------------------------------------
class AdaptiveDilation(nn.Module):
    """
    Expansion (7,3,1) → channel attention from the two aligned features →
    1×1 projection. Without biases, zero input stays exactly zero outside the
    17×17 neighbourhood of every occluded pixel.
    """

    def __init__(self, level_channels, channels=16, norm="sigmoid", bias=False):
        super().__init__()
        self.norm = norm
        layers = []
        cin = 1
        for i, (kernel, dilation) in enumerate(EXPAND_KERNELS):
            layers.append(nn.Conv2d(
                cin, channels, kernel,
                padding=dilation * (kernel // 2), dilation=dilation, bias=bias,
            ))
            if i < len(EXPAND_KERNELS) - 1:
                layers.append(nn.LeakyReLU(NEGATIVE_SLOPE))
            cin = channels
        self.expand = nn.Sequential(*layers)

        squeeze = max(level_channels // 4, 4)
        self.excite = nn.Sequential(
            nn.Linear(2 * level_channels, squeeze),
            nn.ReLU(),
            nn.Linear(squeeze, channels),
        )
        self.proj = nn.Conv2d(channels, 1, 1, bias=bias)

    def attention(self, ft0, ft1):
        pooled = torch.cat([ft0, ft1], dim=1).mean(dim=(2, 3))
        logits = self.excite(pooled)
        if self.norm == "softmax":
            return torch.softmax(logits, dim=1)
        return torch.sigmoid(logits)

    def forward(self, mb, ft0, ft1):
        if mb.shape[2:] != ft0.shape[2:] or ft0.shape != ft1.shape:
            raise ShapeError(
                f"mask {tuple(mb.shape)} and features {tuple(ft0.shape)}/{tuple(ft1.shape)} disagree"
            )
        expanded = self.expand(mb)
        weights = self.attention(ft0, ft1)
        return self.proj(expanded * weights[:, :, None, None])


def adm_project(params, Mb_l, ft0_l, ft1_l):
    return params(Mb_l, ft0_l, ft1_l)


def quasi_binary_mask(mhat, mb, alpha=1e-3, beta=2.0, training=False, generator=None):
    """tanh(|Mhat + alpha·n| + beta·M_b), n ~ U(-1, 1) while training; alpha is 0 at inference."""
    if training:
        if generator is None:
            raise ValidationError("training-mode mask needs an explicit random generator")
        noise = torch.rand(mhat.shape, generator=generator, dtype=mhat.dtype, device=mhat.device)
        mhat = mhat + alpha * (2.0 * noise - 1.0)
    return torch.tanh(mhat.abs() + beta * mb)


def blend_pyramid(ft0, ft1, masks):
    _check_pyramids(ft0, ft1, masks)
    return [a * (1 - m) + b * m for a, b, m in zip(ft0, ft1, masks)]


# ---------------------------------------------------------
# Full module
# ---------------------------------------------------------
@dataclass
class BlendResult:
    ft: list[torch.Tensor]
    ft0: list[torch.Tensor]
    ft1: list[torch.Tensor]
    masks: list[torch.Tensor]
    binary_masks: list[torch.Tensor]
    importance: ImportanceMetric


class AsymmetricBlender(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        plan = config.channel_plan
        self.importance = ImportanceNet(plan[0], hidden=config.importance_hidden)
        self.aligner = PyramidAligner(
            plan, groups=config.offset_groups, hidden=config.align_hidden,
            use_prior=config.use_alignment_prior,
        )
        if config.mask_mode == "binary":
            self.dilation = None
        else:
            self.dilation = nn.ModuleList(
                AdaptiveDilation(
                    ch, channels=config.adm_channels, norm=config.attention_norm,
                    bias=config.mask_mode == "adaptive",
                )
                for ch in plan
            )

    def forward(self, f0, f1, flow01, flow10, t, training=False, generator=None):
        _check_pyramids(f0, f1)
        cfg = self.config
        levels = len(f0)

        Z = importance_metric(self.importance, f0[0], f1[0], flow01, num_levels=levels)
        ft0 = forward_warp_pyramid(f0, t, flow01, Z)
        offset = init_alignment_offset(time_scaled_back_flow(flow10, t))
        ft1 = align_pyramid(self.aligner, offset, f1, ft0)

        binary = [
            binary_occlusion_mask(rescale_flow(flow01, l), t, cfg.occlusion_eps)
            for l in range(levels)
        ]
        if self.dilation is None:
            masks = binary
        else:
            masks = [
                quasi_binary_mask(
                    adm_project(self.dilation[l], binary[l], ft0[l], ft1[l]), binary[l],
                    alpha=cfg.alpha if training else 0.0, beta=cfg.beta,
                    training=training, generator=generator,
                )
                for l in range(levels)
            ]
        ft = blend_pyramid(ft0, ft1, masks)
        return BlendResult(ft=ft, ft0=ft0, ft1=ft1, masks=masks, binary_masks=binary, importance=Z)
