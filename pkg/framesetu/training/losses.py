"""
framesetu/training/losses.py

Training objective:

    L = L_nll + mu · L_per

L_nll is the generator's negative log-likelihood of the (dequantised) ground
truth. L_per decodes a latent drawn from a normal whose mean and variance
match the ground truth's own encoding, then compares fixed-network features
of the decode against the ground truth.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import DivergenceError, ShapeError, ValidationError
from ..model.nflow import sample_latent
from ..model.pipeline import dequantize, to_model_range
from ..seeding import seeded

logger = logging.getLogger(__name__)

LOSS_MODES = ("bidirectional", "nll", "l1")
FEATURE_PLAN = (16, 32, 32, 64)


# ---------------------------------------------------------
# Frozen feature extractor
# ---------------------------------------------------------
class FeatureExtractor(nn.Module):
    """Four 3×3 conv layers with ReLU, every other one strided; weights never train."""

    def __init__(self, plan=FEATURE_PLAN):
        super().__init__()
        layers = []
        cin = 3
        for i, cout in enumerate(plan):
            layers.append(nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride=2 if i % 2 else 1, padding=1),
                nn.ReLU(),
            ))
            cin = cout
        self.layers = nn.ModuleList(layers)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # stays in eval mode whatever the caller asks
        return super().train(False)

    def forward(self, image):
        feats = []
        h = image
        for layer in self.layers:
            h = layer(h)
            feats.append(h)
        return feats


def build_feature_extractor(seed=1234):
    with seeded(seed):
        return FeatureExtractor()


def perceptual_loss(featnet, pred, gt):
    """Sum over layers of the mean squared feature difference; 0 iff all features agree."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    loss = pred.new_zeros(())
    for a, b in zip(featnet(pred), featnet(gt)):
        loss = loss + ((a - b) ** 2).mean()
    return loss


# ---------------------------------------------------------
# Latent-matched sampling
# ---------------------------------------------------------
def _matched(zs, mean, var, generator):
    if float(var.max()) == 0.0:
        return [torch.zeros_like(z) + mean for z in zs]
    std = var.sqrt()
    noise = sample_latent([tuple(z.shape[1:]) for z in zs], 1.0, generator,
                          batch=zs[0].shape[0], dtype=zs[0].dtype, device=zs[0].device)
    return [mean + std * n for n in noise]


def latent_matched_sample(zs, generator=None, per_channel=False):
    """
    z' ~ N(m_b, v_b) elementwise, where m_b and v_b are the mean and
    (population) variance of every element of sample b across all components.
    Statistics are taken without gradient. per_channel=True uses separate
    statistics for every channel of every component of each sample instead.
    """
    zs = [z.detach() for z in zs]
    batch = zs[0].shape[0]
    if not per_channel:
        flat = torch.cat([z.reshape(batch, -1) for z in zs], dim=1)
        mean = flat.mean(dim=1).view(batch, 1, 1, 1)
        var = flat.var(dim=1, unbiased=False).view(batch, 1, 1, 1)
        return _matched(zs, mean, var, generator)

    out = []
    for z in zs:
        mean = z.mean(dim=(2, 3), keepdim=True)
        var = z.var(dim=(2, 3), unbiased=False, keepdim=True)
        out.extend(_matched([z], mean, var, generator))
    return out


# ---------------------------------------------------------
# Total loss
# ---------------------------------------------------------
@dataclass
class LossResult:
    total: torch.Tensor
    nll: torch.Tensor
    perceptual: torch.Tensor
    bits_per_dim: float

    def diagnostics(self):
        return {
            "total": float(self.total.detach()),
            "nll": float(self.nll.detach()),
            "perceptual": float(self.perceptual.detach()),
            "bits_per_dim": self.bits_per_dim,
        }


def total_loss(model, batch, featnet, mu=0.2, generator=None, loss_mode="bidirectional"):
    """
    batch: dict with I0, I1, It (B×3×H×W), flow01, flow10 (B×2×H×W) and t.
    Raises DivergenceError if any term is non-finite.
    """
    if loss_mode not in LOSS_MODES:
        raise ValidationError(f"loss_mode must be one of {LOSS_MODES}, got {loss_mode!r}")
    if mu < 0:
        raise ValidationError(f"mu must be >= 0, got {mu}")
    if generator is None:
        raise ValidationError("total_loss needs an explicit random generator")

    It = batch["It"]
    cond = model.condition(
        batch["I0"], batch["I1"], batch["flow01"], batch["flow10"], batch["t"],
        training=True, generator=generator,
    )
    x = dequantize(to_model_range(It), generator)
    per_sample, zs = model.generator.nll_per_sample(x, cond.ft)
    nll = per_sample.mean()
    perceptual = nll.new_zeros(())

    if loss_mode == "bidirectional":
        total = nll
        if mu != 0:
            pred = model.decode(latent_matched_sample(zs, generator), cond)
            perceptual = perceptual_loss(featnet, pred, It)
            total = nll + mu * perceptual
    elif loss_mode == "nll":
        total = nll
    else:
        zero = sample_latent([tuple(z.shape[1:]) for z in zs], 0.0,
                             batch=It.shape[0], dtype=It.dtype, device=It.device)
        total = (model.decode(zero, cond) - It).abs().mean()

    result = LossResult(
        total=total, nll=nll, perceptual=perceptual,
        bits_per_dim=model.bits_per_dim(float(nll.detach()), It),
    )
    if not all(torch.isfinite(v).all() for v in (total, nll, perceptual)):
        raise DivergenceError("non-finite training loss", diagnostics=result.diagnostics())
    return result
