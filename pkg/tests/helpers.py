"""Shared fixtures-as-functions and brute-force oracles for the test suite."""

import math

import torch

from framesetu.model.config import ModelConfig


def small_config(**overrides):
    """Two-level model small enough for float64 oracles; frame sizes must be multiples of 4."""
    params = dict(
        channel_plan=[8, 8], flow_levels=2, flow_steps=2, coupling_hidden=8,
        cond_channels=4, importance_hidden=4, align_hidden=8, adm_channels=4,
        offset_groups=2,
    )
    params.update(overrides)
    return ModelConfig(**params)


def randomize_zero_layers(module, scale=0.05, seed=0):
    """Give every parameter small random values so zero-initialised heads stop being trivial."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith(("lam", "eta")) or "scale" in name:
                continue
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def random_pyramid(plan, batch, height, width, dtype=torch.float64, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return [
        torch.randn(batch, c, height // 2 ** l, width // 2 ** l, generator=gen, dtype=dtype)
        for l, c in enumerate(plan)
    ]


def splat_oracle(src, flow, metric=None, eps=1e-8):
    """Pixel-by-pixel deposit accumulation for one C×H×W item."""
    c, h, w = src.shape
    num = torch.zeros_like(src)
    den = torch.zeros(h, w, dtype=src.dtype)
    raw = torch.zeros(h, w, dtype=src.dtype)
    for y in range(h):
        for x in range(w):
            tx = x + flow[0, y, x].item()
            ty = y + flow[1, y, x].item()
            x0, y0 = math.floor(tx), math.floor(ty)
            fx, fy = tx - x0, ty - y0
            scale = math.exp(metric[y, x].item()) if metric is not None else 1.0
            for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                                (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
                xi, yi = x0 + dx, y0 + dy
                if 0 <= xi < w and 0 <= yi < h and wgt > 0:
                    num[:, yi, xi] += wgt * scale * src[:, y, x]
                    den[yi, xi] += wgt * scale
                    raw[yi, xi] += wgt
    covered = raw >= eps
    return torch.where(covered, num / torch.where(covered, den, torch.ones_like(den)), torch.zeros_like(num))


def deposit_mask_oracle(flow):
    """For integer flows: 1 where no source pixel lands, else 0. flow is 2×H×W."""
    _, h, w = flow.shape
    hit = torch.zeros(h, w)
    for y in range(h):
        for x in range(w):
            tx, ty = x + int(flow[0, y, x]), y + int(flow[1, y, x])
            if 0 <= tx < w and 0 <= ty < h:
                hit[ty, tx] = 1
    return 1 - hit


def finite_difference_jacobian(fn, x, eps=1e-6):
    """Central-difference Jacobian d fn(x).flatten() / d x.flatten()."""
    x = x.detach().clone()
    flat = x.reshape(-1)
    cols = []
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = fn(x).reshape(-1).clone()
            flat[i] = orig - eps
            minus = fn(x).reshape(-1).clone()
            flat[i] = orig
            cols.append((plus - minus) / (2 * eps))
    return torch.stack(cols, dim=1)


def finite_difference_param(loss_fn, param, index=(), eps=1e-6):
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + eps
        plus = loss_fn().item()
        param[index] = orig - eps
        minus = loss_fn().item()
        param[index] = orig
    return (plus - minus) / (2 * eps)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)
