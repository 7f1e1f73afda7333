"""
framesetu/ops/warp.py

Differentiable warping operators on B×C×H×W grids:

- backward_warp           gather src at x + flow(x), zero padding
- forward_splat_avg       scatter src to x + flow(x), normalised by deposited weight
- forward_splat_softmax   scatter weighted by exp(Z), stabilised per target
- rescale_flow / downscale  area-averaged flow / metric pyramids
- binary_occlusion_mask   pixels whose raw splat density falls below eps

Flows are B×2×H×W in pixels; channel 0 is horizontal, channel 1 vertical.
Deposits landing outside the frame are dropped.
"""

import logging

import torch
import torch.nn.functional as F

from ..errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

DIV_EPS = 1e-8
OCCLUSION_EPS = 0.5


# ---------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------
def check_finite(**tensors):
    for name, ten in tensors.items():
        if not torch.isfinite(ten).all():
            raise ValidationError(f"{name} contains non-finite values")


def _check_grid_flow(src, flow):
    if flow.dim() != 4 or flow.shape[1] != 2:
        raise ShapeError(f"flow must be B×2×H×W, got {tuple(flow.shape)}")
    if src.dim() != 4:
        raise ShapeError(f"grid must be B×C×H×W, got {tuple(src.shape)}")
    if src.shape[0] != flow.shape[0] or src.shape[2:] != flow.shape[2:]:
        raise ShapeError(
            f"grid {tuple(src.shape)} and flow {tuple(flow.shape)} do not share batch/spatial dims"
        )
    check_finite(src=src, flow=flow)


def _check_time(t, low=0.0, high=1.0):
    t = float(t)
    if not (low <= t <= high):
        raise ValidationError(f"t={t} outside [{low}, {high}]")
    return t


# ---------------------------------------------------------
# Bilinear footprint
# ---------------------------------------------------------
def _bilinear_corners(flow):
    """
    Four-neighbour bilinear footprint of x + flow(x), in fixed order
    (nw, ne, sw, se). Each entry is (flat_index, weight, live):
      flat_index  B×1×(H·W) long, clamped into the frame
      weight      B×1×(H·W) bilinear weight, 0 where the corner is off-frame
      live        B×1×(H·W) bool, weight > 0
    """
    b, _, h, w = flow.shape
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype, device=flow.device),
        torch.arange(w, dtype=flow.dtype, device=flow.device),
        indexing="ij",
    )
    x = gx + flow[:, 0]
    y = gy + flow[:, 1]
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.long()
    y0 = y0.long()

    corners = []
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        index = yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)
        weight = wgt * inside.to(wgt.dtype)
        corners.append((
            index.reshape(b, 1, h * w),
            weight.reshape(b, 1, h * w),
            (weight > 0).reshape(b, 1, h * w),
        ))
    return corners


# ---------------------------------------------------------
# Backward warping (gather)
# ---------------------------------------------------------
def backward_warp(src, flow):
    """out(x) = bilinear sample of src at x + flow(x); off-frame samples read 0."""
    _check_grid_flow(src, flow)
    b, c, h, w = src.shape
    flat = src.reshape(b, c, h * w)
    out = torch.zeros_like(flat)
    for index, weight, _ in _bilinear_corners(flow):
        sample = torch.gather(flat, 2, index.expand(b, c, h * w))
        out = out + sample * weight
    return out.reshape(b, c, h, w)


# ---------------------------------------------------------
# Forward splatting (scatter)
# ---------------------------------------------------------
def _splat(src, flow, metric=None):
    """
    Deposit src at the bilinear neighbours of x + flow(x).
    Returns (numerator, weighted density, raw deposited weight), the first
    B×C×H×W and the others B×1×H×W. With a metric Z, each deposit is
    additionally weighted by exp(Z - max_target Z), where the max runs over the
    live deposits reaching the same target pixel. The raw weight counts the
    bilinear weights alone and decides coverage.
    """
    b, c, h, w = src.shape
    n = h * w
    values = src.reshape(b, c, n)
    corners = _bilinear_corners(flow)

    exponents = None
    if metric is not None:
        z = metric.reshape(b, 1, n)
        peak = torch.full_like(z, float("-inf"))
        for index, _, live in corners:
            candidate = torch.where(live, z, torch.full_like(z, float("-inf")))
            peak = peak.scatter_reduce(2, index, candidate, reduce="amax", include_self=True)
        # shift-invariant: exact gradients without differentiating the max
        peak = peak.detach()
        exponents = []
        for index, _, live in corners:
            shift = torch.where(live, torch.gather(peak, 2, index), z)
            exponents.append(torch.exp(z - shift))

    numerator = torch.zeros_like(values)
    density = torch.zeros(b, 1, n, dtype=src.dtype, device=src.device)
    raw = density
    for k, (index, weight, _) in enumerate(corners):
        raw = raw.scatter_add(2, index, weight)
        if exponents is not None:
            weight = weight * exponents[k]
        numerator = numerator.scatter_add(2, index.expand(b, c, n), values * weight)
        density = density.scatter_add(2, index, weight)
    shape = (b, 1, h, w)
    return numerator.reshape(b, c, h, w), density.reshape(shape), raw.reshape(shape)


def _normalize(numerator, density, raw, eps=DIV_EPS):
    # a covered target always holds its peak deposit at exp(0), so density > 0
    covered = raw >= eps
    safe = torch.where(covered, density, torch.ones_like(density))
    return torch.where(covered, numerator / safe, torch.zeros_like(numerator))


def forward_splat_avg(src, flow, eps=DIV_EPS):
    """Average splatting; pixels whose deposited weight is below eps read 0."""
    _check_grid_flow(src, flow)
    return _normalize(*_splat(src, flow), eps=eps)


def forward_splat_softmax(src, t, flow, metric, eps=DIV_EPS):
    """Softmax splatting of src by t·flow with importance metric Z (B×1×H×W)."""
    t = _check_time(t)
    _check_grid_flow(src, flow)
    if metric.dim() != 4 or metric.shape[1] != 1 or metric.shape[2:] != src.shape[2:]:
        raise ShapeError(f"metric must be B×1×H×W matching src, got {tuple(metric.shape)}")
    check_finite(metric=metric)
    return _normalize(*_splat(src, flow * t, metric=metric), eps=eps)


def splat_density(flow):
    """Raw deposited-weight sum obtained by splatting the all-ones grid by flow."""
    b, _, h, w = flow.shape
    ones = torch.ones(b, 1, h, w, dtype=flow.dtype, device=flow.device)
    _check_grid_flow(ones, flow)
    return _splat(ones, flow)[2]


# ---------------------------------------------------------
# Pyramids
# ---------------------------------------------------------
def downscale(grid, level):
    """Area-average grid by 2^level without touching its values' units."""
    if level < 0:
        raise ValidationError(f"level must be >= 0, got {level}")
    if level == 0:
        return grid
    factor = 2 ** level
    h, w = grid.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"spatial dims {h}×{w} not divisible by 2^{level}={factor}")
    return F.avg_pool2d(grid, factor)


def rescale_flow(flow, level):
    """Flow at pyramid level l: area-averaged by 2^l, displacements scaled by 2^-l."""
    if level == 0:
        return flow
    return downscale(flow, level) * (2.0 ** -level)


def upsample_flow(flow, factor=2):
    """Bilinear ×factor upsampling with displacements scaled by factor."""
    return F.interpolate(flow, scale_factor=factor, mode="bilinear", align_corners=False) * factor


# ---------------------------------------------------------
# Occlusion
# ---------------------------------------------------------
def binary_occlusion_mask(flow01_l, t, eps=OCCLUSION_EPS):
    """
    M(x) = 1 iff the un-normalised density of the all-ones grid splatted by
    t·flow is strictly below eps. Returned as a B×1×h×w float tensor.
    """
    if eps <= 0:
        raise ValidationError(f"occlusion threshold must be > 0, got {eps}")
    t = _check_time(t)
    density = splat_density(flow01_l * t)
    return (density < eps).to(flow01_l.dtype)
