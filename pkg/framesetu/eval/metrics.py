"""
Full-reference metrics on unit-range images.

Images are H×W×C (or H×W) numpy arrays, or C×H×W torch tensors which are
converted. SSIM uses an 11×11 Gaussian window (sigma 1.5) over the valid
region only, stabilisers (0.01·R)² and (0.03·R)², computed per channel and
averaged; with `luminance=True` it is computed once on ITU-R BT.601 luma.
"""

import math

import numpy as np
import torch
from scipy import ndimage

from ..errors import ShapeError
from ..ops.warp import backward_warp

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
BT601 = np.array([0.299, 0.587, 0.114])


def as_array(image):
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().double().numpy()
        if image.ndim == 3:
            image = image.transpose(1, 2, 0)
    return np.asarray(image, dtype=np.float64)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")


def mse(a, b):
    a, b = as_array(a), as_array(b)
    _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range=1.0):
    """10·log10(R²/MSE); identical images give +inf."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / err)


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _filter_valid(x, window):
    r = window.shape[0] // 2
    return ndimage.correlate(x, window, mode="reflect")[r:-r, r:-r]


def _ssim_channel(a, b, window, data_range):
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a ** 2
    var_b = _filter_valid(b * b, window) - mu_b ** 2
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=1.0, luminance=False):
    a, b = as_array(a), as_array(b)
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise ShapeError(f"image {a.shape[0]}×{a.shape[1]} is smaller than the {WINDOW_SIZE}×{WINDOW_SIZE} window")
    window = gaussian_window()
    if a.ndim == 2:
        return _ssim_channel(a, b, window, data_range)
    if luminance:
        return _ssim_channel(a @ BT601, b @ BT601, window, data_range)
    return float(np.mean([
        _ssim_channel(a[..., c], b[..., c], window, data_range) for c in range(a.shape[2])
    ]))


def warp_blend_baseline(I0, I1, flow01, flow10, t=0.5):
    """
    Equal-weight blend of both frames backward-warped to time t, approximating
    the t->0 flow by t·F10 and the t->1 flow by (1-t)·F01. B×3×H×W in and out.
    """
    warped0 = backward_warp(I0, flow10 * t)
    warped1 = backward_warp(I1, flow01 * (1.0 - t))
    return 0.5 * warped0 + 0.5 * warped1
