import math

import pytest
import torch

from framesetu.errors import ValidationError
from framesetu.model.asb import (
    AdaptiveDilation,
    AsymmetricBlender,
    DeformableAlignLevel,
    ImportanceNet,
    PyramidAligner,
    adm_project,
    align_pyramid,
    blend_pyramid,
    brightness_penalty,
    forward_warp_pyramid,
    importance_metric,
    init_alignment_offset,
    quasi_binary_mask,
    time_scaled_back_flow,
)
from framesetu.ops.warp import backward_warp, rescale_flow
from framesetu.seeding import make_generator, seeded
from tests.helpers import random_pyramid, randomize_zero_layers, small_config

TANH2 = math.tanh(2.0)


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


# ---------------------------------------------------------
# Importance metric and forward-warped pyramid
# ---------------------------------------------------------
def test_brightness_penalty_is_non_positive_and_zero_for_identical_features():
    f = torch.randn(1, 4, 8, 8, generator=_gen())
    zero = torch.zeros(1, 2, 8, 8)
    assert torch.all(brightness_penalty(f, f, zero) == 0)
    other = torch.randn(1, 4, 8, 8, generator=_gen(1))
    assert torch.all(brightness_penalty(f, other, zero) <= 0)


def test_importance_metric_levels_are_area_averaged():
    with seeded(0):
        net = ImportanceNet(4, hidden=4)
    f0 = torch.randn(1, 4, 8, 8, generator=_gen(2))
    f1 = torch.randn(1, 4, 8, 8, generator=_gen(3))
    Z = importance_metric(net, f0, f1, torch.zeros(1, 2, 8, 8), num_levels=2)
    assert Z.Z.shape == (1, 1, 8, 8)
    assert torch.allclose(Z.at(1), torch.nn.functional.avg_pool2d(Z.Z, 2))


def test_forward_warp_pyramid_requires_open_interval():
    f0 = random_pyramid([4, 4], 1, 8, 8, dtype=torch.float32)
    Z = importance_metric(lambda a, b: b, f0[0], f0[0], torch.zeros(1, 2, 8, 8), 2)
    for t in (0.0, 1.0):
        with pytest.raises(ValidationError):
            forward_warp_pyramid(f0, t, torch.zeros(1, 2, 8, 8), Z)


def test_forward_warp_pyramid_zero_flow_keeps_features():
    f0 = random_pyramid([4, 6], 1, 8, 8)
    flow = torch.zeros(1, 2, 8, 8, dtype=torch.float64)
    Z = importance_metric(lambda a, b: b, f0[0], f0[0], flow, 2)
    ft0 = forward_warp_pyramid(f0, 0.5, flow, Z)
    for a, b in zip(ft0, f0):
        assert torch.allclose(a, b, atol=1e-12)


# ---------------------------------------------------------
# Alignment
# ---------------------------------------------------------
def test_time_scaled_back_flow():
    flow = torch.full((1, 2, 4, 4), 4.0)
    assert torch.allclose(time_scaled_back_flow(flow, 0.25), torch.full((1, 2, 4, 4), 3.0))
    with pytest.raises(ValidationError):
        time_scaled_back_flow(flow, 1.5)


def test_alignment_offset_of_constant_flow_is_negated_flow():
    flow = torch.zeros(1, 2, 8, 8, dtype=torch.float64)
    assert torch.all(init_alignment_offset(flow) == 0)
    flow[:, 0] = 2.0
    offset = init_alignment_offset(flow)
    assert torch.allclose(offset[:, 0, :, 2:], torch.full((1, 8, 6), -2.0, dtype=torch.float64))
    assert torch.all(offset[:, :, :, :2] == 0)


def test_untrained_alignment_level_warps_by_offset():
    with seeded(0):
        level = DeformableAlignLevel(4, groups=3, hidden=8).double()
    f1 = torch.randn(1, 4, 8, 8, generator=_gen(4), dtype=torch.float64)
    ft0 = torch.randn(1, 4, 8, 8, generator=_gen(5), dtype=torch.float64)
    prior = 0.7 * torch.randn(1, 2, 8, 8, generator=_gen(6), dtype=torch.float64)
    out, refine = level(prior, torch.zeros_like(prior), f1, ft0)
    assert torch.allclose(out, backward_warp(f1, prior), atol=1e-10)
    assert torch.all(refine == 0)


def test_aligner_without_prior_ignores_offset():
    with seeded(0):
        aligner = PyramidAligner([4, 4], groups=2, hidden=8, use_prior=False).double()
    f1 = random_pyramid([4, 4], 1, 8, 8, seed=1)
    ft0 = random_pyramid([4, 4], 1, 8, 8, seed=2)
    offset = torch.randn(1, 2, 8, 8, generator=_gen(7), dtype=torch.float64)
    a = aligner(offset, f1, ft0)
    b = aligner(torch.zeros_like(offset), f1, ft0)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_aligner_outputs_match_pyramid_shapes():
    with seeded(1):
        aligner = PyramidAligner([4, 6], groups=2, hidden=8).double()
    f1 = random_pyramid([4, 6], 2, 16, 16, seed=3)
    ft0 = random_pyramid([4, 6], 2, 16, 16, seed=4)
    out = aligner(torch.zeros(2, 2, 16, 16, dtype=torch.float64), f1, ft0)
    assert [o.shape for o in out] == [f.shape for f in f1]


def test_align_pyramid_gradients_reach_features_and_offset():
    with seeded(2):
        aligner = PyramidAligner([4, 6], groups=2, hidden=8).double()
    randomize_zero_layers(aligner, seed=5)
    f1 = [f.requires_grad_() for f in random_pyramid([4, 6], 1, 8, 8, seed=5)]
    ft0 = random_pyramid([4, 6], 1, 8, 8, seed=6)
    offset = (0.7 * torch.randn(1, 2, 8, 8, generator=_gen(14), dtype=torch.float64)).requires_grad_()
    loss = sum(a.pow(2).sum() for a in align_pyramid(aligner, offset, f1, ft0))
    loss.backward()
    assert offset.grad is not None and offset.grad.abs().sum() > 0
    for f in f1:
        assert f.grad is not None and f.grad.abs().sum() > 0


# ---------------------------------------------------------
# Adaptive dilation and the quasi-binary mask
# ---------------------------------------------------------
def _random_adm(level_channels=4, seed=0):
    with seeded(seed):
        adm = AdaptiveDilation(level_channels, channels=4).double()
    gen = _gen(seed + 100)
    with torch.no_grad():
        for p in adm.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return adm


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_occluded_pixel_mask_support_is_17x17(seed):
    adm = _random_adm(seed=seed)
    mb = torch.zeros(1, 1, 64, 64, dtype=torch.float64)
    mb[0, 0, 30, 33] = 1.0
    ft0 = torch.randn(1, 4, 64, 64, generator=_gen(seed), dtype=torch.float64)
    ft1 = torch.randn(1, 4, 64, 64, generator=_gen(seed + 1), dtype=torch.float64)

    mask = quasi_binary_mask(adm_project(adm, mb, ft0, ft1), mb, alpha=0.0)[0, 0]
    ys, xs = torch.meshgrid(torch.arange(64), torch.arange(64), indexing="ij")
    outside = torch.maximum((ys - 30).abs(), (xs - 33).abs()) > 8
    assert torch.all(mask[outside] == 0)
    assert mask[30, 33] >= TANH2
    assert torch.all((mask >= 0) & (mask <= 1))


def test_mask_is_at_least_tanh2_on_occluded_pixels():
    adm = _random_adm(seed=3)
    mb = (torch.rand(1, 1, 16, 16, generator=_gen(8)) > 0.8).double()
    ft = torch.randn(1, 4, 16, 16, generator=_gen(9), dtype=torch.float64)
    mask = quasi_binary_mask(adm(mb, ft, ft), mb, alpha=0.0)
    assert torch.all(mask[mb == 1] >= TANH2)


def test_training_mask_noise_needs_generator_and_stays_bounded():
    mhat = torch.zeros(1, 1, 8, 8)
    mb = torch.zeros(1, 1, 8, 8)
    with pytest.raises(ValidationError):
        quasi_binary_mask(mhat, mb, training=True)
    noisy = quasi_binary_mask(mhat, mb, alpha=1e-3, training=True, generator=make_generator(0))
    assert torch.all(noisy <= math.tanh(1e-3))
    assert noisy.max() > 0


def test_softmax_attention_sums_to_one():
    with seeded(0):
        adm = AdaptiveDilation(4, channels=5, norm="softmax")
    ft = torch.randn(2, 4, 8, 8, generator=_gen(10))
    weights = adm.attention(ft, ft)
    assert torch.allclose(weights.sum(dim=1), torch.ones(2))


def test_adaptive_dilation_gradcheck():
    adm = _random_adm(seed=4)
    mb = torch.rand(1, 1, 12, 12, generator=_gen(11), dtype=torch.float64).requires_grad_()
    ft0 = torch.randn(1, 4, 12, 12, generator=_gen(12), dtype=torch.float64).requires_grad_()
    ft1 = torch.randn(1, 4, 12, 12, generator=_gen(13), dtype=torch.float64)

    def fn(m, f):
        return adm(m, f, ft1)

    assert torch.autograd.gradcheck(fn, (mb, ft0), eps=1e-6, atol=1e-5, rtol=1e-3)


def test_blend_pyramid_selects_by_mask():
    a = random_pyramid([2, 2], 1, 4, 4, seed=1)
    b = random_pyramid([2, 2], 1, 4, 4, seed=2)
    zeros = [torch.zeros(1, 1, 4, 4, dtype=torch.float64), torch.zeros(1, 1, 2, 2, dtype=torch.float64)]
    ones = [torch.ones_like(m) for m in zeros]
    for x, y in zip(blend_pyramid(a, b, zeros), a):
        assert torch.equal(x, y)
    for x, y in zip(blend_pyramid(a, b, ones), b):
        assert torch.equal(x, y)


# ---------------------------------------------------------
# Full blender
# ---------------------------------------------------------
def _blender(**overrides):
    config = small_config(**overrides)
    with seeded(0):
        return AsymmetricBlender(config).double(), config


def test_blender_zero_motion_returns_frame0_features():
    blender, config = _blender()
    f0 = random_pyramid(config.channel_plan, 1, 16, 16, seed=1)
    f1 = random_pyramid(config.channel_plan, 1, 16, 16, seed=2)
    zero = torch.zeros(1, 2, 16, 16, dtype=torch.float64)
    result = blender(f0, f1, zero, zero, 0.5)
    for m in result.binary_masks + result.masks:
        assert torch.all(m == 0)
    for ft, f in zip(result.ft, f0):
        assert torch.allclose(ft, f, atol=1e-10)


def test_blender_masks_are_quasi_binary():
    blender, config = _blender()
    randomize_zero_layers(blender, scale=0.1)
    f0 = random_pyramid(config.channel_plan, 1, 16, 16, seed=3)
    f1 = random_pyramid(config.channel_plan, 1, 16, 16, seed=4)
    flow01 = 3.0 * torch.randn(1, 2, 16, 16, generator=_gen(14), dtype=torch.float64)
    flow10 = -flow01
    result = blender(f0, f1, flow01, flow10, 0.5)
    for l, (mask, mb) in enumerate(zip(result.masks, result.binary_masks)):
        assert mask.shape == (1, 1, 16 // 2 ** l, 16 // 2 ** l)
        assert set(mb.unique().tolist()) <= {0.0, 1.0}
        assert torch.all((mask >= 0) & (mask <= 1))
        assert torch.all(mask[mb == 1] >= TANH2)


def test_binary_mask_mode_blends_with_raw_mask():
    blender, config = _blender(mask_mode="binary")
    assert blender.dilation is None
    f0 = random_pyramid(config.channel_plan, 1, 16, 16, seed=5)
    f1 = random_pyramid(config.channel_plan, 1, 16, 16, seed=6)
    flow01 = 2.0 * torch.randn(1, 2, 16, 16, generator=_gen(15), dtype=torch.float64)
    result = blender(f0, f1, flow01, -flow01, 0.5)
    for mask, mb in zip(result.masks, result.binary_masks):
        assert torch.equal(mask, mb)


def test_blender_uses_rescaled_flow_per_level():
    blender, config = _blender()
    flow01 = torch.zeros(1, 2, 16, 16, dtype=torch.float64)
    flow01[:, 0] = 4.0
    f0 = random_pyramid(config.channel_plan, 1, 16, 16, seed=7)
    result = blender(f0, f0, flow01, -flow01, 0.5)
    # a uniform 2-pixel shift at level 0 is a 1-pixel shift at level 1: one empty column each
    assert torch.all(result.binary_masks[0][..., :2] == 1)
    assert torch.all(result.binary_masks[1][..., :1] == 1)
    assert torch.all(result.binary_masks[1][..., 1:] == 0)
    assert torch.equal(rescale_flow(flow01, 1)[:, 0], torch.full((1, 8, 8), 2.0, dtype=torch.float64))
