import math

import pytest
import torch

from framesetu.errors import NumericalError, ShapeError, ValidationError
from framesetu.model.nflow import (
    ActNorm,
    AffineCoupling,
    ConditionalFlowGenerator,
    FlowStep,
    InvConv1x1,
    Split,
    bits_per_dim,
    sample_latent,
    split,
    squeeze,
    unsplit,
    unsqueeze,
)
from framesetu.seeding import make_generator, seeded
from tests.helpers import (
    finite_difference_jacobian,
    finite_difference_param,
    random_pyramid,
    randomize_zero_layers,
    relative_error,
    small_config,
)


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


def _generator(seed=0, **overrides):
    config = small_config(**overrides)
    with seeded(seed):
        gen = ConditionalFlowGenerator(config).double()
    randomize_zero_layers(gen, scale=0.05, seed=seed)
    return gen, config


def _inputs(config, batch, size, seed=0):
    x = torch.rand(batch, 3, size, size, generator=_gen(seed), dtype=torch.float64) - 0.5
    ft = random_pyramid(config.channel_plan, batch, size, size, seed=seed + 1)
    return x, ft


# ---------------------------------------------------------
# Squeeze and split
# ---------------------------------------------------------
def test_squeeze_shape_and_round_trip():
    h = torch.randn(2, 3, 4, 4, generator=_gen())
    s = squeeze(h)
    assert s.shape == (2, 12, 2, 2)
    assert torch.equal(unsqueeze(s), h)


def test_squeeze_rejects_odd_dims():
    with pytest.raises(ShapeError):
        squeeze(torch.zeros(1, 3, 5, 4))


def test_split_shape_and_round_trip():
    h = torch.randn(1, 8, 2, 2, generator=_gen(1))
    keep, z = split(h)
    assert keep.shape == z.shape == (1, 4, 2, 2)
    assert torch.equal(unsplit(keep, z), h)
    with pytest.raises(ShapeError):
        split(torch.zeros(1, 5, 2, 2))


def test_zero_initialised_split_prior_is_standard_normal():
    layer = Split(8, cond_channels=2, learned_prior=True)
    h = torch.randn(1, 8, 4, 4, generator=_gen(2))
    keep, z, logdet = layer(h, cond=torch.randn(1, 2, 4, 4, generator=_gen(3)))
    assert torch.equal(z, h[:, 4:])
    assert torch.all(logdet == 0)


# ---------------------------------------------------------
# Actnorm
# ---------------------------------------------------------
def test_actnorm_identity():
    layer = ActNorm(4, initialized=True)
    h = torch.randn(2, 4, 3, 3, generator=_gen(4))
    out, logdet = layer(h)
    assert torch.equal(out, h)
    assert torch.all(logdet == 0)


def test_actnorm_data_dependent_init_standardises():
    layer = ActNorm(4).double()
    h = 3.0 * torch.randn(8, 4, 6, 6, generator=_gen(5), dtype=torch.float64) + 2.0
    out, _ = layer(h)
    mean = out.mean(dim=(0, 2, 3))
    var = out.var(dim=(0, 2, 3), unbiased=False)
    assert torch.all(mean.abs() < 1e-4)
    assert torch.all((var - 1).abs() < 1e-3)
    assert bool(layer.initialized)


def test_actnorm_logdet_formula():
    layer = ActNorm(4, initialized=True)
    with torch.no_grad():
        layer.scale.fill_(2.0)
    _, logdet = layer(torch.randn(1, 4, 8, 8, generator=_gen(6)))
    assert logdet.item() == pytest.approx(64 * 4 * math.log(2), rel=1e-6)


def test_actnorm_round_trip_and_zero_scale():
    layer = ActNorm(3).double()
    h = torch.randn(2, 3, 4, 4, generator=_gen(7), dtype=torch.float64)
    out, logdet = layer(h)
    back, logdet_back = layer(out, logdet, reverse=True)
    assert torch.allclose(back, h, atol=1e-10)
    assert torch.allclose(logdet_back, torch.zeros(2, dtype=torch.float64), atol=1e-10)
    with torch.no_grad():
        layer.scale[0, 1] = 0.0
    with pytest.raises(NumericalError):
        layer(h)


# ---------------------------------------------------------
# Invertible 1x1 convolution
# ---------------------------------------------------------
def test_invconv_identity_weight():
    layer = InvConv1x1(4)
    with torch.no_grad():
        layer.weight.copy_(torch.eye(4))
    h = torch.randn(1, 4, 3, 3, generator=_gen(8))
    out, logdet = layer(h)
    assert torch.allclose(out, h)
    assert logdet.abs().max() == 0


def test_invconv_orthogonal_init_has_unit_determinant():
    with seeded(0):
        layer = InvConv1x1(8).double()
    assert abs(layer.log_abs_det().item()) < 1e-6


def test_invconv_round_trip():
    with seeded(1):
        layer = InvConv1x1(4)
    h = torch.randn(1, 4, 8, 8, generator=_gen(9))
    out, logdet = layer(h)
    back, _ = layer(out, logdet, reverse=True)
    assert (back - h).abs().max() < 1e-5


def test_invconv_singular_matrix_is_rejected():
    layer = InvConv1x1(3)
    with torch.no_grad():
        layer.weight.zero_()
    with pytest.raises(NumericalError):
        layer(torch.zeros(1, 3, 2, 2))


# ---------------------------------------------------------
# Affine coupling
# ---------------------------------------------------------
def test_coupling_initial_scale_is_e():
    with seeded(0):
        layer = AffineCoupling(4, cond_channels=2, hidden=8)
    h = torch.randn(1, 4, 4, 4, generator=_gen(10))
    cond = torch.randn(1, 2, 4, 4, generator=_gen(11))
    out, logdet = layer(h, cond=cond)
    assert torch.equal(out[:, :2], h[:, :2])
    assert torch.allclose(out[:, 2:], math.e * h[:, 2:])
    assert logdet.item() == 2 * 4 * 4


def test_coupling_scale_stays_within_bounds():
    gen = _gen(12)
    with seeded(1):
        layer = AffineCoupling(4, hidden=8).double()
    h = torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64)
    for _ in range(200):
        with torch.no_grad():
            layer.lam.fill_(float(torch.empty(1).uniform_(-5, 5, generator=gen)))
            layer.eta.fill_(float(torch.empty(1).uniform_(-5, 5, generator=gen)))
            last = layer.w_s.net[-1]
            last.weight.copy_(3 * torch.randn(last.weight.shape, generator=gen, dtype=torch.float64))
        log_scale, _ = layer.log_scale_and_bias(h[:, :2])
        lam, eta = layer.lam.item(), layer.eta.item()
        assert torch.all(log_scale >= eta - abs(lam) - 1e-12)
        assert torch.all(log_scale <= eta + abs(lam) + 1e-12)
        out, logdet = layer(h)
        back, _ = layer(out, logdet, reverse=True)
        assert torch.isfinite(back).all()


def test_coupling_round_trip_with_random_parameters():
    with seeded(2):
        layer = AffineCoupling(6, cond_channels=3, hidden=8).double()
    randomize_zero_layers(layer, scale=0.5, seed=2)
    h = torch.randn(2, 6, 4, 4, generator=_gen(13), dtype=torch.float64)
    cond = torch.randn(2, 3, 4, 4, generator=_gen(14), dtype=torch.float64)
    out, logdet = layer(h, cond=cond)
    back, logdet_back = layer(out, logdet, cond=cond, reverse=True)
    assert (back - h).abs().max() < 1e-5
    assert torch.allclose(logdet_back, torch.zeros(2, dtype=torch.float64), atol=1e-9)


def test_coupling_needs_two_channels():
    with pytest.raises(ShapeError):
        AffineCoupling(1)


# ---------------------------------------------------------
# Generator
# ---------------------------------------------------------
def test_latent_shapes_conserve_dimension():
    gen, _ = _generator()
    shapes = gen.latent_shapes(32, 32)
    assert shapes == [(6, 16, 16), (24, 8, 8)]
    assert sum(c * h * w for c, h, w in shapes) == 3 * 32 * 32


def test_encode_rejects_incompatible_size():
    gen, config = _generator()
    x, ft = _inputs(config, 1, 8)
    with pytest.raises(ShapeError):
        gen.encode(torch.zeros(1, 3, 10, 10, dtype=torch.float64), ft)


def test_encode_decode_round_trip():
    gen, config = _generator(seed=1)
    x, ft = _inputs(config, 4, 32, seed=2)
    gen.initialize(x, ft)
    zs, _ = gen.encode(x, ft)
    assert sum(z[0].numel() for z in zs) == 3 * 32 * 32
    assert (gen.decode(zs, ft) - x).abs().max() < 1e-4


@pytest.mark.slow
def test_encode_decode_round_trip_on_many_images():
    gen, config = _generator(seed=1)
    x, ft = _inputs(config, 4, 32, seed=2)
    gen.initialize(x, ft)
    for batch in range(25):
        x, ft = _inputs(config, 4, 32, seed=10 + 2 * batch)
        zs, _ = gen.encode(x, ft)
        assert (gen.decode(zs, ft) - x).abs().max() < 1e-4


def test_decode_encode_round_trip():
    gen, config = _generator(seed=2)
    x, ft = _inputs(config, 2, 16, seed=3)
    gen.initialize(x, ft)
    zs = sample_latent(gen.latent_shapes(16, 16), 1.0, make_generator(0), batch=2, dtype=torch.float64)
    back, _ = gen.encode(gen.decode(zs, ft), ft)
    for a, b in zip(back, zs):
        assert (a - b).abs().max() < 1e-4


def test_log_determinant_matches_finite_difference_jacobian():
    gen, config = _generator(seed=3)
    x, ft = _inputs(config, 1, 8, seed=4)
    gen.initialize(x, ft)
    _, logdet = gen.encode(x, ft)

    def flat_latent(inp):
        zs, _ = gen.encode(inp, ft)
        return torch.cat([z.reshape(-1) for z in zs])

    jac = finite_difference_jacobian(flat_latent, x)
    assert jac.shape == (192, 192)
    _, expected = torch.linalg.slogdet(jac)
    assert relative_error(logdet.item(), expected.item()) < 1e-2


def test_density_integrates_to_one():
    with seeded(4):
        step = FlowStep(2, cond_channels=0, hidden=8).double()
    randomize_zero_layers(step, scale=0.3, seed=4)
    with torch.no_grad():
        step.actnorm.initialized.fill_(1)
        step.actnorm.scale.copy_(torch.tensor([0.7, 1.3], dtype=torch.float64).view(1, 2, 1, 1))
        step.coupling.lam.fill_(0.5)
        step.coupling.eta.fill_(0.1)

    axis = torch.linspace(-20, 20, 801, dtype=torch.float64)
    dx = (axis[1] - axis[0]).item()
    g1, g2 = torch.meshgrid(axis, axis, indexing="ij")
    x = torch.stack([g1.reshape(-1), g2.reshape(-1)], dim=1).view(-1, 2, 1, 1)
    with torch.no_grad():
        z, logdet = step(x)
    log_density = -0.5 * (z ** 2).sum(dim=(1, 2, 3)) - math.log(2 * math.pi) + logdet
    mass = torch.exp(log_density).sum().item() * dx * dx
    assert mass == pytest.approx(1.0, abs=1e-2)


def test_nll_is_prior_minus_logdet_and_finite():
    gen, config = _generator(seed=5)
    for trial in range(20):
        x, ft = _inputs(config, 2, 8, seed=10 + trial)
        value, zs = gen.nll_per_sample(x, ft)
        assert torch.isfinite(value).all()
    _, logdet = gen.encode(x, ft)
    prior = sum(0.5 * (z ** 2 + math.log(2 * math.pi)).sum(dim=(1, 2, 3)) for z in zs)
    assert torch.allclose(value, prior - logdet)
    assert gen.nll(x, ft).item() == pytest.approx(value.mean().item())


def test_nll_gradients_match_finite_differences():
    gen, config = _generator(seed=6)
    x, ft = _inputs(config, 2, 8, seed=7)
    gen.initialize(x, ft)
    step = gen.blocks[0].steps[0]
    targets = [(step.coupling.lam, ()), (step.coupling.eta, ()), (step.actnorm.scale, (0, 1, 0, 0))]

    gen.zero_grad()
    gen.nll(x, ft).backward()
    for param, index in targets:
        analytic = param.grad[index].item()
        numeric = finite_difference_param(lambda: gen.nll(x, ft), param, index)
        assert relative_error(analytic, numeric) < 1e-3


def test_decode_validates_latent():
    gen, config = _generator()
    _, ft = _inputs(config, 1, 8)
    zs = sample_latent(gen.latent_shapes(8, 8), 0.0, dtype=torch.float64)
    with pytest.raises(ShapeError):
        gen.decode(zs[:1], ft)
    with pytest.raises(ShapeError):
        gen.decode([zs[0][:, :2], zs[1]], ft)
    zs[1][0, 0, 0, 0] = float("nan")
    with pytest.raises(ValidationError):
        gen.decode(zs, ft)


def test_zero_temperature_decode_is_deterministic():
    gen, config = _generator()
    _, ft = _inputs(config, 1, 8)
    zs = sample_latent(gen.latent_shapes(8, 8), 0.0, dtype=torch.float64)
    assert torch.equal(gen.decode(zs, ft), gen.decode(zs, ft))


def test_learned_split_prior_keeps_bijection():
    gen, config = _generator(seed=7, learned_split_prior=True)
    x, ft = _inputs(config, 2, 16, seed=8)
    gen.initialize(x, ft)
    zs, _ = gen.encode(x, ft)
    assert (gen.decode(zs, ft) - x).abs().max() < 1e-4
    assert torch.isfinite(gen.nll(x, ft))


# ---------------------------------------------------------
# Sampling
# ---------------------------------------------------------
def test_sample_latent_temperature():
    shapes = [(1, 100, 1000)]
    assert torch.all(sample_latent(shapes, 0.0)[0] == 0)
    z = sample_latent(shapes, 0.5, make_generator(0))[0]
    assert z.std().item() == pytest.approx(0.5, abs=0.01)
    with pytest.raises(ValidationError):
        sample_latent(shapes, -0.1)


def test_same_generator_seed_same_sample():
    shapes = [(2, 4, 4), (8, 2, 2)]
    a = sample_latent(shapes, 0.3, make_generator(5))
    b = sample_latent(shapes, 0.3, make_generator(5))
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_bits_per_dim():
    assert bits_per_dim(math.log(2) * 10, 10) == pytest.approx(1.0)
