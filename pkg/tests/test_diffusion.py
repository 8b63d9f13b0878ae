import math

import pytest
import torch

from diffmark.diffusion import (
    DiffusionVariance,
    ddim_invert,
    ddim_reverse_step,
    ddim_sample,
    ddim_update,
    ddpm_reverse_step,
    noise_prediction_loss,
    predict_x0,
    q_sample,
)
from diffmark.errors import ParameterError, ShapeError, StateError
from diffmark.schedule import make_schedule
from diffmark.unet import build_denoiser


class ZeroDenoiser(torch.nn.Module):
    train_steps = 1

    def forward(self, x, t):
        return torch.zeros_like(x)


class EchoDenoiser(torch.nn.Module):
    """Returns the target noise it was given; a perfect predictor."""

    def __init__(self, eps):
        super().__init__()
        self.eps = eps

    def forward(self, x, t):
        return self.eps


@pytest.fixture(scope="module")
def sched():
    return make_schedule(10, 0.02, 0.2)


def test_q_sample_identity_when_alpha_bar_one():
    sched = make_schedule(1, 1e-12, 1e-12)
    x0 = torch.randn(2, 3, 4, 4)
    out = q_sample(x0, 0, torch.randn_like(x0), sched)  # abar_0 = 1 exactly
    assert torch.allclose(out, x0)


def test_q_sample_pure_noise_limit():
    sched = make_schedule(400, 0.05, 0.05)  # abar_400 ~ 1e-9
    x0 = torch.full((1, 1, 2, 2), 5.0)
    eps = torch.randn_like(x0)
    out = q_sample(x0, 400, eps, sched)
    assert torch.allclose(out, eps, atol=1e-3)


def test_q_sample_hand_value():
    # abar = 0.25, x0 = 1, eps = 1 -> 0.5 + sqrt(0.75)
    sched = make_schedule(1, 0.75, 0.75)
    out = q_sample(torch.ones(1, 1, 2, 2), 1, torch.ones(1, 1, 2, 2), sched)
    expected = 0.5 + math.sqrt(0.75)
    assert torch.allclose(out, torch.full_like(out, expected), atol=1e-6)


def test_q_sample_shape_error():
    sched = make_schedule(5, 0.1, 0.1)
    with pytest.raises(ShapeError):
        q_sample(torch.zeros(1, 3, 4, 4), 1, torch.zeros(1, 3, 2, 2), sched)


def test_q_sample_per_element_timesteps(sched):
    x0 = torch.randn(3, 1, 2, 2)
    eps = torch.randn_like(x0)
    t = torch.tensor([1, 5, 10])
    batched = q_sample(x0, t, eps, sched)
    for i, ti in enumerate(t.tolist()):
        single = q_sample(x0[i:i + 1], ti, eps[i:i + 1], sched)
        assert torch.allclose(batched[i], single[0], atol=1e-7)


def test_forward_moments_match_theory():
    sched = make_schedule(100, 1e-3, 0.05)
    x0 = torch.full((1, 1, 3, 3), 0.7)
    t = 50
    gen = torch.Generator().manual_seed(42)
    n = 10_000
    eps = torch.randn((n, 1, 3, 3), generator=gen)
    draws = q_sample(x0.expand(n, -1, -1, -1), t, eps, sched)
    ab = sched.alpha_bar(t)
    mean_err = (draws.mean(0) - math.sqrt(ab) * x0[0]).abs()
    se = math.sqrt((1 - ab) / n)
    assert float(mean_err.max()) < 4 * se
    var = draws.var(0, unbiased=True)
    assert float((var - (1 - ab)).abs().max() / (1 - ab)) < 0.05


def test_iterated_one_step_noising_matches_closed_form_in_distribution():
    """Compose x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) z step by step and
    compare first/second moments against the closed-form jump."""
    sched = make_schedule(6, 0.05, 0.3)
    gen = torch.Generator().manual_seed(1)
    n = 10_000
    x0 = torch.full((n, 1, 1, 1), 0.5)
    x = x0.clone()
    for t in range(1, 7):
        beta = sched.beta(t)
        z = torch.randn_like(x)
        x = math.sqrt(1 - beta) * x + math.sqrt(beta) * z
    ab = sched.alpha_bar(6)
    assert abs(float(x.mean()) - math.sqrt(ab) * 0.5) < 4 * math.sqrt((1 - ab) / n)
    assert abs(float(x.var()) - (1 - ab)) / (1 - ab) < 0.05


def test_ddpm_step_zero_noise_prediction(sched):
    x = torch.randn(2, 3, 4, 4)
    var = DiffusionVariance("ddpm-posterior")
    out = ddpm_reverse_step(x, 1, ZeroDenoiser(), sched, var, torch.randn_like(x))
    # t=1: no noise added; eps_hat = 0 -> x / sqrt(alpha_1)
    assert torch.allclose(out, x / math.sqrt(sched.alpha(1)), atol=1e-6)


def test_ddpm_step_zero_draw_returns_posterior_mean(sched):
    x = torch.randn(2, 3, 4, 4)
    eps_hat = torch.randn_like(x)
    den = EchoDenoiser(eps_hat)
    var = DiffusionVariance("ddpm-posterior")
    out = ddpm_reverse_step(x, 5, den, sched, var, torch.zeros_like(x))
    beta, alpha, ab = sched.beta(5), sched.alpha(5), sched.alpha_bar(5)
    mu = (x - beta / math.sqrt(1 - ab) * eps_hat) / math.sqrt(alpha)
    assert torch.allclose(out, mu, atol=1e-6)


def test_ddpm_step_guards(sched):
    x = torch.randn(1, 3, 4, 4)
    var = DiffusionVariance("ddpm-posterior")
    with pytest.raises(ParameterError):
        ddpm_reverse_step(x, 11, ZeroDenoiser(), sched, var, torch.zeros_like(x))
    with pytest.raises(ParameterError):
        ddpm_reverse_step(x, 5, ZeroDenoiser(), sched,
                          DiffusionVariance("ddim-deterministic"), torch.zeros_like(x))
    with pytest.raises(ShapeError):
        ddpm_reverse_step(x, 5, ZeroDenoiser(), sched, var, torch.zeros(1, 3, 2, 2))


def test_variance_modes(sched):
    assert DiffusionVariance("ddim-deterministic").sigma(5, sched) == 0.0
    assert DiffusionVariance("ddpm-posterior").sigma(5, sched) == pytest.approx(
        math.sqrt(sched.beta(5)))
    with pytest.raises(ParameterError):
        DiffusionVariance("other")


def test_ddim_step_zero_noise_prediction(sched):
    x = torch.randn(2, 3, 4, 4)
    out = ddim_reverse_step(x, 8, 3, ZeroDenoiser(), sched)
    ratio = math.sqrt(sched.alpha_bar(3) / sched.alpha_bar(8))
    assert torch.allclose(out, ratio * x, atol=1e-6)


def test_ddim_degenerate_equal_step_is_identity(sched):
    x = torch.randn(2, 3, 4, 4)
    eps_hat = torch.randn_like(x)
    assert torch.allclose(ddim_update(x, 5, 5, eps_hat, sched), x, atol=1e-6)


def test_ddim_step_guard(sched):
    with pytest.raises(ParameterError):
        ddim_reverse_step(torch.zeros(1, 3, 4, 4), 3, 3, ZeroDenoiser(), sched)


def test_ddim_step_algebraic_inverse_roundtrip(sched):
    x = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    eps_hat = torch.randn_like(x)
    down = ddim_update(x, 8, 3, eps_hat, sched)
    back = ddim_update(down, 3, 8, eps_hat, sched)
    assert float((back - x).abs().max()) < 1e-5


def test_ddim_trajectory_bit_identical():
    sched = make_schedule(10, 0.02, 0.2)
    den = build_denoiser({"base_channels": 8, "channel_mults": (1, 2)}, seed=0)
    den.eval()
    x = torch.randn(2, 3, 8, 8)
    with torch.no_grad():
        a = ddim_sample(x, den, sched, 5)
        b = ddim_sample(x, den, sched, 5)
    assert torch.equal(a, b)


def test_ddim_invert_trivial_and_guards(sched):
    den = ZeroDenoiser()
    x = torch.randn(2, 3, 4, 4)
    assert torch.equal(ddim_invert(x, den, sched, 0), x)

    class Untrained(ZeroDenoiser):
        train_steps = 0

    with pytest.raises(StateError):
        ddim_invert(x, Untrained(), sched, 5)


def test_ddim_invert_bit_identical():
    sched = make_schedule(10, 0.02, 0.2)
    den = build_denoiser({"base_channels": 8, "channel_mults": (1, 2)}, seed=1)
    den.eval()
    den.mark_trained()
    x = torch.randn(2, 3, 8, 8)
    with torch.no_grad():
        a = ddim_invert(x, den, sched, 5)
        b = ddim_invert(x, den, sched, 5)
    assert torch.equal(a, b)


def test_predict_x0_inverts_q_sample(sched):
    x0 = torch.randn(2, 3, 4, 4)
    eps = torch.randn_like(x0)
    xt = q_sample(x0, 7, eps, sched)
    assert torch.allclose(predict_x0(xt, 7, eps, sched), x0, atol=1e-5)


def test_noise_prediction_loss_examples(sched):
    x0 = torch.zeros(2, 3, 4, 4)
    eps = torch.ones_like(x0)
    assert float(noise_prediction_loss(x0, 3, eps, EchoDenoiser(eps), sched)) == 0.0
    assert float(noise_prediction_loss(x0, 3, eps, ZeroDenoiser(), sched)) == pytest.approx(1.0)


def test_noise_prediction_loss_batch_permutation_invariant(sched):
    gen = torch.Generator().manual_seed(0)
    x0 = torch.randn(4, 3, 4, 4, generator=gen)
    eps = torch.randn(4, 3, 4, 4, generator=gen)
    den = build_denoiser({"base_channels": 8, "channel_mults": (1,)}, seed=2)
    den.eval()
    t = torch.tensor([2, 4, 6, 8])
    perm = torch.tensor([3, 1, 0, 2])
    with torch.no_grad():
        a = noise_prediction_loss(x0, t, eps, den, sched)
        b = noise_prediction_loss(x0[perm], t[perm], eps[perm], den, sched)
    assert float((a - b).abs()) < 1e-6


def test_clamped_samplers_match_pure_ops_when_inactive():
    """With a denoiser whose x0 estimates stay inside [-1, 1], the stabilized
    samplers must equal the pure single-step updates exactly."""
    sched = make_schedule(10, 0.02, 0.2)

    class ShrinkDenoiser(torch.nn.Module):
        """eps_hat chosen so that predict_x0 lands strictly inside [-1, 1]."""

        def forward(self, x, t):
            if isinstance(t, int):
                tt = t
            else:
                tt = int(t[0])
            ab = sched.alpha_bar(tt)
            # x0_hat = (x - sqrt(1-ab) eps) / sqrt(ab) = 0.5 * tanh(x) target
            return (x - math.sqrt(ab) * 0.5 * torch.tanh(x)) / math.sqrt(1 - ab)

    den = ShrinkDenoiser()
    x = torch.randn(2, 3, 8, 8)
    from diffmark.diffusion import ddim_sample, ddpm_sample

    with torch.no_grad():
        a = ddim_sample(x, den, sched, 5, clamp_x0=True)
        b = ddim_sample(x, den, sched, 5, clamp_x0=False)
    assert torch.allclose(a, b, atol=1e-5)

    gen1 = torch.Generator().manual_seed(0)
    gen2 = torch.Generator().manual_seed(0)
    with torch.no_grad():
        c = ddpm_sample(x, den, sched, gen1, clamp_x0=True)
        d = ddpm_sample(x, den, sched, gen2, clamp_x0=False)
    assert torch.allclose(c, d, atol=1e-4)
