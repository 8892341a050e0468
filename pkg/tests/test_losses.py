import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from utils.exceptions import NonFiniteLossError, ObjectiveError
from utils.objective.losses import (
    EPS, LossWeights, build_report, cycle_loss, discriminator_adversarial_loss, gan_losses,
    generator_adversarial_loss, id_loss, kl_divergence, mask_loss, total_losses, vae_loss,
)

COMPONENTS = {"vae": 2.5, "gan_g": 0.7, "gan_d": 1.3, "id": 0.2, "cycle": 0.4, "mask": 0.1}


def _t(*values):
    return torch.tensor(values, dtype=torch.float64)


# -----------------------------------------
# VAE
# -----------------------------------------
def test_vae_loss_is_zero_at_the_prior_with_perfect_reconstruction():
    x = torch.rand(2, 3, 4, 4)
    mu = torch.zeros(2, 8)
    assert float(vae_loss(x, x.clone(), mu, torch.zeros_like(mu), 0.1, 1.0)) == 0.0


def test_single_dimension_kl():
    x = torch.zeros(1, 3, 2, 2)
    loss = vae_loss(x, x, torch.tensor([1.0]), torch.tensor([0.0]), lambda1=1.0, lambda2=0.0)
    assert float(loss) == pytest.approx(0.5, abs=1e-9)


def test_constant_offset_reconstruction():
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    mu = torch.zeros(2, 4, dtype=torch.float64)
    loss = vae_loss(x, x + 0.1, mu, mu, lambda1=0.0, lambda2=1.0)
    assert float(loss) == pytest.approx(0.1, abs=1e-9)


def test_kl_is_summed_per_item_and_averaged_over_the_batch():
    mu = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
    assert float(kl_divergence(mu, torch.zeros_like(mu))) == pytest.approx(0.25)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(0)
    mu = rng.uniform(-2, 2, size=8)
    logvar = rng.uniform(-2, 2, size=8)
    std = np.exp(0.5 * logvar)

    samples = mu + std * rng.standard_normal((100_000, 8))
    log_q = -0.5 * (((samples - mu) / std) ** 2 + logvar + np.log(2 * np.pi))
    log_p = -0.5 * (samples ** 2 + np.log(2 * np.pi))
    estimate = float(np.mean((log_q - log_p).sum(axis=1)))

    closed_form = float(kl_divergence(torch.from_numpy(mu), torch.from_numpy(logvar)))
    assert estimate == pytest.approx(closed_form, rel=0.01)


def test_vae_loss_rejects_bad_inputs():
    x = torch.rand(1, 3, 2, 2)
    mu = torch.zeros(1, 2)
    with pytest.raises(ObjectiveError):
        vae_loss(x, torch.rand(1, 3, 4, 4), mu, mu, 1.0, 1.0)
    with pytest.raises(ObjectiveError):
        vae_loss(x, x, torch.tensor([[float("nan"), 0.0]]), mu, 1.0, 1.0)


# -----------------------------------------
# GAN
# -----------------------------------------
def test_perfect_discriminator():
    gan_d, _ = gan_losses(_t(1 - EPS), _t(EPS))
    assert float(gan_d) == pytest.approx(0.0, abs=1e-6)


def test_undecided_discriminator():
    gan_d, _ = gan_losses(_t(0.5), _t(0.5))
    assert float(gan_d) == pytest.approx(2 * math.log(2), abs=1e-9)


def test_fooled_discriminator_gives_zero_generator_loss():
    assert float(generator_adversarial_loss(_t(1 - EPS))) == pytest.approx(0.0, abs=1e-6)


def test_probabilities_are_clamped_away_from_zero_and_one():
    gan_d = discriminator_adversarial_loss(_t(0.0), _t(1.0))
    assert math.isfinite(float(gan_d))
    assert float(gan_d) == pytest.approx(-2 * math.log(EPS), rel=1e-6)


def test_gan_rejects_values_outside_unit_interval():
    with pytest.raises(ObjectiveError):
        gan_losses(_t(1.2), _t(0.5))
    with pytest.raises(ObjectiveError):
        generator_adversarial_loss(_t(-0.1))


# -----------------------------------------
# ID and cycle
# -----------------------------------------
def test_id_loss_examples():
    assert float(id_loss(_t(1, 0), _t(1, 0))) == 0.0
    assert float(id_loss(_t(1, 0), _t(0, 1))) == pytest.approx(1.0)
    a, b = torch.rand(16, dtype=torch.float64), torch.rand(16, dtype=torch.float64)
    assert float(id_loss(3 * a, 3 * b)) == pytest.approx(9 * float(id_loss(a, b)))
    with pytest.raises(ObjectiveError):
        id_loss(_t(1, 0), _t(1, 0, 0))


def test_cycle_loss_examples():
    x, y = torch.rand(2, 3, 4, 4, dtype=torch.float64), torch.rand(2, 3, 4, 4, dtype=torch.float64)
    assert float(cycle_loss(x, x, y, y)) == 0.0
    assert float(cycle_loss(x, x + 0.2, y, y)) == pytest.approx(0.2, abs=1e-9)

    xc, yc = torch.rand_like(x), torch.rand_like(y)
    assert float(cycle_loss(x, xc, y, yc)) == pytest.approx(float(cycle_loss(y, yc, x, xc)), abs=1e-12)
    with pytest.raises(ObjectiveError):
        cycle_loss(x, x[:1], y, y)


# -----------------------------------------
# Mask
# -----------------------------------------
def test_mask_loss_examples():
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    mask = torch.zeros(2, 1, 4, 4, dtype=torch.float64)
    mask[:, :, 1:3, 1:3] = 1
    assert float(mask_loss(x, x, mask)) == 0.0

    foreground_only = x + 0.3 * mask
    assert float(mask_loss(x, foreground_only, mask)) == 0.0

    zeros = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    assert float(mask_loss(zeros, zeros + 0.5, torch.zeros(1, 1, 4, 4))) == pytest.approx(0.5, abs=1e-9)


def test_mask_loss_gating():
    x = torch.rand(1, 3, 4, 4, dtype=torch.float64)
    gx = x + 0.1
    mask = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    mask[..., 0, 0] = 1
    base = float(mask_loss(x, gx, mask))

    fg = gx.clone()
    fg[0, 1, 0, 0] += 5.0
    assert float(mask_loss(x, fg, mask)) == base

    bg = gx.clone()
    bg[0, 1, 2, 2] += 5.0
    assert float(mask_loss(x, bg, mask)) > base


def test_mask_loss_accepts_unbatched_images():
    x = torch.zeros(3, 4, 4)
    assert float(mask_loss(x, x + 0.25, torch.zeros(4, 4))) == pytest.approx(0.25)


def test_all_foreground_mask_returns_zero_with_a_warning(caplog):
    x = torch.rand(1, 3, 4, 4)
    loss = mask_loss(x, torch.rand_like(x), torch.ones(1, 1, 4, 4))
    assert float(loss) == 0.0
    assert "all-foreground" in caplog.text


# -----------------------------------------
# Gradients
# -----------------------------------------
def _small_image(requires_grad=True):
    return torch.rand(1, 3, 4, 4, dtype=torch.float64, requires_grad=requires_grad)


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    x, y = _small_image(False), _small_image(False)
    mask = (torch.rand(1, 1, 4, 4, dtype=torch.float64) > 0.5).double()
    mu = torch.randn(1, 6, dtype=torch.float64, requires_grad=True)
    logvar = torch.randn(1, 6, dtype=torch.float64, requires_grad=True)
    # keep |x - xr| away from the kink of the absolute value
    xr = (x + 0.1 + 0.05 * torch.rand_like(x)).requires_grad_(True)
    xc = (x - 0.2 - 0.05 * torch.rand_like(x)).requires_grad_(True)
    yc = (y + 0.3 + 0.05 * torch.rand_like(y)).requires_grad_(True)
    fx = torch.randn(16, dtype=torch.float64)
    fgx = torch.randn(16, dtype=torch.float64, requires_grad=True)
    d_real = torch.rand(4, dtype=torch.float64).mul(0.8).add(0.1).requires_grad_(True)
    d_fake = torch.rand(4, dtype=torch.float64).mul(0.8).add(0.1).requires_grad_(True)

    opts = dict(eps=1e-6, atol=1e-8, rtol=1e-4)
    assert torch.autograd.gradcheck(lambda a, m, lv: vae_loss(x, a, m, lv, 0.1, 1.0), (xr, mu, logvar), **opts)
    assert torch.autograd.gradcheck(lambda a, b: cycle_loss(x, a, y, b), (xc, yc), **opts)
    assert torch.autograd.gradcheck(lambda a: mask_loss(x, a, mask), (xr,), **opts)
    assert torch.autograd.gradcheck(lambda b: id_loss(fx, b), (fgx,), **opts)
    assert torch.autograd.gradcheck(discriminator_adversarial_loss, (d_real, d_fake), **opts)
    assert torch.autograd.gradcheck(generator_adversarial_loss, (d_fake,), **opts)


# -----------------------------------------
# Composition
# -----------------------------------------
def test_total_losses_examples():
    zero = LossWeights(alpha1=0, alpha2=0, alpha3=0, alpha4=0, alpha5=0)
    assert total_losses(COMPONENTS, zero) == (0, 0)

    only_vae = LossWeights(alpha1=1, alpha2=0, alpha3=0, alpha4=0, alpha5=0)
    assert total_losses(COMPONENTS, only_vae)[0] == pytest.approx(2.5)

    weights = LossWeights()
    g, d = total_losses(COMPONENTS, weights)
    g2, d2 = total_losses(COMPONENTS, weights.scaled(2.0))
    assert g2 == pytest.approx(2 * g)
    assert d2 == pytest.approx(2 * d)
    assert d == pytest.approx(weights.alpha2 * COMPONENTS["gan_d"])


def test_total_losses_superposition():
    weights = LossWeights()
    other = {k: v * 0.5 + 0.1 for k, v in COMPONENTS.items()}
    summed = {k: COMPONENTS[k] + other[k] for k in COMPONENTS}
    g_a, d_a = total_losses(COMPONENTS, weights)
    g_b, d_b = total_losses(other, weights)
    g_sum, d_sum = total_losses(summed, weights)
    assert g_sum == pytest.approx(g_a + g_b)
    assert d_sum == pytest.approx(d_a + d_b)


@pytest.mark.parametrize("field, value", [("alpha3", -1.0), ("lambda1", float("inf")), ("delta", float("nan"))])
def test_loss_weights_validation(field, value):
    with pytest.raises(ValidationError):
        LossWeights(**{field: value})


def test_build_report_names_the_non_finite_term():
    components = {**COMPONENTS, "cycle": float("nan")}
    with pytest.raises(NonFiniteLossError) as info:
        build_report(components, 1.0, 1.0)
    assert info.value.term == "cycle"

    report = build_report(COMPONENTS, 3.0, 0.65)
    assert report.vae == 2.5
    assert report.total_d == 0.65
