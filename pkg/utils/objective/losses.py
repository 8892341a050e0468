import logging
import math

import torch
from pydantic import BaseModel, ConfigDict, Field

from utils.exceptions import NonFiniteLossError, ObjectiveError
from utils.logger.logger import get_logger_config

logger = logging.getLogger("losses")
get_logger_config(logging)

EPS = 1e-7


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(default=0.1, ge=0, allow_inf_nan=False)
    lambda2: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    alpha1: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    alpha2: float = Field(default=0.5, ge=0, allow_inf_nan=False)
    alpha3: float = Field(default=0.5, ge=0, allow_inf_nan=False)
    alpha4: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    alpha5: float = Field(default=2.0, ge=0, allow_inf_nan=False)
    delta: float = Field(default=5.0, allow_inf_nan=False)

    def scaled(self, factor):
        return self.model_copy(update={f"alpha{i}": getattr(self, f"alpha{i}") * factor for i in range(1, 6)})


class LossReport(BaseModel):
    vae: float = Field(ge=0, allow_inf_nan=False)
    gan_g: float = Field(allow_inf_nan=False)
    gan_d: float = Field(allow_inf_nan=False)
    id: float = Field(ge=0, allow_inf_nan=False)
    cycle: float = Field(ge=0, allow_inf_nan=False)
    mask: float = Field(ge=0, allow_inf_nan=False)
    total_g: float = Field(allow_inf_nan=False)
    total_d: float = Field(allow_inf_nan=False)


def _require_finite(name, *tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ObjectiveError(f"Non-finite values passed to {name}")


def _require_same_shape(name, a, b):
    if a.shape != b.shape:
        raise ObjectiveError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


# -----------------------------------------
# VAE
# -----------------------------------------
def kl_divergence(mu, logvar):
    """
    KL(q(z|x) || N(0, I)) in closed form. Batched inputs (leading batch dim)
    are summed per item and averaged over the batch; a flat vector is summed.
    """
    kl = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar)
    if mu.dim() <= 1:
        return kl.sum()
    return kl.flatten(1).sum(dim=1).mean()


def vae_loss(x, xr, mu, logvar, lambda1, lambda2):
    _require_same_shape("vae_loss", x, xr)
    _require_same_shape("vae_loss", mu, logvar)
    _require_finite("vae_loss", x, xr, mu, logvar)
    return lambda1 * kl_divergence(mu, logvar) + lambda2 * (x - xr).abs().mean()


# -----------------------------------------
# GAN
# -----------------------------------------
def _check_probabilities(name, p):
    if ((p < 0) | (p > 1)).any() or not torch.isfinite(p).all():
        raise ObjectiveError(f"{name} expects probabilities in [0, 1]")
    return p.clamp(EPS, 1.0 - EPS)


def discriminator_adversarial_loss(d_real, d_fake):
    d_real = _check_probabilities("discriminator_adversarial_loss", d_real)
    d_fake = _check_probabilities("discriminator_adversarial_loss", d_fake)
    return -(torch.log(d_real).mean() + torch.log(1.0 - d_fake).mean())


def generator_adversarial_loss(d_fake):
    # non-saturating form of the generator's side of the min-max game
    d_fake = _check_probabilities("generator_adversarial_loss", d_fake)
    return -torch.log(d_fake).mean()


def gan_losses(d_real, d_fake):
    """
    Returns:
        tuple: (gan_d, gan_g)
    """
    return discriminator_adversarial_loss(d_real, d_fake), generator_adversarial_loss(d_fake)


# -----------------------------------------
# Identity, cycle, mask
# -----------------------------------------
def id_loss(fx, fgx):
    _require_same_shape("id_loss", fx, fgx)
    return (fx - fgx).pow(2).mean()


def cycle_loss(x, x_cycle, y, y_cycle):
    _require_same_shape("cycle_loss", x, x_cycle)
    _require_same_shape("cycle_loss", y, y_cycle)
    return (x_cycle - x).abs().mean() + (y_cycle - y).abs().mean()


def mask_loss(x, gx, mask):
    """
    Mean |x - gx| over background pixels of x, all channels. The mask is the
    foreground of the input x and gates both images.
    """
    _require_same_shape("mask_loss", x, gx)
    background = 1.0 - mask
    while background.dim() < x.dim():
        background = background.unsqueeze(-3)
    background = background.expand_as(x)

    count = background.sum()
    if count == 0:
        logger.warning("mask_loss called with an all-foreground mask; no background to preserve")
        return (gx * 0.0).sum()
    return ((x - gx).abs() * background).sum() / count


def total_losses(components, weights):
    """
    Args:
        components (dict): vae, gan_g, gan_d, id, cycle, mask values.
        weights (LossWeights)
    Returns:
        tuple: (total_g, total_d)
    """
    total_g = (
        weights.alpha1 * components["vae"]
        + weights.alpha2 * components["gan_g"]
        + weights.alpha3 * components["id"]
        + weights.alpha4 * components["cycle"]
        + weights.alpha5 * components["mask"]
    )
    total_d = weights.alpha2 * components["gan_d"]
    return total_g, total_d


def build_report(components, total_g, total_d):
    values = {k: float(v) for k, v in components.items()}
    values.update(total_g=float(total_g), total_d=float(total_d))
    for name, value in values.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(name, value)
    return LossReport(**values)
