import logging
from typing import NamedTuple

import torch
from pydantic import BaseModel, ConfigDict, Field

from utils.exceptions import GeometryError, ShapeError
from utils.logger.logger import get_logger_config
from utils.receptive_field.rfcover import PixelSet, verify_coverage

logger = logging.getLogger("manipulation")
get_logger_config(logging)


class LatentCode(NamedTuple):
    mu: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor


class ManipulationSpec(BaseModel):
    """Add `delta` to the attribute's channel group at every pixel of `pixel_set`."""

    model_config = ConfigDict(frozen=True)

    pixel_set: PixelSet
    delta: float = Field(allow_inf_nan=False)
    attribute: str

    @classmethod
    def for_config(cls, config, attribute, delta, region="minimal_cover"):
        config.channel_group(attribute)
        pixel_set = config.pixel_set(region)
        rf = config.receptive_field()
        if not verify_coverage(pixel_set, rf, config.input_size):
            raise GeometryError(f"Pixel set {list(pixel_set.axis_positions)} does not cover the input image")
        return cls(pixel_set=pixel_set, delta=delta, attribute=attribute)

    def with_delta(self, delta):
        return self.model_copy(update={"delta": float(delta)})


def reparameterize(mu, logvar, noise):
    if mu.shape != logvar.shape or mu.shape != noise.shape:
        raise ShapeError(f"Shapes differ: mu {tuple(mu.shape)}, logvar {tuple(logvar.shape)}, noise {tuple(noise.shape)}")
    return mu + torch.exp(0.5 * logvar) * noise


def manipulate(z, spec, config):
    """
    Copy of `z` (C x F x F, optionally batched) with `spec.delta` added at
    pixel_set.positions_2d x channel group; every other entry is untouched.
    """
    group = config.channel_group(spec.attribute)
    size = z.shape[-1]
    if spec.pixel_set.feature_size != size or z.shape[-2] != size:
        raise GeometryError(
            f"Pixel set built for a {spec.pixel_set.feature_size}x{spec.pixel_set.feature_size} map, "
            f"latent is {z.shape[-2]}x{size}"
        )
    if not spec.pixel_set.axis_positions:
        raise GeometryError(f"Pixel set for '{spec.attribute}' selects no latent positions")
    if group.stop > z.shape[-3]:
        raise ShapeError(f"Channel group {group.start}:{group.stop} exceeds {z.shape[-3]} latent channels")

    out = z.clone()
    if spec.delta == 0:
        return out

    rows, cols = torch.tensor(spec.pixel_set.positions_2d, device=z.device).T
    out[..., group, rows, cols] += spec.delta
    return out


def manipulate_many(z, specs, config):
    """Several edits in sequence; channel groups are disjoint so order does not matter."""
    for spec in specs:
        z = manipulate(z, spec, config)
    return z
