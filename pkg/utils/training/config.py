from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from utils.config.settings import CHECKPOINT_DIR, DEVICE
from utils.networks.nets import NetworkConfig
from utils.objective.losses import LossWeights


class DeltaCalibration(BaseModel):
    """`fixed` uses `value`, or weights.delta when no value is given."""

    mode: Literal["fixed", "half_range"] = "half_range"
    value: Optional[float] = Field(default=None, allow_inf_nan=False)
    warmup_batches: int = Field(default=4, ge=1)


class TrainConfig(BaseModel):
    dataset_path: Path
    attributes: list[str] = Field(default_factory=lambda: ["hair_blond"], min_length=1)
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr_generator: float = Field(default=2e-4, gt=0)
    lr_discriminator: float = Field(default=2e-4, gt=0)
    betas: tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = Field(default_factory=LossWeights)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    seed: int = 0
    checkpoint_dir: Path = Path(CHECKPOINT_DIR)
    delta_calibration: DeltaCalibration = Field(default_factory=DeltaCalibration)
    identity_extractor_path: Optional[Path] = None

    # cycle_order: polarity_aware first removes the attribute from x and adds it to y, as_written adds to x first.
    # manipulation_region: full_map edits all F x F latent positions instead of the minimal cover.
    # preservation_targets: with manipulated_and_reconstruction the mask and ID losses also score each reconstruction.
    # fake_includes_manipulated: the discriminator also sees the edited images as fakes, not only reconstructions.
    cycle_order: Literal["polarity_aware", "as_written"] = "polarity_aware"
    manipulation_region: Literal["minimal_cover", "full_map"] = "minimal_cover"
    preservation_targets: Literal["manipulated", "manipulated_and_reconstruction"] = "manipulated_and_reconstruction"
    fake_includes_manipulated: bool = False

    validation_samples: int = Field(default=256, ge=1)
    device: str = DEVICE

    @model_validator(mode="after")
    def _check_attributes(self):
        missing = [a for a in self.attributes if a not in self.network.attribute_channel_groups]
        if missing:
            raise ValueError(f"attributes {missing} have no channel group in the network config")
        return self
