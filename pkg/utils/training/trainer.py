import json
import logging
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import optim

from utils.evaluation.metrics import cycle_error
from utils.exceptions import DatasetError, NonFiniteLossError
from utils.logger.logger import get_logger_config
from utils.networks.manipulation import ManipulationSpec, manipulate
from utils.networks.nets import Discriminator, MaskAdversarialAutoEncoder, load_identity_extractor
from utils.objective.losses import (
    build_report, cycle_loss, discriminator_adversarial_loss, generator_adversarial_loss, id_loss,
    mask_loss, total_losses, vae_loss,
)
from utils.synthetic_data.dataset import SyntheticFaceDataset, sample_pair_indices
from utils.training.calibration import calibrate_delta
from utils.training.checkpoint import (
    BEST_NAME, epoch_path, latest_checkpoint, load_checkpoint, save_checkpoint,
)

logger = logging.getLogger("trainer")
get_logger_config(logging)

LOG_NAME = "train_log.jsonl"


class PairBatch(NamedTuple):
    """x has the attribute, y does not; masks are each image's own foreground."""
    x: torch.Tensor
    y: torch.Tensor
    mask_x: torch.Tensor
    mask_y: torch.Tensor


def _set_requires_grad(module, flag):
    for param in module.parameters():
        param.requires_grad_(flag)


def _require_finite(values):
    for name, value in values.items():
        if not torch.isfinite(value).all():
            raise NonFiniteLossError(name, float(value))


class MaaeTrainer:
    """
    Owns the generator, the discriminator and their optimizers and runs
    alternating updates over opposite-attribute pairs.
    """

    def __init__(self, config, dataset, identity_extractor=None):
        self.config = config
        self.dataset = dataset
        self.device = torch.device(config.device)

        torch.manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)

        self.generator = MaskAdversarialAutoEncoder(config.network).to(self.device)
        self.discriminator = Discriminator(config.network).to(self.device)
        self.opt_g = optim.Adam(self.generator.parameters(), lr=config.lr_generator, betas=config.betas)
        self.opt_d = optim.Adam(self.discriminator.parameters(), lr=config.lr_discriminator, betas=config.betas)

        if identity_extractor is None and config.identity_extractor_path is not None:
            identity_extractor = load_identity_extractor(config.identity_extractor_path)
        self.extractor = identity_extractor.to(self.device) if identity_extractor is not None else None
        if self.extractor is None and config.weights.alpha3 > 0:
            logger.warning("No identity extractor configured; the ID loss is held at 0")

        calibration = config.delta_calibration
        self.delta = calibration.value if calibration.value is not None else config.weights.delta
        self.specs = {
            attribute: ManipulationSpec.for_config(config.network, attribute, self.delta, config.manipulation_region)
            for attribute in config.attributes
        }
        self.pixel_set = next(iter(self.specs.values())).pixel_set

        self.images = dataset.images.to(self.device)
        self.masks = dataset.masks.to(self.device)

        self.epoch = 0
        self.global_step = 0
        self.best_cycle_error = math.inf

    # -----------------------------------------
    # Delta
    # -----------------------------------------
    def set_delta(self, delta):
        self.delta = float(delta)
        self.specs = {name: spec.with_delta(self.delta) for name, spec in self.specs.items()}

    def calibrate(self):
        if self.config.delta_calibration.mode == "fixed":
            logger.info(f"Using fixed delta={self.delta}")
            return self.delta

        size = self.config.batch_size
        count = min(len(self.images), size * self.config.delta_calibration.warmup_batches)
        batches = [self.images[i:i + size] for i in range(0, count, size)]

        self.generator.eval()
        try:
            delta = calibrate_delta(self.generator.encode, batches)
        finally:
            self.generator.train()
        self.set_delta(delta)
        return delta

    # -----------------------------------------
    # One alternating step
    # -----------------------------------------
    def sample_batch(self, attribute):
        pos, neg = sample_pair_indices(self.dataset, attribute, self.rng, self.config.batch_size)
        pos = torch.as_tensor(pos, device=self.device)
        neg = torch.as_tensor(neg, device=self.device)
        return PairBatch(x=self.images[pos], y=self.images[neg], mask_x=self.masks[pos], mask_y=self.masks[neg])

    def _hop(self, z, attribute, sign):
        spec = self.specs[attribute].with_delta(sign * self.delta)
        return self.generator.decode(manipulate(z, spec, self.config.network))

    def _first_signs(self):
        # x has the attribute: the polarity-aware first hop removes it
        if self.config.cycle_order == "polarity_aware":
            return -1.0, 1.0
        return 1.0, -1.0

    def train_step(self, batch, attribute):
        """
        One generator update followed by one discriminator update.
        Returns:
            LossReport
        """
        config, weights = self.config, self.config.weights
        x, y = batch.x, batch.y
        self.generator.train()

        # generator update; discriminator weights are held fixed
        _set_requires_grad(self.discriminator, False)
        xr, code_x = self.generator(x)
        yr, code_y = self.generator(y)

        vae = 0.5 * (
            vae_loss(x, xr, code_x.mu, code_x.logvar, weights.lambda1, weights.lambda2)
            + vae_loss(y, yr, code_y.mu, code_y.logvar, weights.lambda1, weights.lambda2)
        )
        gan_g = generator_adversarial_loss(self.discriminator.discriminate(torch.cat([xr, yr])))

        sign_x, sign_y = self._first_signs()
        x_edit = self._hop(code_x.z, attribute, sign_x)
        y_edit = self._hop(code_y.z, attribute, sign_y)
        x_cycle = self._hop(self.generator.encode(x_edit).z, attribute, -sign_x)
        y_cycle = self._hop(self.generator.encode(y_edit).z, attribute, -sign_y)
        cycle = cycle_loss(x, x_cycle, y, y_cycle)

        targets = [(x, x_edit, batch.mask_x), (y, y_edit, batch.mask_y)]
        if config.preservation_targets == "manipulated_and_reconstruction":
            targets += [(x, xr, batch.mask_x), (y, yr, batch.mask_y)]

        mask = sum(mask_loss(src, out, m) for src, out, m in targets) / len(targets)
        if self.extractor is not None:
            id_term = sum(id_loss(self.extractor(src), self.extractor(out)) for src, out, _ in targets) / len(targets)
        else:
            id_term = torch.zeros((), device=self.device)

        components = {"vae": vae, "gan_g": gan_g, "id": id_term, "cycle": cycle, "mask": mask}
        _require_finite(components)
        total_g, _ = total_losses({**components, "gan_d": 0.0}, weights)

        self.opt_g.zero_grad(set_to_none=True)
        total_g.backward()
        self.opt_g.step()
        _set_requires_grad(self.discriminator, True)

        # discriminator update on detached generator outputs
        real = torch.cat([x, y])
        fakes = [xr, yr] + ([x_edit, y_edit] if config.fake_includes_manipulated else [])
        fake = torch.cat(fakes).detach()
        gan_d = discriminator_adversarial_loss(
            self.discriminator.discriminate(real), self.discriminator.discriminate(fake)
        )
        _require_finite({"gan_d": gan_d})
        _, total_d = total_losses({**components, "gan_d": gan_d}, weights)

        self.opt_d.zero_grad(set_to_none=True)
        total_d.backward()
        self.opt_d.step()

        self.global_step += 1
        detached = {name: value.detach() for name, value in components.items()}
        return build_report({**detached, "gan_d": gan_d.detach()}, total_g.detach(), total_d.detach())

    # -----------------------------------------
    # Validation and state
    # -----------------------------------------
    @torch.no_grad()
    def validation_cycle_error(self, images, attribute):
        self.generator.eval()
        try:
            def edit(batch, name, delta):
                return self.generator.generate(batch, self.specs[name].with_delta(delta))
            return cycle_error(edit, images.to(self.device), attribute, self.delta)
        finally:
            self.generator.train()

    def state_dict(self):
        return {
            "train_config": self.config.model_dump(mode="json"),
            "network_config": self.config.network.model_dump(mode="json"),
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "delta": self.delta,
            "pixel_set": self.pixel_set.model_dump(mode="json"),
            "manipulation_region": self.config.manipulation_region,
            "epoch": self.epoch,
            "global_step": self.global_step,
            "best_cycle_error": self.best_cycle_error,
            "torch_rng_state": torch.get_rng_state(),
            "numpy_rng_state": self.rng.bit_generator.state,
        }

    def load_state_dict(self, payload):
        self.generator.load_state_dict(payload["generator"])
        self.discriminator.load_state_dict(payload["discriminator"])
        self.opt_g.load_state_dict(payload["opt_g"])
        self.opt_d.load_state_dict(payload["opt_d"])
        self.set_delta(payload["delta"])
        self.epoch = payload["epoch"]
        self.global_step = payload["global_step"]
        self.best_cycle_error = payload["best_cycle_error"]
        torch.set_rng_state(payload["torch_rng_state"])
        self.rng.bit_generator.state = payload["numpy_rng_state"]


# -----------------------------------------
# Training loop
# -----------------------------------------
def _truncate_log(log_path, global_step):
    if not log_path.exists():
        return
    kept = [line for line in log_path.read_text().splitlines() if line and json.loads(line)["step"] <= global_step]
    log_path.write_text("".join(line + "\n" for line in kept))


def _validation_images(config, train_set):
    validation = SyntheticFaceDataset(config.dataset_path, split="test")
    if len(validation) == 0:
        logger.warning("Empty test split; validating on training images")
        validation = train_set
    return validation.images[:config.validation_samples]


def train(config, resume=False, identity_extractor=None):
    """
    Calibrate delta, run epochs x ceil(len(train) / batch_size) steps, and
    checkpoint every epoch plus the best validation cycle error.
    Returns:
        Path: the last epoch checkpoint.
    """
    checkpoint_dir = Path(config.checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    log_path = checkpoint_dir / LOG_NAME

    train_set = SyntheticFaceDataset(config.dataset_path, split="train")
    if len(train_set) == 0:
        raise DatasetError(f"No training samples in {config.dataset_path}")
    validation_images = _validation_images(config, train_set)
    trainer = MaaeTrainer(config, train_set, identity_extractor=identity_extractor)

    previous = latest_checkpoint(checkpoint_dir) if resume else None
    if previous is not None:
        trainer.load_state_dict(load_checkpoint(previous))
        _truncate_log(log_path, trainer.global_step)
        logger.info(f"Resumed from {previous} at epoch {trainer.epoch}, step {trainer.global_step}")
    else:
        if resume:
            logger.warning(f"No checkpoint to resume in {checkpoint_dir}; starting fresh")
        log_path.write_text("")
        trainer.calibrate()

    steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
    attributes = config.attributes
    last_path = epoch_path(checkpoint_dir, trainer.epoch) if previous is not None else None

    try:
        with log_path.open("a") as log_file:
            for epoch in range(trainer.epoch + 1, config.epochs + 1):
                for _ in range(steps_per_epoch):
                    attribute = attributes[trainer.global_step % len(attributes)]
                    report = trainer.train_step(trainer.sample_batch(attribute), attribute)
                    record = {"epoch": epoch, "step": trainer.global_step, "attribute": attribute, **report.model_dump()}
                    log_file.write(json.dumps(record) + "\n")
                log_file.flush()

                trainer.epoch = epoch
                errors = [trainer.validation_cycle_error(validation_images, a) for a in attributes]
                validation_error = float(np.mean(errors))
                logger.info(
                    f"Epoch {epoch}/{config.epochs}: total_g={report.total_g:.4f} "
                    f"total_d={report.total_d:.4f} validation cycle error={validation_error:.4f}"
                )

                improved = validation_error < trainer.best_cycle_error
                if improved:
                    trainer.best_cycle_error = validation_error
                state = {**trainer.state_dict(), "validation_cycle_error": validation_error}
                last_path = save_checkpoint(epoch_path(checkpoint_dir, epoch), state)
                if improved:
                    save_checkpoint(checkpoint_dir / BEST_NAME, state)
    except Exception as e:
        logger.error(f"Training stopped at step {trainer.global_step}: {e}")
        raise

    return last_path
