import logging
import os
import re
from pathlib import Path

import torch

from utils.exceptions import CheckpointError
from utils.logger.logger import get_logger_config
from utils.networks.manipulation import ManipulationSpec
from utils.networks.nets import MaskAdversarialAutoEncoder, NetworkConfig
from utils.receptive_field.rfcover import PixelSet

logger = logging.getLogger("checkpoint")
get_logger_config(logging)

CHECKPOINT_FORMAT_VERSION = 1
BEST_NAME = "best.pt"
_EPOCH_PATTERN = re.compile(r"^epoch_(\d+)\.pt$")


def epoch_path(directory, epoch):
    return Path(directory) / f"epoch_{epoch}.pt"


def save_checkpoint(path, payload):
    """Atomic write: temporary file, then os.replace onto `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        torch.save({"format_version": CHECKPOINT_FORMAT_VERSION, **payload}, tmp)
        os.replace(tmp, path)
    except Exception as e:
        logger.error(f"Error writing checkpoint {path}: {e}")
        tmp.unlink(missing_ok=True)
        raise
    logger.info(f"Checkpoint saved to {path}")
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"No checkpoint at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        logger.error(f"Error reading checkpoint {path}: {e}")
        raise CheckpointError(f"Unreadable checkpoint {path}: {e}") from e

    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path} has checkpoint format {version}, expected {CHECKPOINT_FORMAT_VERSION}")
    return payload


def latest_checkpoint(directory):
    """Highest-numbered epoch checkpoint in `directory`, or None."""
    directory = Path(directory)
    if not directory.is_dir():
        return None
    epochs = [
        (int(m.group(1)), p) for p in directory.iterdir() if (m := _EPOCH_PATTERN.match(p.name))
    ]
    return max(epochs)[1] if epochs else None


def load_generator(path, device="cpu"):
    """
    Rebuild the generator of a training checkpoint in eval mode.
    Returns:
        tuple: (MaskAdversarialAutoEncoder, payload)
    """
    payload = load_checkpoint(path)
    model = MaskAdversarialAutoEncoder(NetworkConfig.model_validate(payload["network_config"]))
    model.load_state_dict(payload["generator"])
    model.to(device).eval()
    return model, payload


def checkpoint_spec(payload, attribute, delta=None):
    """
    ManipulationSpec for `attribute` using the checkpoint's stored PixelSet.
    `delta` defaults to the calibrated magnitude (positive direction).
    """
    attributes = payload["train_config"]["attributes"]
    if attribute not in attributes:
        raise CheckpointError(f"Checkpoint was trained on {attributes}, not '{attribute}'")
    return ManipulationSpec(
        pixel_set=PixelSet.model_validate(payload["pixel_set"]),
        delta=payload["delta"] if delta is None else float(delta),
        attribute=attribute,
    )
