import logging

import torch

from utils.exceptions import CalibrationError
from utils.logger.logger import get_logger_config

logger = logging.getLogger("delta_calibration")
get_logger_config(logging)


class RunningRange:
    """Streaming extrema of latent values."""

    def __init__(self):
        self.min_seen = float("inf")
        self.max_seen = float("-inf")
        self.count = 0

    def update(self, values):
        values = values.detach()
        if values.numel() == 0:
            return
        self.min_seen = min(self.min_seen, float(values.min()))
        self.max_seen = max(self.max_seen, float(values.max()))
        self.count += values.numel()

    def half_range(self):
        if self.count == 0:
            raise CalibrationError("No latent values seen during warmup")
        return (self.max_seen - self.min_seen) / 2.0


@torch.no_grad()
def calibrate_delta(encode, warmup_batches):
    """
    Half the value range of the encoder means over the warmup batches.
    Args:
        encode: callable mapping an image batch to a LatentCode.
        warmup_batches: iterable of image batches.
    Returns:
        float: the default |delta|.
    """
    running = RunningRange()
    for batch in warmup_batches:
        running.update(encode(batch).mu)

    delta = running.half_range()
    if not delta > 0:
        raise CalibrationError(f"Latent means are constant ({running.min_seen}); cannot calibrate delta")

    logger.info(f"Calibrated delta={delta:.4f} from range [{running.min_seen:.4f}, {running.max_seen:.4f}]")
    return delta
