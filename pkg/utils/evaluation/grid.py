import logging
from pathlib import Path

import torch
from torchvision.utils import make_grid, save_image

from utils.evaluation.metrics import require_sorted_deltas
from utils.exceptions import ShapeError
from utils.logger.logger import get_logger_config

logger = logging.getLogger("sweep_grid")
get_logger_config(logging)

GRID_PADDING = 2


@torch.no_grad()
def sweep_grid(edit, image, attributes, deltas, out_path):
    """
    One row per attribute: the input image, then edit(image, attribute, d)
    for every d in the ascending `deltas`. Saved as an 8-bit RGB image.
    Returns:
        tuple: (path, grid tensor [3, H', W'])
    """
    deltas = require_sorted_deltas(deltas)
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[0] != 1:
        raise ShapeError(f"sweep_grid takes a single image, got shape {tuple(image.shape)}")

    tiles = []
    for attribute in attributes:
        tiles.append(image[0])
        tiles += [edit(image, attribute, d)[0] for d in deltas]

    grid = make_grid(torch.stack(tiles).cpu(), nrow=len(deltas) + 1, padding=GRID_PADDING)
    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_image(grid, out_path)
    except Exception as e:
        logger.error(f"Error writing sweep grid to {out_path}: {e}")
        raise

    logger.info(f"Sweep grid ({len(attributes)} x {len(deltas) + 1}) written to {out_path}")
    return out_path, grid
