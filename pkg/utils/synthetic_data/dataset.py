import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from PIL import Image
from pydantic import BaseModel, Field, field_validator
from torch.utils.data import Dataset

from utils.config.settings import NUM_WORKERS
from utils.exceptions import DatasetError
from utils.logger.logger import get_logger_config
from utils.synthetic_data.renderer import ATTRIBUTES, SUPPORTED_SIZES, Sample, SceneSpec, render_sample

logger = logging.getLogger("synthetic_dataset")
get_logger_config(logging)

MANIFEST_NAME = "manifest.jsonl"


class DatasetConfig(BaseModel):
    num_identities: int = Field(ge=2)
    samples_per_identity: int = Field(ge=1)
    size: int = 32
    out_dir: Path
    seed: int = 0
    test_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    workers: int = Field(default=NUM_WORKERS, ge=1)

    @field_validator("size")
    @classmethod
    def _supported_size(cls, value):
        if value not in SUPPORTED_SIZES:
            raise ValueError(f"size must be one of {SUPPORTED_SIZES}")
        return value


# -----------------------------------------
# Generation
# -----------------------------------------
def _balanced_flags(rng, total):
    flags = np.zeros(total, dtype=bool)
    flags[: total // 2] = True
    return rng.permutation(flags)


def _save_png(array, path):
    Image.fromarray(array).save(path)


def _render_and_write(record, size, out_dir):
    spec = SceneSpec(
        identity_id=record["identity_id"],
        attributes=record["attributes"],
        background_seed=record["background_seed"],
        render_seed=record["render_seed"],
    )
    sample = render_sample(spec, size)
    _save_png(np.round(sample.image * 255).astype(np.uint8), out_dir / record["image"])
    _save_png(sample.mask * np.uint8(255), out_dir / record["mask"])
    return record


def build_records(config):
    """Manifest records for a config, without touching the filesystem."""
    rng = np.random.default_rng(config.seed)
    total = config.num_identities * config.samples_per_identity

    flags = {name: _balanced_flags(rng, total) for name in ATTRIBUTES}
    background_seeds = rng.integers(0, 2**31 - 1, size=total)
    render_seeds = rng.integers(0, 2**31 - 1, size=total)

    n_test = int(round(config.test_fraction * config.samples_per_identity))
    records = []
    for identity in range(config.num_identities):
        test_slots = set(rng.permutation(config.samples_per_identity)[:n_test].tolist())
        for n in range(config.samples_per_identity):
            index = identity * config.samples_per_identity + n
            records.append({
                "index": index,
                "identity_id": identity,
                "image": f"images/{identity}_{n}.png",
                "mask": f"masks/{identity}_{n}.png",
                "attributes": {name: bool(flags[name][index]) for name in ATTRIBUTES},
                "split": "test" if n in test_slots else "train",
                "background_seed": int(background_seeds[index]),
                "render_seed": int(render_seeds[index]),
            })
    return records


def generate_dataset(config):
    """
    Render the dataset and write images/, masks/ and manifest.jsonl.
    Returns:
        Path: the dataset directory.
    """
    out_dir = Path(config.out_dir)
    records = build_records(config)

    logger.info(f"Rendering {len(records)} samples into {out_dir} with {config.workers} workers...")

    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)

        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            futures = [executor.submit(_render_and_write, r, config.size, out_dir) for r in records]
            written = [f.result() for f in futures]

        with open(out_dir / MANIFEST_NAME, "w") as manifest:
            for record in written:
                manifest.write(json.dumps(record, sort_keys=True) + "\n")
    except Exception as e:
        logger.error(f"Error generating dataset in {out_dir}: {e}")
        raise

    logger.info(f"Wrote {len(records)} records to {out_dir / MANIFEST_NAME}")
    return out_dir


# -----------------------------------------
# Loading
# -----------------------------------------
def load_manifest(root):
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"No manifest found at {path}")

    rows = []
    with open(path) as manifest:
        for line in manifest:
            record = json.loads(line)
            attributes = record.pop("attributes")
            rows.append({**record, **attributes})

    return pd.DataFrame(rows)


def _read_png(path):
    return np.asarray(Image.open(path))


class SyntheticFaceDataset(Dataset):
    """
    In-memory view of a generated dataset directory.

    Items are (image[3,H,W], mask[1,H,W], attributes[A], identity_id) tensors.
    """

    def __init__(self, root, split=None, workers=NUM_WORKERS):
        self.root = Path(root)
        frame = load_manifest(self.root)
        if split is not None:
            frame = frame[frame["split"] == split]
        self.frame = frame.reset_index(drop=True)
        self.split = split

        with ThreadPoolExecutor(max_workers=workers) as executor:
            images = list(executor.map(_read_png, [self.root / p for p in self.frame["image"]]))
            masks = list(executor.map(_read_png, [self.root / p for p in self.frame["mask"]]))

        if images:
            self.images = torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).float() / 255.0
            self.masks = (torch.from_numpy(np.stack(masks)) > 127).float().unsqueeze(1)
        else:
            self.images = torch.empty(0, 3, 0, 0)
            self.masks = torch.empty(0, 1, 0, 0)

        present = [name for name in ATTRIBUTES if name in self.frame.columns]
        self.attribute_names = tuple(present)
        self.attributes = torch.tensor(self.frame[present].to_numpy(dtype=bool), dtype=torch.float32)
        self.identity_ids = torch.tensor(self.frame["identity_id"].to_numpy(), dtype=torch.long)

        logger.info(f"Loaded {len(self.frame)} samples (split={split}) from {self.root}")

    def __len__(self):
        return len(self.frame)

    def __getitem__(self, index):
        return self.images[index], self.masks[index], self.attributes[index], self.identity_ids[index]

    @property
    def num_identities(self):
        return int(self.identity_ids.max().item()) + 1 if len(self) else 0

    def sample(self, index):
        return Sample(
            image=self.images[index].permute(1, 2, 0).numpy(),
            mask=self.masks[index, 0].numpy().astype(np.uint8),
            attributes=self.attributes[index].numpy().astype(bool),
            identity_id=int(self.identity_ids[index]),
        )

    def attribute_column(self, attribute):
        if attribute not in self.attribute_names:
            raise DatasetError(f"Attribute '{attribute}' is not present in the manifest")
        return self.frame[attribute].to_numpy(dtype=bool)


# -----------------------------------------
# Pair sampling
# -----------------------------------------
def sample_pair_indices(dataset, attribute, rng, batch_size=1):
    """
    Draw `batch_size` (positive, negative) index pairs for `attribute`,
    uniformly and with replacement from the training split.
    """
    flags = dataset.attribute_column(attribute)
    eligible = dataset.frame["split"].to_numpy() == "train"

    positives = np.flatnonzero(flags & eligible)
    negatives = np.flatnonzero(~flags & eligible)
    if len(positives) == 0 or len(negatives) == 0:
        raise DatasetError(
            f"Attribute '{attribute}' needs both polarities in the training split "
            f"(found {len(positives)} positive, {len(negatives)} negative)"
        )

    return positives[rng.integers(0, len(positives), size=batch_size)], \
        negatives[rng.integers(0, len(negatives), size=batch_size)]


def sample_pair(dataset, attribute, rng):
    """x has the attribute, y does not."""
    pos, neg = sample_pair_indices(dataset, attribute, rng, batch_size=1)
    return dataset.sample(int(pos[0])), dataset.sample(int(neg[0]))
