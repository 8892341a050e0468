import logging

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, Field

from utils.exceptions import ConfigurationError
from utils.logger.logger import get_logger_config
from utils.networks.nets import load_attribute_classifier, load_identity_extractor
from utils.objective.losses import id_loss, mask_loss
from utils.synthetic_data.dataset import SyntheticFaceDataset
from utils.training.checkpoint import checkpoint_spec, load_generator

logger = logging.getLogger("metrics")
get_logger_config(logging)

# Every metric takes an `edit(images, attribute, delta)` callable so that a
# trained generator and simple stubs are measured by the same code.


class AttributeMetrics(BaseModel):
    delta: float = Field(allow_inf_nan=False)
    flip_rate_add: float = Field(ge=0, le=1)
    flip_rate_remove: float = Field(ge=0, le=1)
    flip_rate_zero: float = Field(ge=0, le=1)
    background_drift: float = Field(ge=0, allow_inf_nan=False)
    cycle_error: float = Field(ge=0, allow_inf_nan=False)
    id_drift: float = Field(ge=0, allow_inf_nan=False)


class EvalReport(BaseModel):
    attribute_flip_rate: float = Field(ge=0, le=1)
    background_drift: float = Field(ge=0, allow_inf_nan=False)
    cycle_error: float = Field(ge=0, allow_inf_nan=False)
    id_drift: float = Field(ge=0, allow_inf_nan=False)
    per_attribute: dict[str, AttributeMetrics] = Field(default_factory=dict)

    @classmethod
    def from_attributes(cls, per_attribute):
        rows = list(per_attribute.values())
        return cls(
            attribute_flip_rate=float(np.mean([(m.flip_rate_add + m.flip_rate_remove) / 2 for m in rows])),
            background_drift=float(np.mean([m.background_drift for m in rows])),
            cycle_error=float(np.mean([m.cycle_error for m in rows])),
            id_drift=float(np.mean([m.id_drift for m in rows])),
            per_attribute=per_attribute,
        )


def report_frame(report):
    """Per-attribute breakdown, one row per attribute."""
    frame = pd.DataFrame({name: m.model_dump() for name, m in report.per_attribute.items()}).T
    frame.index.name = "attribute"
    return frame


def _batches(images, batch_size):
    for start in range(0, len(images), batch_size):
        yield images[start:start + batch_size]


@torch.no_grad()
def predict_attribute(classifier, attribute_names, images, attribute, batch_size=64):
    """Classifier confidence in [0, 1] for `attribute`, one value per image."""
    if attribute not in attribute_names:
        raise ConfigurationError(f"Classifier does not predict '{attribute}' (outputs: {list(attribute_names)})")
    column = list(attribute_names).index(attribute)
    scores = [torch.sigmoid(classifier(batch))[:, column] for batch in _batches(images, batch_size)]
    return torch.cat(scores) if scores else torch.empty(0)


# -----------------------------------------
# Metrics
# -----------------------------------------
@torch.no_grad()
def attribute_flip_rate(edit, classifier, attribute_names, images, attribute, delta, batch_size=64):
    """
    Fraction of images whose predicted attribute changes after edit(x, delta).
    A positive delta is measured on images predicted without the attribute,
    a negative delta on images predicted with it, delta = 0 on all images.
    """
    before = predict_attribute(classifier, attribute_names, images, attribute, batch_size) > 0.5
    if delta > 0:
        population = ~before
    elif delta < 0:
        population = before
    else:
        population = torch.ones_like(before)

    if not population.any():
        logger.warning(f"No images eligible for a delta={delta} flip on '{attribute}'")
        return 0.0

    edited = torch.cat([edit(batch, attribute, delta) for batch in _batches(images[population], batch_size)])
    after = predict_attribute(classifier, attribute_names, edited, attribute, batch_size) > 0.5
    return float((after != before[population]).float().mean())


@torch.no_grad()
def background_drift(edit, images, masks, attribute, delta, batch_size=64):
    """Mean over images of the masked L1 between x and edit(x)."""
    drifts = []
    for batch, batch_masks in zip(_batches(images, batch_size), _batches(masks, batch_size)):
        edited = edit(batch, attribute, delta)
        drifts += [float(mask_loss(x, g, m)) for x, g, m in zip(batch, edited, batch_masks)]
    return float(np.mean(drifts)) if drifts else 0.0


@torch.no_grad()
def cycle_error(edit, images, attribute, delta, batch_size=64):
    """Mean L1 of both round trips: remove-then-add and add-then-remove, averaged."""
    errors = []
    for x in _batches(images, batch_size):
        forward = edit(edit(x, attribute, delta), attribute, -delta)
        backward = edit(edit(x, attribute, -delta), attribute, delta)
        per_image = ((forward - x).abs().flatten(1).mean(1) + (backward - x).abs().flatten(1).mean(1)) / 2
        errors.append(per_image)
    return float(torch.cat(errors).mean()) if errors else 0.0


@torch.no_grad()
def id_drift(edit, extractor, images, attribute, delta, batch_size=64):
    if extractor is None:
        raise ConfigurationError("id_drift needs a frozen identity extractor")
    drifts = []
    for x in _batches(images, batch_size):
        fx, fgx = extractor(x), extractor(edit(x, attribute, delta))
        drifts += [float(id_loss(a, b)) for a, b in zip(fx, fgx)]
    return float(np.mean(drifts)) if drifts else 0.0


def require_sorted_deltas(deltas):
    deltas = [float(d) for d in deltas]
    if not deltas or deltas != sorted(deltas):
        raise ConfigurationError(f"deltas must be a non-empty ascending list, got {deltas}")
    return deltas


@torch.no_grad()
def sweep_monotonic_fraction(edit, classifier, attribute_names, images, attribute, deltas, batch_size=64):
    """Fraction of images whose attribute confidence never decreases along the sorted delta sweep."""
    deltas = require_sorted_deltas(deltas)
    confidences = torch.stack([
        predict_attribute(
            classifier, attribute_names,
            torch.cat([edit(x, attribute, d) for x in _batches(images, batch_size)]),
            attribute, batch_size,
        )
        for d in deltas
    ], dim=1)
    monotone = (confidences[:, 1:] >= confidences[:, :-1]).all(dim=1)
    return float(monotone.float().mean())


@torch.no_grad()
def identity_retrieval_accuracy(extractor, gallery_images, gallery_ids, query_images, query_ids, batch_size=64):
    """Top-1 nearest-neighbour identity retrieval in feature space."""
    if len(gallery_images) == 0 or len(query_images) == 0:
        raise ConfigurationError("identity retrieval needs a non-empty gallery and query set")
    gallery = torch.cat([extractor(b) for b in _batches(gallery_images, batch_size)])
    queries = torch.cat([extractor(b) for b in _batches(query_images, batch_size)])
    nearest = torch.cdist(queries, gallery).argmin(dim=1)
    return float((torch.as_tensor(gallery_ids)[nearest] == torch.as_tensor(query_ids)).float().mean())


# -----------------------------------------
# Checkpoint evaluation
# -----------------------------------------
class ModelEditor:
    """edit(images, attribute, delta) backed by a trained checkpoint."""

    def __init__(self, generator, payload):
        self.generator = generator.eval()
        self.payload = payload

    @classmethod
    def from_checkpoint(cls, path, device="cpu"):
        return cls(*load_generator(path, device))

    @property
    def delta(self):
        return float(self.payload["delta"])

    @property
    def attributes(self):
        return list(self.payload["train_config"]["attributes"])

    @torch.no_grad()
    def generate(self, images, attributes, delta):
        """Simultaneous edit of several attributes, each on its own channel group."""
        specs = [checkpoint_spec(self.payload, a, delta) for a in attributes]
        return self.generator.generate(images, specs)

    def __call__(self, images, attribute, delta):
        return self.generate(images, [attribute], delta)


def evaluate_attribute(edit, images, masks, attribute, delta, classifier, attribute_names, extractor, batch_size=64):
    metrics = AttributeMetrics(
        delta=delta,
        flip_rate_add=attribute_flip_rate(edit, classifier, attribute_names, images, attribute, delta, batch_size),
        flip_rate_remove=attribute_flip_rate(edit, classifier, attribute_names, images, attribute, -delta, batch_size),
        flip_rate_zero=attribute_flip_rate(edit, classifier, attribute_names, images, attribute, 0.0, batch_size),
        background_drift=background_drift(edit, images, masks, attribute, delta, batch_size),
        cycle_error=cycle_error(edit, images, attribute, delta, batch_size),
        id_drift=id_drift(edit, extractor, images, attribute, delta, batch_size),
    )
    logger.info(f"{attribute}: {metrics.model_dump()}")
    return metrics


def evaluate_checkpoint(checkpoint_path, dataset_path, classifier_path, extractor_path, attributes=None,
                        split="test", seed=0, max_samples=None, batch_size=64, device="cpu",
                        classifier_version=None):
    """
    Run every metric for each trained attribute over one dataset split.
    Returns:
        EvalReport
    """
    torch.manual_seed(seed)
    editor = ModelEditor.from_checkpoint(checkpoint_path, device)
    classifier, attribute_names = load_attribute_classifier(classifier_path, classifier_version)
    extractor = load_identity_extractor(extractor_path)
    classifier.to(device)
    extractor.to(device)

    dataset = SyntheticFaceDataset(dataset_path, split=split)
    if len(dataset) == 0:
        raise ConfigurationError(f"Split '{split}' of {dataset_path} is empty")
    images, masks = dataset.images.to(device), dataset.masks.to(device)
    if max_samples is not None:
        images, masks = images[:max_samples], masks[:max_samples]

    per_attribute = {
        attribute: evaluate_attribute(
            editor, images, masks, attribute, editor.delta, classifier, attribute_names, extractor, batch_size
        )
        for attribute in (attributes or editor.attributes)
    }
    return EvalReport.from_attributes(per_attribute)
