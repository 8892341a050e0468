import logging

import torch
from torch import nn, optim
from torch.utils.data import DataLoader, TensorDataset

from utils.config.settings import DEVICE
from utils.exceptions import ConfigurationError, DatasetError
from utils.logger.logger import get_logger_config
from utils.networks.nets import SmallConvClassifier, save_classifier
from utils.synthetic_data.dataset import SyntheticFaceDataset

logger = logging.getLogger("pretrain")
get_logger_config(logging)


def _targets(dataset, target):
    if target == "identity":
        return dataset.identity_ids
    if target == "attribute":
        return dataset.attributes
    raise ConfigurationError(f"Unknown classifier target '{target}'")


@torch.no_grad()
def held_out_accuracy(classifier, dataset, target):
    if len(dataset) == 0:
        return float("nan")
    classifier.eval()
    logits = classifier(dataset.images)
    if target == "identity":
        return float((logits.argmax(dim=1) == dataset.identity_ids).float().mean())
    return float(((logits > 0).float() == dataset.attributes).float().mean())


def pretrain_classifier(dataset_path, target, out_path, epochs=10, batch_size=64, lr=1e-3, seed=0,
                        classifier_version=1, device=DEVICE):
    """
    Train the small conv classifier on a synthetic dataset's train split.
    target="identity" backs the frozen ID extractor, target="attribute" the
    evaluation oracle.
    Returns:
        tuple: (saved path, held-out accuracy on the test split)
    """
    torch.manual_seed(seed)
    train_set = SyntheticFaceDataset(dataset_path, split="train")
    test_set = SyntheticFaceDataset(dataset_path, split="test")
    if len(train_set) == 0:
        raise DatasetError(f"No training samples in {dataset_path}")

    labels = _targets(train_set, target)
    if target == "identity":
        num_outputs, criterion = train_set.num_identities, nn.CrossEntropyLoss()
    else:
        num_outputs, criterion = len(train_set.attribute_names), nn.BCEWithLogitsLoss()

    classifier = SmallConvClassifier(num_outputs, input_size=train_set.images.shape[-1]).to(device)
    optimizer = optim.Adam(classifier.parameters(), lr=lr)
    loader = DataLoader(
        TensorDataset(train_set.images, labels), batch_size=batch_size, shuffle=True,
        generator=torch.Generator().manual_seed(seed),
    )

    for epoch in range(1, epochs + 1):
        classifier.train()
        running = 0.0
        for images, batch_labels in loader:
            images, batch_labels = images.to(device), batch_labels.to(device)
            loss = criterion(classifier(images), batch_labels)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running += float(loss) * len(images)
        logger.info(f"[{target}] epoch {epoch}/{epochs}: loss={running / len(train_set):.4f}")

    classifier.cpu()
    accuracy = held_out_accuracy(classifier, test_set, target)
    logger.info(f"[{target}] held-out accuracy {accuracy:.3f}")

    extra = {"classifier_version": classifier_version, "held_out_accuracy": accuracy}
    if target == "attribute":
        extra["attribute_names"] = list(train_set.attribute_names)
    path = save_classifier(classifier, out_path, target, extra=extra)
    return path, accuracy
