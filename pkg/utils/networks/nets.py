import logging
from pathlib import Path

import torch
from pydantic import BaseModel, Field, model_validator
from torch import nn

from utils.exceptions import CheckpointError, ConfigurationError, ShapeError
from utils.logger.logger import get_logger_config
from utils.networks.manipulation import LatentCode, manipulate_many, reparameterize
from utils.receptive_field.rfcover import (
    LayerSpec, PixelSet, compose_receptive_field, cover_for_layers, feature_size, layer_sizes,
)
from utils.synthetic_data.renderer import ATTRIBUTES

logger = logging.getLogger("nets")
get_logger_config(logging)

CLASSIFIER_FORMAT_VERSION = 1


class ConvLayer(LayerSpec):
    channels: int = Field(ge=1)


def _default_encoder():
    return [
        ConvLayer(kernel=4, stride=2, padding=1, channels=32),
        ConvLayer(kernel=4, stride=2, padding=1, channels=64),
        ConvLayer(kernel=4, stride=2, padding=1, channels=128),
        ConvLayer(kernel=3, stride=1, padding=1, channels=64),
    ]


def _default_groups():
    return {name: (8 * i, 8 * (i + 1)) for i, name in enumerate(ATTRIBUTES)}


class NetworkConfig(BaseModel):
    input_size: int = Field(default=32, ge=1)
    encoder_layers: list[ConvLayer] = Field(default_factory=_default_encoder, min_length=1)
    latent_channels: int = Field(default=64, ge=1)
    latent_spatial: int = Field(default=4, ge=1)
    attribute_channel_groups: dict[str, tuple[int, int]] = Field(default_factory=_default_groups)
    discriminator_channels: list[int] = Field(default_factory=lambda: [32, 64, 128], min_length=1)

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.encoder_layers[-1].channels != self.latent_channels:
            raise ValueError("the last encoder layer must have latent_channels channels")

        top = feature_size(self.layer_specs(), self.input_size)
        if top != self.latent_spatial:
            raise ValueError(f"encoder layers give a {top}x{top} feature map, latent_spatial is {self.latent_spatial}")

        taken = set()
        for name, (start, stop) in self.attribute_channel_groups.items():
            if not 0 <= start < stop <= self.latent_channels:
                raise ValueError(f"channel group {name}={start}:{stop} outside [0, {self.latent_channels})")
            channels = set(range(start, stop))
            if channels & taken:
                raise ValueError(f"channel group {name} overlaps another group")
            taken |= channels
        return self

    def layer_specs(self):
        return [LayerSpec(kernel=l.kernel, stride=l.stride, padding=l.padding) for l in self.encoder_layers]

    def receptive_field(self):
        return compose_receptive_field(self.layer_specs())

    def pixel_set(self, region="minimal_cover"):
        if region == "full_map":
            return PixelSet.full(self.latent_spatial)
        if region != "minimal_cover":
            raise ConfigurationError(f"Unknown manipulation region '{region}'")
        _, _, pixel_set = cover_for_layers(self.layer_specs(), self.input_size)
        return pixel_set

    def channel_group(self, attribute):
        if attribute not in self.attribute_channel_groups:
            raise ConfigurationError(
                f"Attribute '{attribute}' has no channel group; known: {sorted(self.attribute_channel_groups)}"
            )
        start, stop = self.attribute_channel_groups[attribute]
        return slice(start, stop)

    @property
    def latent_shape(self):
        return self.latent_channels, self.latent_spatial, self.latent_spatial


def _check_images(x, size):
    if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != size or x.shape[3] != size:
        raise ShapeError(f"Expected images of shape (N, 3, {size}, {size}), got {tuple(x.shape)}")


# -----------------------------------------
# Generator: encoder / decoder
# -----------------------------------------
class Encoder(nn.Module):
    """Conv stack; the last layer is two parallel heads producing mu and logvar."""

    def __init__(self, config):
        super().__init__()
        body, channels = [], 3
        for layer in config.encoder_layers[:-1]:
            body += [nn.Conv2d(channels, layer.channels, layer.kernel, layer.stride, layer.padding), nn.LeakyReLU(0.2)]
            channels = layer.channels
        head = config.encoder_layers[-1]
        self.body = nn.Sequential(*body)
        self.mu = nn.Conv2d(channels, config.latent_channels, head.kernel, head.stride, head.padding)
        self.logvar = nn.Conv2d(channels, config.latent_channels, head.kernel, head.stride, head.padding)

    def forward(self, x):
        h = self.body(x)
        return self.mu(h), self.logvar(h)


class Decoder(nn.Module):
    """Transposed mirror of the encoder, ending in a sigmoid so images stay in [0, 1]."""

    def __init__(self, config):
        super().__init__()
        layers = config.encoder_layers
        sizes = layer_sizes(config.layer_specs(), config.input_size)
        inputs = [3] + [l.channels for l in layers[:-1]]

        modules = []
        for i in reversed(range(len(layers))):
            layer = layers[i]
            produced = (sizes[i + 1] - 1) * layer.stride - 2 * layer.padding + layer.kernel
            # (n + 2p - k) mod stride, so always a valid output_padding
            output_padding = sizes[i] - produced
            modules.append(nn.ConvTranspose2d(
                layer.channels, inputs[i], layer.kernel, layer.stride, layer.padding, output_padding=output_padding
            ))
            modules.append(nn.LeakyReLU(0.2) if i > 0 else nn.Sigmoid())
        self.net = nn.Sequential(*modules)

    def forward(self, z):
        return self.net(z)


class MaskAdversarialAutoEncoder(nn.Module):
    """Encoder-decoder pair used as the generator G(x) = De(En(x))."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)

    def encode(self, x):
        _check_images(x, self.config.input_size)
        mu, logvar = self.encoder(x)
        z = reparameterize(mu, logvar, torch.randn_like(mu)) if self.training else mu
        return LatentCode(mu=mu, logvar=logvar, z=z)

    def decode(self, z):
        if tuple(z.shape[1:]) != self.config.latent_shape:
            raise ShapeError(f"Expected latents of shape (N, {self.config.latent_shape}), got {tuple(z.shape)}")
        return self.decoder(z)

    def forward(self, x):
        code = self.encode(x)
        return self.decode(code.z), code

    def generate(self, x, spec=None):
        """
        Test-time generation: De(mu), or De(manipulate(mu, spec)) when a spec
        (or a list of specs for simultaneous edits) is given.
        """
        mu = self.encode(x).mu
        if spec is not None:
            specs = spec if isinstance(spec, (list, tuple)) else [spec]
            mu = manipulate_many(mu, specs, self.config)
        return self.decode(mu)


# -----------------------------------------
# Discriminator
# -----------------------------------------
class Discriminator(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.input_size = config.input_size
        modules, channels, size = [], 3, config.input_size
        for width in config.discriminator_channels:
            modules += [nn.Conv2d(channels, width, 4, 2, 1), nn.LeakyReLU(0.2)]
            channels, size = width, size // 2
        if size < 1:
            raise ConfigurationError(f"Too many discriminator layers for a {config.input_size}px input")
        modules.append(nn.Conv2d(channels, 1, size))
        self.net = nn.Sequential(*modules)

    def forward(self, x):
        """Logits, one per image."""
        return self.net(x).flatten()

    def discriminate(self, x):
        _check_images(x, self.input_size)
        return torch.sigmoid(self(x))


# -----------------------------------------
# Classifiers: frozen identity extractor and attribute oracle
# -----------------------------------------
class SmallConvClassifier(nn.Module):

    def __init__(self, num_outputs, input_size=32, channels=(32, 64, 128), feature_dim=128):
        super().__init__()
        self.hparams = {
            "num_outputs": num_outputs, "input_size": input_size,
            "channels": list(channels), "feature_dim": feature_dim,
        }
        modules, in_channels, size = [], 3, input_size
        for width in channels:
            modules += [nn.Conv2d(in_channels, width, 4, 2, 1), nn.LeakyReLU(0.2)]
            in_channels, size = width, size // 2
        modules += [nn.Flatten(), nn.Linear(in_channels * size * size, feature_dim), nn.ReLU()]
        self.features = nn.Sequential(*modules)
        self.head = nn.Linear(feature_dim, num_outputs)

    def forward(self, x):
        return self.head(self.features(x))


class IdentityFeatureExtractor(nn.Module):
    """All but the last layer of a pretrained identity classifier, frozen for good."""

    def __init__(self, classifier):
        super().__init__()
        self.features = classifier.features
        for param in self.features.parameters():
            param.requires_grad_(False)
        super().train(False)

    def train(self, mode=True):
        return super().train(False)

    def forward(self, x):
        return self.features(x)


def save_classifier(classifier, path, target, extra=None):
    payload = {
        "format_version": CLASSIFIER_FORMAT_VERSION,
        "target": target,
        "hparams": classifier.hparams,
        "state_dict": classifier.state_dict(),
        **(extra or {}),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    logger.info(f"Saved {target} classifier to {path}")
    return path


def load_classifier(path, target, classifier_version=None):
    """Frozen classifier and its saved payload; `classifier_version`, when given, must match the pin."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Missing frozen {target} classifier weights at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CLASSIFIER_FORMAT_VERSION:
        raise CheckpointError(f"{path} has classifier format {payload.get('format_version')}")
    if payload.get("target") != target:
        raise CheckpointError(f"{path} holds a '{payload.get('target')}' classifier, expected '{target}'")
    if classifier_version is not None and payload.get("classifier_version") != classifier_version:
        raise CheckpointError(
            f"{path} holds {target} classifier version {payload.get('classifier_version')}, expected {classifier_version}"
        )

    classifier = SmallConvClassifier(**payload["hparams"])
    classifier.load_state_dict(payload["state_dict"])
    classifier.eval()
    return classifier, payload


def load_identity_extractor(path, classifier_version=None):
    classifier, _ = load_classifier(path, "identity", classifier_version)
    return IdentityFeatureExtractor(classifier)


def load_attribute_classifier(path, classifier_version=None):
    """Returns the frozen classifier and the attribute names of its outputs."""
    classifier, payload = load_classifier(path, "attribute", classifier_version)
    for param in classifier.parameters():
        param.requires_grad_(False)
    return classifier, tuple(payload.get("attribute_names", ATTRIBUTES))
