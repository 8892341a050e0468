import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils.exceptions import ConfigurationError
from utils.logger.logger import get_logger_config

logger = logging.getLogger("face_renderer")
get_logger_config(logging)

# Fixed attribute order; every Sample carries all four flags.
ATTRIBUTES = ("hair_blond", "glasses", "mouth_open", "pale_skin")
SUPPORTED_SIZES = (32, 64)

HAIR_DARK = np.array([0.28, 0.17, 0.10])
HAIR_BLOND = np.array([0.95, 0.82, 0.35])
GLASSES_FRAME = np.array([0.08, 0.08, 0.12])
MOUTH_CLOSED = np.array([0.55, 0.20, 0.22])
MOUTH_OPEN = np.array([0.25, 0.03, 0.05])


class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    identity_id: int = Field(ge=0)
    attributes: dict[str, bool] = Field(default_factory=dict)
    background_seed: int = Field(ge=0)
    render_seed: int = Field(ge=0)

    def flags(self):
        unknown = set(self.attributes) - set(ATTRIBUTES)
        if unknown:
            raise ConfigurationError(f"Unknown attribute(s) {sorted(unknown)}; expected one of {ATTRIBUTES}")
        return np.array([bool(self.attributes.get(name, False)) for name in ATTRIBUTES])


@dataclass
class Sample:
    image: np.ndarray       # H x W x 3, float32 in [0, 1]
    mask: np.ndarray        # H x W, uint8 in {0, 1}; 1 = face
    attributes: np.ndarray  # bool, ordered as ATTRIBUTES
    identity_id: int

    def attribute(self, name):
        return bool(self.attributes[attribute_index(name)])


def attribute_index(name):
    try:
        return ATTRIBUTES.index(name)
    except ValueError:
        raise ConfigurationError(f"Unknown attribute '{name}'; expected one of {ATTRIBUTES}")


def identity_params(identity_id):
    """
    Face geometry and colouring of one identity. Pure function of the id, so
    the same person keeps the same face under every attribute setting.
    """
    rng = np.random.default_rng([identity_id, 7919])
    return {
        "center_x": 0.5 + rng.uniform(-0.04, 0.04),
        "center_y": 0.52 + rng.uniform(-0.03, 0.03),
        "axis_x": rng.uniform(0.26, 0.36),
        "axis_y": rng.uniform(0.34, 0.42),
        "skin_hue": rng.uniform(0.0, 1.0),
        "eye_spacing": rng.uniform(0.28, 0.52),
        "eye_height": rng.uniform(0.05, 0.20),
        "nose_length": rng.uniform(0.15, 0.40),
        "eye_color": rng.uniform(0.0, 0.45, size=3),
        "hair_line": rng.uniform(0.35, 0.55),
    }


def face_geometry(spec):
    """Ellipse and feature placement derived from the identity only."""
    p = identity_params(spec.identity_id)
    return {key: p[key] for key in ("center_x", "center_y", "axis_x", "axis_y", "eye_spacing", "eye_height")}


def _skin_color(hue, pale):
    # warm hues between dark brown and light beige
    dark = np.array([0.45, 0.28, 0.18])
    light = np.array([0.92, 0.74, 0.60])
    color = dark + hue * (light - dark)
    if pale:
        color = color + (1.0 - color) * 0.55
    return color


def _background(size, background_seed):
    rng = np.random.default_rng([background_seed, 104729])
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    top = rng.uniform(0.0, 1.0, size=3)
    bottom = rng.uniform(0.0, 1.0, size=3)
    angle = rng.uniform(0, np.pi)
    freq = rng.uniform(2.0, 6.0)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy))
    base = top[None, None, :] * (1 - yy[..., None]) + bottom[None, None, :] * yy[..., None]
    return np.clip(base * (0.8 + 0.2 * stripes[..., None]), 0.0, 1.0)


def _ellipse(yy, xx, cy, cx, ay, ax):
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def render_sample(spec, size=32):
    """
    Render one labelled face. Deterministic in `spec`; attributes are painted
    strictly inside the face stencil, which doubles as the exact mask.
    """
    if size not in SUPPORTED_SIZES:
        raise ConfigurationError(f"Unsupported image size {size}; expected one of {SUPPORTED_SIZES}")

    flags = dict(zip(ATTRIBUTES, spec.flags()))
    p = identity_params(spec.identity_id)

    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    cx, cy, ax, ay = p["center_x"], p["center_y"], p["axis_x"], p["axis_y"]
    mask = _ellipse(yy, xx, cy, cx, ay, ax)

    face = np.broadcast_to(_skin_color(p["skin_hue"], flags["pale_skin"]), (size, size, 3)).copy()

    # shading noise lives on the face only, so the background is a function of background_seed alone
    noise = np.random.default_rng([spec.render_seed, 15485863]).normal(0.0, 0.02, size=(size, size, 1))
    face = face + noise

    hair = yy < cy - p["hair_line"] * ay
    face[hair] = HAIR_BLOND if flags["hair_blond"] else HAIR_DARK

    eye_y = cy - p["eye_height"] * ay
    eye_dx = p["eye_spacing"] * ax
    eye_r = 0.12 * ax
    for side in (-1, 1):
        ex = cx + side * eye_dx
        if flags["glasses"]:
            outer = (np.abs(xx - ex) <= 2.4 * eye_r) & (np.abs(yy - eye_y) <= 1.8 * eye_r)
            inner = (np.abs(xx - ex) <= 1.4 * eye_r) & (np.abs(yy - eye_y) <= 0.9 * eye_r)
            face[outer & ~inner] = GLASSES_FRAME
            face[inner] = face[inner] * 0.7 + np.array([0.2, 0.3, 0.5]) * 0.3
        eye = _ellipse(yy, xx, eye_y, ex, eye_r * 1.2, eye_r * 1.6)
        face[eye] = p["eye_color"]
    if flags["glasses"]:
        bridge = (np.abs(xx - cx) <= eye_dx - 2.4 * eye_r) & (np.abs(yy - eye_y) <= 0.4 * eye_r)
        face[bridge] = GLASSES_FRAME

    nose = (np.abs(xx - cx) <= 0.05 * ax) & (yy >= cy) & (yy <= cy + p["nose_length"] * ay)
    face[nose] = face[nose] * 0.75

    mouth_y = cy + 0.62 * ay
    if flags["mouth_open"]:
        mouth = _ellipse(yy, xx, mouth_y, cx, 0.14 * ay, 0.35 * ax)
        face[mouth] = MOUTH_OPEN
    else:
        mouth = _ellipse(yy, xx, mouth_y, cx, 0.04 * ay, 0.35 * ax)
        face[mouth] = MOUTH_CLOSED

    background = _background(size, spec.background_seed)
    image = np.where(mask[..., None], np.clip(face, 0.0, 1.0), background)

    return Sample(
        image=image.astype(np.float32),
        mask=mask.astype(np.uint8),
        attributes=spec.flags(),
        identity_id=spec.identity_id,
    )
