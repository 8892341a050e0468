import json
import logging
from itertools import product
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.exceptions import ConfigurationError, GeometryError
from utils.logger.logger import get_logger_config

logger = logging.getLogger("rfcover")
get_logger_config(logging)


class LayerSpec(BaseModel):
    """Geometry of one square convolution-like layer."""

    model_config = ConfigDict(frozen=True)

    kernel: int = Field(ge=1)
    stride: int = Field(ge=1)
    padding: int = Field(ge=0)

    def output_size(self, n):
        return (n + 2 * self.padding - self.kernel) // self.stride + 1


class RFParams(BaseModel):
    """Receptive field of a top-layer pixel in input coordinates.

    size:  input pixels spanned by one top pixel (R)
    jump:  input shift between neighbouring top pixels (J)
    start: left edge of top pixel 0, negative inside the padding (S)
    """

    model_config = ConfigDict(frozen=True)

    size: int
    jump: int
    start: int

    def interval(self, index, input_size):
        """Clipped input interval [lo, hi] of top pixel `index` (lo > hi if empty)."""
        left = index * self.jump + self.start
        return max(0, left), min(input_size - 1, left + self.size - 1)


class PixelSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    axis_positions: tuple[int, ...]
    feature_size: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_positions(self):
        if list(self.axis_positions) != sorted(set(self.axis_positions)):
            raise ValueError("axis_positions must be sorted and free of duplicates")
        if any(p < 0 or p >= self.feature_size for p in self.axis_positions):
            raise ValueError(f"axis_positions must lie in [0, {self.feature_size - 1}]")
        return self

    @property
    def positions_2d(self):
        return list(product(self.axis_positions, self.axis_positions))

    @classmethod
    def full(cls, feature_size):
        return cls(axis_positions=tuple(range(feature_size)), feature_size=feature_size)


def compose_receptive_field(layers):
    """
    Compose the receptive field of the top layer, bottom layer first.
    Args:
        layers (list[LayerSpec]): ordered from the input upwards.
    Returns:
        RFParams: span, jump and start of a top pixel in input coordinates.
    """
    if not layers:
        raise ConfigurationError("Cannot compose a receptive field over an empty layer list")

    size, jump, start = 1, 1, 0
    for layer in layers:
        size = size + (layer.kernel - 1) * jump
        start = start - layer.padding * jump
        jump = jump * layer.stride

    return RFParams(size=size, jump=jump, start=start)


def layer_sizes(layers, input_size):
    """Spatial size entering each layer followed by the top size."""
    sizes = [input_size]
    for depth, layer in enumerate(layers):
        out = layer.output_size(sizes[-1])
        if out < 1:
            raise GeometryError(
                f"Layer {depth} ({layer.kernel}/{layer.stride}/{layer.padding}) "
                f"produces output size {out} for input size {sizes[-1]}"
            )
        sizes.append(out)
    return sizes


def feature_size(layers, input_size):
    if not layers:
        raise ConfigurationError("Cannot derive a feature size from an empty layer list")
    return layer_sizes(layers, input_size)[-1]


def pixel_intervals(rf, input_size, feature_size):
    return [rf.interval(i, input_size) for i in range(feature_size)]


def traced_intervals(layers, input_size):
    """
    Exact clipped input interval of every top pixel, propagated down through
    each layer with its own padding and truncation.
    """
    sizes = layer_sizes(layers, input_size)
    intervals = []
    for index in range(sizes[-1]):
        lo, hi = index, index
        for layer, size_in in zip(reversed(layers), reversed(sizes[:-1])):
            lo = max(0, lo * layer.stride - layer.padding)
            hi = min(size_in - 1, hi * layer.stride - layer.padding + layer.kernel - 1)
            if lo > hi:
                break
        intervals.append((lo, hi))
    return intervals


def _greedy_cover(intervals, reach, input_size):
    chosen = []
    covered = -1
    while covered < input_size - 1:
        target = covered + 1
        best = None
        for index, (lo, hi) in enumerate(intervals):
            if lo > hi or lo > target or hi < target:
                continue
            if best is None or reach[index] > reach[best]:
                best = index
        if best is None:
            raise GeometryError(f"Input coordinate {target} is not covered by any top-layer pixel")
        chosen.append(best)
        covered = intervals[best][1]
    return sorted(chosen)


def minimal_covering_set(rf, input_size, feature_size):
    """
    Minimum set of top pixels per axis whose clipped receptive fields cover
    [0, input_size - 1], by the greedy interval-cover sweep.
    """
    if input_size < 1 or feature_size < 1:
        raise GeometryError(f"Invalid geometry: input size {input_size}, feature size {feature_size}")

    intervals = pixel_intervals(rf, input_size, feature_size)
    # unclipped right edge; strictly increasing, so ties fall to the smaller index
    reach = [i * rf.jump + rf.start + rf.size - 1 for i in range(feature_size)]
    positions = _greedy_cover(intervals, reach, input_size)

    logger.debug(f"Covering set for R={rf.size} J={rf.jump} S={rf.start}: {positions}")
    return PixelSet(axis_positions=tuple(positions), feature_size=feature_size)


def _covers(intervals, input_size):
    covered = np.zeros(input_size, dtype=bool)
    for lo, hi in intervals:
        if lo <= hi:
            covered[lo:hi + 1] = True
    return bool(covered.all())


def verify_coverage(pixel_set, rf, input_size):
    if not pixel_set.axis_positions or input_size < 1:
        return False
    return _covers([rf.interval(i, input_size) for i in pixel_set.axis_positions], input_size)


def verify_traced_coverage(pixel_set, layers, input_size):
    intervals = traced_intervals(layers, input_size)
    if not pixel_set.axis_positions:
        return False
    return _covers([intervals[i] for i in pixel_set.axis_positions], input_size)


def cover_for_layers(layers, input_size):
    """
    Returns:
        tuple: (RFParams, feature size, PixelSet) for a layer stack.
    """
    rf = compose_receptive_field(layers)
    top = feature_size(layers, input_size)
    pixel_set = minimal_covering_set(rf, input_size, top)

    if not verify_traced_coverage(pixel_set, layers, input_size):
        # formula intervals over-claim when a layer drops trailing inputs
        raise GeometryError(
            f"Pixel set {list(pixel_set.axis_positions)} misses input pixels once "
            f"per-layer truncation is traced; adjust the layer geometry"
        )

    return rf, top, pixel_set


def load_architecture(path):
    """
    Read an architecture description: either a bare list of
    {kernel, stride, padding} records or {"layers": [...], "input_size": n}.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        logger.error(f"Error parsing architecture file {path}: {e}")
        raise ConfigurationError(f"Architecture file {path} is not valid JSON: {e}") from e
    except Exception as e:
        logger.error(f"Error reading architecture file {path}: {e}")
        raise

    if isinstance(raw, list):
        records, input_size = raw, None
    elif isinstance(raw, dict) and "layers" in raw:
        records, input_size = raw["layers"], raw.get("input_size")
    else:
        raise ConfigurationError(f"Architecture file {path} has no layer list")

    return [LayerSpec.model_validate(r) for r in records], input_size
