"""MobileNetV2 feature extractor with two taps for the SSD head.

Layer names follow the weight-container convention::

    stem.conv
    stage{i}.block{j}.expand | .depthwise | .project     (1-based i, j)
    head.conv

Each layer ``L`` reads ``L.weight`` and ``L.bias`` from a weight mapping.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import ConvParams, as_tensor, conv2d, depthwise_conv2d, relu6

# (expansion t, out channels c, repeats n, first stride s)
REFERENCE_STAGES = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


@dataclass(frozen=True)
class InvertedResidualSpec:
    expansion: int
    out_channels: int
    repeats: int
    stride: int

    def __post_init__(self):
        if min(self.expansion, self.out_channels, self.repeats) < 1:
            raise ValueError(f"invalid stage {self}")
        if self.stride not in (1, 2):
            raise ValueError(f"stage stride must be 1 or 2, got {self.stride}")


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 32
    stages: tuple = tuple(InvertedResidualSpec(*s) for s in REFERENCE_STAGES)
    head_channels: int = 1280
    tap_stage: int = 5  # 1-based stage whose output is tap_a

    @property
    def tap_a_channels(self) -> int:
        return self.stages[self.tap_stage - 1].out_channels


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one convolution in the network."""

    name: str
    kind: str  # "conv" or "depthwise"
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0
    activation: bool = True

    @property
    def weight_shape(self) -> tuple:
        if self.kind == "depthwise":
            return (self.kernel, self.kernel, self.in_channels, 1)
        return (self.kernel, self.kernel, self.in_channels, self.out_channels)

    @property
    def bias_shape(self) -> tuple:
        return (self.out_channels,)

    @property
    def fan_in(self) -> int:
        k2 = self.kernel * self.kernel
        return k2 if self.kind == "depthwise" else k2 * self.in_channels

    @property
    def param_count(self) -> int:
        return int(np.prod(self.weight_shape)) + self.out_channels


@dataclass(frozen=True)
class BlockSpec:
    """One inverted-residual block as built from a stage table entry."""

    name: str
    in_channels: int
    out_channels: int
    expansion: int
    stride: int
    layers: tuple = field(default=())

    @property
    def residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


@dataclass
class FeatureTaps:
    tap_a: np.ndarray
    tap_b: np.ndarray


def make_block(name: str, in_c: int, out_c: int, expansion: int, stride: int) -> BlockSpec:
    hidden = in_c * expansion
    layers = []
    if expansion != 1:
        layers.append(LayerSpec(f"{name}.expand", "conv", 1, in_c, hidden))
    layers.append(LayerSpec(f"{name}.depthwise", "depthwise", 3, hidden, hidden,
                            stride=stride, padding=1))
    # linear bottleneck: no activation after the projection
    layers.append(LayerSpec(f"{name}.project", "conv", 1, hidden, out_c, activation=False))
    return BlockSpec(name, in_c, out_c, expansion, stride, tuple(layers))


def build_blocks(config: BackboneConfig = BackboneConfig()) -> list[BlockSpec]:
    blocks = []
    in_c = config.stem_channels
    for i, stage in enumerate(config.stages, start=1):
        for j in range(1, stage.repeats + 1):
            stride = stage.stride if j == 1 else 1
            blocks.append(make_block(f"stage{i}.block{j}", in_c, stage.out_channels,
                                     stage.expansion, stride))
            in_c = stage.out_channels
    return blocks


def stem_layer(config: BackboneConfig = BackboneConfig()) -> LayerSpec:
    return LayerSpec("stem.conv", "conv", 3, 3, config.stem_channels, stride=2, padding=1)


def head_layer(config: BackboneConfig = BackboneConfig()) -> LayerSpec:
    last = config.stages[-1].out_channels
    return LayerSpec("head.conv", "conv", 1, last, config.head_channels)


def backbone_layers(config: BackboneConfig = BackboneConfig()) -> list[LayerSpec]:
    """Every backbone convolution in execution order."""
    layers = [stem_layer(config)]
    for block in build_blocks(config):
        layers.extend(block.layers)
    layers.append(head_layer(config))
    return layers


def apply_layer(x: np.ndarray, layer: LayerSpec, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    try:
        w = weights[f"{layer.name}.weight"]
        b = weights[f"{layer.name}.bias"]
    except KeyError as exc:
        raise KeyError(f"missing weights for layer {layer.name}") from exc
    if tuple(w.shape) != layer.weight_shape or tuple(b.shape) != layer.bias_shape:
        raise ValueError(
            f"{layer.name}: expected weight {layer.weight_shape} / bias {layer.bias_shape}, "
            f"got {tuple(w.shape)} / {tuple(b.shape)}")
    if layer.kind == "depthwise":
        y = depthwise_conv2d(x, w, b, stride=layer.stride, padding=layer.padding)
    else:
        y = conv2d(x, ConvParams(w, b, stride=layer.stride, padding=layer.padding))
    return relu6(y) if layer.activation else y


def inverted_residual(x: np.ndarray, block: BlockSpec,
                      weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Expand (1x1) -> depthwise 3x3 -> linear projection, plus identity skip.

    The skip connection is added only when the block keeps both resolution
    (stride 1) and channel count.
    """
    x = as_tensor(x)
    if x.shape[2] != block.in_channels:
        raise ValueError(
            f"{block.name}: expects {block.in_channels} channels, got {x.shape[2]}")
    y = x
    for layer in block.layers:
        y = apply_layer(y, layer, weights)
    if block.residual:
        y = y + x
    return y


class Backbone:
    """MobileNetV2 body bound to a set of weights."""

    def __init__(self, weights: Mapping[str, np.ndarray],
                 config: BackboneConfig = BackboneConfig()):
        self.config = config
        self.weights = weights
        self.stem = stem_layer(config)
        self.blocks = build_blocks(config)
        self.head = head_layer(config)
        # tap_a is taken after the last block of the tap stage
        self._tap_after = f"stage{config.tap_stage}.block{config.stages[config.tap_stage - 1].repeats}"

    def forward(self, image: np.ndarray) -> FeatureTaps:
        x = as_tensor(image, "image")
        if x.shape[2] != 3:
            raise ValueError(f"backbone expects a 3-channel image, got {x.shape}")
        if x.shape[0] % 32 or x.shape[1] % 32:
            raise ValueError(f"input dims must be multiples of 32, got {x.shape[:2]}")
        x = apply_layer(x, self.stem, self.weights)
        tap_a = None
        for block in self.blocks:
            x = inverted_residual(x, block, self.weights)
            if block.name == self._tap_after:
                tap_a = x
        tap_b = apply_layer(x, self.head, self.weights)
        return FeatureTaps(tap_a, tap_b)

    __call__ = forward


def backbone_forward(image: np.ndarray, weights: Mapping[str, np.ndarray],
                     config: BackboneConfig = BackboneConfig()) -> FeatureTaps:
    return Backbone(weights, config).forward(image)
