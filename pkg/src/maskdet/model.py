"""SSD-MobileNetV2 assembled from the backbone and SSD head."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .backbone import Backbone, BackboneConfig, LayerSpec, backbone_layers
from .ssd import (AnchorConfig, EXTRA_CHANNELS, RawPredictions, extra_feature_layers,
                  extra_layer_specs, generate_anchors, head_forward, predictor_specs)

INPUT_SIZE = 320
DEFAULT_CLASSES = ("Mask", "NoMask")


@dataclass(frozen=True)
class SSDConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    num_classes: int = 2
    input_size: int = INPUT_SIZE
    extra_channels: tuple = EXTRA_CHANNELS

    def feature_map_channels(self) -> list[int]:
        return [self.backbone.tap_a_channels, self.backbone.head_channels,
                *(out for _, out in self.extra_channels)]


def architecture_layers(config: SSDConfig = SSDConfig()) -> list[LayerSpec]:
    """All layers the network needs, in execution order."""
    layers = backbone_layers(config.backbone)
    for block in extra_layer_specs(config.backbone.head_channels, config.extra_channels):
        layers.extend(block)
    for cls_layer, box_layer in predictor_specs(config.feature_map_channels(),
                                                config.num_classes,
                                                config.anchors.anchors_per_location):
        layers.extend((cls_layer, box_layer))
    return layers


def required_tensors(config: SSDConfig = SSDConfig()) -> dict[str, tuple]:
    """Map of tensor name to shape for every tensor the architecture reads."""
    shapes = {}
    for layer in architecture_layers(config):
        shapes[f"{layer.name}.weight"] = layer.weight_shape
        shapes[f"{layer.name}.bias"] = layer.bias_shape
    return shapes


def backbone_param_count(config: BackboneConfig = BackboneConfig()) -> int:
    return sum(layer.param_count for layer in backbone_layers(config))


class SSDMobileNetV2:
    """Forward pass from a normalized 320x320x3 tensor to raw predictions."""

    def __init__(self, weights: Mapping[str, np.ndarray], config: SSDConfig = SSDConfig()):
        self.config = config
        self.weights = weights
        self.backbone = Backbone(weights, config.backbone)
        self.anchors = generate_anchors(config.anchors)
        n_pred = sum(f * f for f in config.anchors.feature_map_sizes) \
            * config.anchors.anchors_per_location
        if n_pred != len(self.anchors):
            raise RuntimeError(f"anchor count {len(self.anchors)} != prediction rows {n_pred}")

    def features(self, x: np.ndarray):
        taps = self.backbone.forward(x)
        extras = extra_feature_layers(taps.tap_b, self.weights, self.config.extra_channels)
        return taps, extras

    def forward(self, x: np.ndarray) -> RawPredictions:
        taps, extras = self.features(x)
        sizes = [m.shape[0] for m in (taps.tap_a, taps.tap_b, *extras)]
        if tuple(sizes) != tuple(self.config.anchors.feature_map_sizes):
            raise RuntimeError(
                f"feature maps {sizes} do not match anchor grid "
                f"{list(self.config.anchors.feature_map_sizes)}")
        preds = head_forward(taps, extras, self.weights, self.config.num_classes,
                             self.config.anchors.anchors_per_location)
        if len(preds) != len(self.anchors):
            raise RuntimeError(
                f"{len(preds)} prediction rows for {len(self.anchors)} anchors")
        if not (np.isfinite(preds.class_logits).all() and np.isfinite(preds.box_offsets).all()):
            raise FloatingPointError("non-finite values in network output")
        return preds

    __call__ = forward
