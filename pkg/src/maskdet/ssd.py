"""SSD detection head: prior boxes, extra feature layers, predictors, box coder.

Anchors and decoded boxes are ``(N, 4)`` float arrays in normalized center
form ``(cx, cy, w, h)``.  Ordering is layer-major, then row-major over the
feature-map cells, then anchor-minor, and the prediction rows of
:func:`head_forward` use the same ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .backbone import FeatureTaps, LayerSpec, apply_layer

DEFAULT_VARIANCES = (0.1, 0.1, 0.2, 0.2)
# exp() argument cap when decoding widths/heights
CLIP_SLACK = 1e-12
MAX_LOG_SCALE = 10.0


@dataclass(frozen=True)
class AnchorConfig:
    feature_map_sizes: tuple = (20, 10, 5, 3, 2, 1)
    scale_min: float = 0.2
    scale_max: float = 0.95
    aspect_ratios: tuple = (1.0, 2.0, 0.5, 3.0, 1.0 / 3.0)
    variances: tuple = DEFAULT_VARIANCES

    @property
    def anchors_per_location(self) -> int:
        return len(self.aspect_ratios) + 1

    @property
    def num_anchors(self) -> int:
        return sum(f * f for f in self.feature_map_sizes) * self.anchors_per_location

    def scales(self) -> list[float]:
        m = len(self.feature_map_sizes)
        if m == 1:
            return [self.scale_min]
        step = (self.scale_max - self.scale_min) / (m - 1)
        return [self.scale_min + step * k for k in range(m)]


@dataclass
class RawPredictions:
    class_logits: np.ndarray  # (num_anchors, K + 1)
    box_offsets: np.ndarray   # (num_anchors, 4) as (tx, ty, tw, th)

    def __len__(self):
        return self.class_logits.shape[0]


def center_to_corners(boxes: np.ndarray) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def corners_to_center(boxes: np.ndarray) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    return np.concatenate([(b[..., :2] + b[..., 2:]) / 2, b[..., 2:] - b[..., :2]], axis=-1)


def generate_anchors(config: AnchorConfig = AnchorConfig(), clip: bool = True) -> np.ndarray:
    """Prior boxes for every feature map, shape ``(num_anchors, 4)`` center form.

    Per cell the anchors are one box per aspect ratio at the layer scale,
    followed by a square box at the geometric mean of this and the next
    layer's scale (1.0 past the last layer).
    """
    scales = config.scales() + [1.0]
    out = []
    for k, f in enumerate(config.feature_map_sizes):
        s_k = scales[k]
        sizes = [(s_k * math.sqrt(r), s_k / math.sqrt(r)) for r in config.aspect_ratios]
        extra = math.sqrt(s_k * scales[k + 1])
        sizes.append((extra, extra))
        wh = np.array(sizes)

        centers = (np.arange(f) + 0.5) / f
        cy, cx = np.meshgrid(centers, centers, indexing="ij")
        n = len(sizes)
        grid = np.empty((f, f, n, 4))
        grid[..., 0] = cx[..., None]
        grid[..., 1] = cy[..., None]
        grid[..., 2:] = wh
        out.append(grid.reshape(-1, 4))
    anchors = np.concatenate(out)
    if clip:
        anchors = corners_to_center(np.clip(center_to_corners(anchors), 0.0, 1.0))
    return anchors


# (squeeze channels, output channels) for the four extra blocks
EXTRA_CHANNELS = ((256, 512), (128, 256), (128, 256), (64, 128))


def extra_layer_specs(in_channels: int = 1280,
                      channels: Sequence = EXTRA_CHANNELS) -> list[list[LayerSpec]]:
    blocks = []
    for k, (mid, out) in enumerate(channels, start=1):
        blocks.append([
            LayerSpec(f"extra{k}.squeeze", "conv", 1, in_channels, mid),
            LayerSpec(f"extra{k}.conv", "conv", 3, mid, out, stride=2, padding=1),
        ])
        in_channels = out
    return blocks


def predictor_specs(map_channels: Sequence[int], num_classes: int = 2,
                    anchors_per_location: int = 6) -> list[tuple[LayerSpec, LayerSpec]]:
    """Class and box predictor convolutions, one pair per feature map."""
    specs = []
    for k, c in enumerate(map_channels, start=1):
        specs.append((
            LayerSpec(f"predictor{k}.class", "conv", 3, c,
                      anchors_per_location * (num_classes + 1), padding=1, activation=False),
            LayerSpec(f"predictor{k}.box", "conv", 3, c, anchors_per_location * 4,
                      padding=1, activation=False),
        ))
    return specs


def extra_feature_layers(tap_b: np.ndarray, weights: Mapping[str, np.ndarray],
                         channels: Sequence = EXTRA_CHANNELS) -> list[np.ndarray]:
    """Four squeeze + stride-2 blocks producing progressively coarser maps."""
    maps = []
    x = tap_b
    for block in extra_layer_specs(tap_b.shape[2], channels):
        for layer in block:
            x = apply_layer(x, layer, weights)
        maps.append(x)
    return maps


def head_forward(taps: FeatureTaps, extras: Sequence[np.ndarray],
                 weights: Mapping[str, np.ndarray], num_classes: int = 2,
                 anchors_per_location: int = 6) -> RawPredictions:
    maps = [taps.tap_a, taps.tap_b, *extras]
    specs = predictor_specs([m.shape[2] for m in maps], num_classes, anchors_per_location)
    logits, offsets = [], []
    for fmap, (cls_layer, box_layer) in zip(maps, specs):
        logits.append(apply_layer(fmap, cls_layer, weights).reshape(-1, num_classes + 1))
        offsets.append(apply_layer(fmap, box_layer, weights).reshape(-1, 4))
    return RawPredictions(np.concatenate(logits), np.concatenate(offsets))


def softmax_scores(logits: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, stabilised by subtracting the row max."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decode_boxes(offsets: np.ndarray, anchors: np.ndarray,
                 variances: Sequence[float] = DEFAULT_VARIANCES,
                 clip: bool = True) -> np.ndarray:
    """Apply ``(tx, ty, tw, th)`` offsets to anchors; returns center-form boxes.

    With ``clip`` the result is clipped to the unit square in corner form.
    """
    t = np.asarray(offsets, dtype=np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    vx, vy, vw, vh = variances
    cx = a[:, 0] + t[:, 0] * vx * a[:, 2]
    cy = a[:, 1] + t[:, 1] * vy * a[:, 3]
    w = a[:, 2] * np.exp(np.minimum(t[:, 2] * vw, MAX_LOG_SCALE))
    h = a[:, 3] * np.exp(np.minimum(t[:, 3] * vh, MAX_LOG_SCALE))
    boxes = np.stack([cx, cy, w, h], axis=1)
    if clip:
        # only rows that really leave the frame are converted, so in-frame
        # boxes (e.g. zero offsets on an anchor) come back bit-exact
        corners = center_to_corners(boxes)
        out = np.any((corners < -CLIP_SLACK) | (corners > 1.0 + CLIP_SLACK), axis=1)
        boxes[out] = corners_to_center(np.clip(corners[out], 0.0, 1.0))
    return boxes


def encode_boxes(boxes: np.ndarray, anchors: np.ndarray,
                 variances: Sequence[float] = DEFAULT_VARIANCES) -> np.ndarray:
    """Inverse of :func:`decode_boxes` (without clipping); center-form input."""
    b = np.asarray(boxes, dtype=np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    vx, vy, vw, vh = variances
    return np.stack([
        (b[:, 0] - a[:, 0]) / (vx * a[:, 2]),
        (b[:, 1] - a[:, 1]) / (vy * a[:, 3]),
        np.log(b[:, 2] / a[:, 2]) / vw,
        np.log(b[:, 3] / a[:, 3]) / vh,
    ], axis=1)
