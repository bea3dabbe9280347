"""MixUp and geometric augmentation with bounding-box bookkeeping.

Boxes are ``(N, 4)`` arrays of pixel corners ``(x_min, y_min, x_max, y_max)``
in continuous image coordinates (pixel ``i`` spans ``[i, i + 1)``).  Geometric
ops return ``(image, boxes, keep)`` where ``keep`` indexes the input boxes that
survived, so callers can carry labels along.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_ALPHA = 0.4
MIN_VISIBLE = 0.25


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = DEFAULT_ALPHA
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class WeightedBox:
    label: str
    bbox: tuple
    weight: float = 1.0


@dataclass
class MixupSample:
    image: np.ndarray
    label: np.ndarray = None
    boxes: list = field(default_factory=list)

    def __post_init__(self):
        if self.label is not None:
            y = np.asarray(self.label, dtype=np.float64)
            if np.any(y < 0) or abs(y.sum() - 1.0) > 1e-6:
                raise ValueError("label must lie on the probability simplex")
            self.label = y


def sample_lambda(rng: np.random.Generator, alpha: float = DEFAULT_ALPHA) -> float:
    """Beta(alpha, alpha) draw built from two Gamma(alpha, 1) draws."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    g1 = rng.gamma(alpha)
    g2 = rng.gamma(alpha)
    total = g1 + g2
    if total == 0.0:  # both draws underflowed
        return 0.5
    return float(g1 / total)


def _complementary(lam: float) -> tuple[float, float]:
    # the larger weight is derived from the smaller by exact subtraction, so
    # (lam, a, b) and (1 - lam, b, a) produce the same pair of weights
    if lam >= 0.5:
        return lam, 1.0 - lam
    wb = 1.0 - lam
    return 1.0 - wb, wb


def mixup(a: MixupSample, b: MixupSample, lam: float) -> MixupSample:
    """Convex combination of two samples' images, labels and box lists."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    xa = np.asarray(a.image, dtype=np.float64)
    xb = np.asarray(b.image, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"image shapes differ: {xa.shape} vs {xb.shape}")
    wa, wb = _complementary(lam)
    image = wa * xa + wb * xb
    label = None
    if a.label is not None and b.label is not None:
        if a.label.shape != b.label.shape:
            raise ValueError("label vectors differ in length")
        label = wa * a.label + wb * b.label
    boxes = [WeightedBox(bx.label, bx.bbox, bx.weight * wa) for bx in a.boxes] + \
            [WeightedBox(bx.label, bx.bbox, bx.weight * wb) for bx in b.boxes]
    return MixupSample(image, label, boxes)


def _as_boxes(boxes) -> np.ndarray:
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)


def _restore_dtype(out: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(like.dtype, copy=False)


def _clip_and_filter(boxes: np.ndarray, ref_area: np.ndarray, width: int, height: int,
                     min_visible: float):
    clipped = boxes.copy()
    clipped[:, [0, 2]] = np.clip(clipped[:, [0, 2]], 0, width)
    clipped[:, [1, 3]] = np.clip(clipped[:, [1, 3]], 0, height)
    w = clipped[:, 2] - clipped[:, 0]
    h = clipped[:, 3] - clipped[:, 1]
    area = np.where((w > 0) & (h > 0), w * h, 0.0)
    keep = np.flatnonzero((area > 0) & (area >= min_visible * ref_area))
    return clipped[keep], keep


def flip_horizontal(image: np.ndarray, boxes):
    image = np.asarray(image)
    b = _as_boxes(boxes)
    w = image.shape[1]
    flipped = np.stack([w - b[:, 2], b[:, 1], w - b[:, 0], b[:, 3]], axis=1)
    return image[:, ::-1].copy(), flipped, np.arange(len(b))


def translate(image: np.ndarray, boxes, dx: int, dy: int, min_visible: float = MIN_VISIBLE):
    """Shift content by ``(dx, dy)`` pixels with zero fill."""
    image = np.asarray(image)
    dx, dy = int(dx), int(dy)
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    ys, yd = (slice(0, max(h - dy, 0)), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, max(w - dx, 0)), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    if abs(dx) < w and abs(dy) < h:
        out[yd, xd] = image[ys, xs]
    b = _as_boxes(boxes)
    area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    moved = b + np.array([dx, dy, dx, dy], dtype=np.float64)
    new_boxes, keep = _clip_and_filter(moved, area, w, h, min_visible)
    return out, new_boxes, keep


_EXACT_TRIG = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}


def _cos_sin(degrees: float) -> tuple[float, float]:
    if float(degrees).is_integer() and int(degrees) % 90 == 0:
        return _EXACT_TRIG[int(degrees) % 360]
    rad = math.radians(degrees)
    return math.cos(rad), math.sin(rad)


def _sample_bilinear_zero(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup at pixel-index coordinates; outside samples read as 0."""
    h, w = image.shape[:2]
    img = image.astype(np.float64)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]

    def get(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        v = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside[..., None], v, 0.0)

    top = get(y0, x0) + (get(y0, x0 + 1) - get(y0, x0)) * fx
    bottom = get(y0 + 1, x0) + (get(y0 + 1, x0 + 1) - get(y0 + 1, x0)) * fx
    return top + (bottom - top) * fy


def rotate(image: np.ndarray, boxes, degrees: float, min_visible: float = MIN_VISIBLE):
    """Rotate counter-clockwise (as displayed) about the image center.

    Each box becomes the axis-aligned hull of its rotated corners, clipped to
    the frame; boxes keeping less than ``min_visible`` of the hull area are
    dropped.
    """
    image = np.asarray(image)
    b = _as_boxes(boxes)
    if degrees % 360 == 0:
        return image.copy(), b.copy(), np.arange(len(b))
    squeeze = image.ndim == 2
    img = image[..., None] if squeeze else image
    h, w = img.shape[:2]
    cx, cy = w / 2.0, h / 2.0
    c, s = _cos_sin(degrees)

    # inverse map: output pixel centre -> source continuous coordinate
    oy, ox = np.meshgrid(np.arange(h) + 0.5 - cy, np.arange(w) + 0.5 - cx, indexing="ij")
    src_x = cx + ox * c - oy * s - 0.5
    src_y = cy + ox * s + oy * c - 0.5
    out = _sample_bilinear_zero(img, src_y, src_x)
    out = out[..., 0] if squeeze else out

    if len(b):
        xs = b[:, [0, 2, 2, 0]] - cx
        ys = b[:, [1, 1, 3, 3]] - cy
        rx = cx + xs * c + ys * s
        ry = cy - xs * s + ys * c
        hull = np.stack([rx.min(1), ry.min(1), rx.max(1), ry.max(1)], axis=1)
        area = (hull[:, 2] - hull[:, 0]) * (hull[:, 3] - hull[:, 1])
        new_boxes, keep = _clip_and_filter(hull, area, w, h, min_visible)
    else:
        new_boxes, keep = b.copy(), np.arange(0)
    return _restore_dtype(out, image), new_boxes, keep


def random_geometric(image: np.ndarray, boxes, rng: np.random.Generator,
                     max_rotation: float = 15.0, max_shift: float = 0.1,
                     flip_prob: float = 0.5, min_visible: float = MIN_VISIBLE):
    """Random mirror, translation (fraction of frame) and rotation (degrees)."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    keep = np.arange(len(_as_boxes(boxes)))
    if rng.random() < flip_prob:
        image, boxes, _ = flip_horizontal(image, boxes)
    dx = int(round(rng.uniform(-max_shift, max_shift) * w))
    dy = int(round(rng.uniform(-max_shift, max_shift) * h))
    image, boxes, k = translate(image, boxes, dx, dy, min_visible)
    keep = keep[k]
    image, boxes, k = rotate(image, boxes, rng.uniform(-max_rotation, max_rotation), min_visible)
    return image, boxes, keep[k]
