"""From raw network output to final pixel-space detections."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import iou_matrix
from .model import DEFAULT_CLASSES, SSDMobileNetV2
from .ssd import center_to_corners, decode_boxes, softmax_scores
from .tensor import normalize_input, resize_bilinear


@dataclass(frozen=True)
class Detection:
    class_id: int
    class_name: str
    score: float
    bbox: tuple  # (x_min, y_min, x_max, y_max) in original-frame pixels

    def to_record(self, image: str) -> dict:
        return {"image": image, "class": self.class_name,
                "score": round(float(self.score), 6),
                "bbox": [round(float(v), 6) for v in self.bbox]}


@dataclass(frozen=True)
class PostprocessConfig:
    score_threshold: float = 0.5
    nms_iou_threshold: float = 0.45
    max_detections: int = 100

    def __post_init__(self):
        for name in ("score_threshold", "nms_iou_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.max_detections < 1:
            raise ValueError(f"max_detections must be positive, got {self.max_detections}")


def filter_by_score(probs: np.ndarray, threshold: float):
    """Candidates ``(class_id, score, anchor_index)`` with probability >= threshold.

    Column 0 is background and is never emitted.  Returned arrays are ordered
    by class then anchor index.
    """
    probs = np.asarray(probs)
    fg = probs[:, 1:]
    # nonzero on the transpose walks class-major, anchors ascending
    cls, anchor_idx = np.nonzero(fg.T >= threshold)
    return cls + 1, fg[anchor_idx, cls], anchor_idx


def nms_per_class(scores: np.ndarray, boxes: np.ndarray, iou_threshold: float,
                  indices: np.ndarray | None = None) -> np.ndarray:
    """Greedy NMS for one class; returns positions of survivors in input order of rank.

    Ties in score are broken by the smaller ``indices`` value (input position
    when not given).  A box is suppressed when its IoU with a kept box is
    strictly greater than ``iou_threshold``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if indices is None:
        indices = np.arange(len(scores))
    order = np.lexsort((indices, -scores))
    keep = []
    while order.size:
        top = order[0]
        keep.append(top)
        if order.size == 1:
            break
        overlaps = iou_matrix(boxes[top:top + 1], boxes[order[1:]])[0]
        order = order[1:][overlaps <= iou_threshold]
    return np.array(keep, dtype=np.intp)


def postprocess(logits: np.ndarray, offsets: np.ndarray, anchors: np.ndarray,
                frame_size: tuple, config: PostprocessConfig = PostprocessConfig(),
                class_names: Sequence[str] = DEFAULT_CLASSES,
                variances: Sequence[float] = (0.1, 0.1, 0.2, 0.2)) -> list[Detection]:
    """Softmax, decode, threshold, per-class NMS, top-k, scale to pixels."""
    height, width = frame_size
    probs = softmax_scores(logits)
    corners = np.clip(center_to_corners(decode_boxes(offsets, anchors, variances)), 0.0, 1.0)
    cls, scores, idx = filter_by_score(probs, config.score_threshold)
    # clipping can flatten boxes lying outside the frame
    valid = (corners[idx, 2] > corners[idx, 0]) & (corners[idx, 3] > corners[idx, 1])
    cls, scores, idx = cls[valid], scores[valid], idx[valid]

    kept = []
    for c in np.unique(cls):
        sel = np.flatnonzero(cls == c)
        survivors = nms_per_class(scores[sel], corners[idx[sel]],
                                  config.nms_iou_threshold, idx[sel])
        kept.extend(sel[survivors])
    kept = np.array(kept, dtype=np.intp)
    if kept.size:
        kept = kept[np.lexsort((idx[kept], cls[kept], -scores[kept]))]
    kept = kept[: config.max_detections]

    scale = np.array([width, height, width, height], dtype=np.float64)
    out = []
    for k in kept:
        c = int(cls[k])
        box = corners[idx[k]] * scale
        out.append(Detection(c, class_names[c - 1], float(scores[k]), tuple(float(v) for v in box)))
    return out


def preprocess(frame: np.ndarray, size: int) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 frame, got shape {frame.shape}")
    return resize_bilinear(normalize_input(frame), size, size)


def detect(frame: np.ndarray, model: SSDMobileNetV2,
           config: PostprocessConfig = PostprocessConfig(),
           class_names: Sequence[str] = DEFAULT_CLASSES,
           timings: dict | None = None) -> list[Detection]:
    """Full pipeline for one HxWx3 byte frame.

    When ``timings`` is given, per-stage wall seconds are stored under
    ``preprocess``, ``forward`` and ``postprocess``.
    """
    t0 = time.perf_counter()
    x = preprocess(frame, model.config.input_size)
    t1 = time.perf_counter()
    preds = model.forward(x)
    t2 = time.perf_counter()
    dets = postprocess(preds.class_logits, preds.box_offsets, model.anchors,
                       frame.shape[:2], config, class_names, model.config.anchors.variances)
    t3 = time.perf_counter()
    if timings is not None:
        timings.update(preprocess=t1 - t0, forward=t2 - t1, postprocess=t3 - t2)
    return dets
