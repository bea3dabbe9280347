"""Detection metrics: IoU, greedy matching, confusion-count ratios, COCO AP/AR.

Boxes are corner form ``(x_min, y_min, x_max, y_max)``; areas are continuous
(no +1 pixel convention).
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
# i/100 is correctly rounded; linspace is an ulp high at 0.35, 0.41, ...
RECALL_GRID = np.arange(101) / 100


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError(f"negative confusion count in {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.tp + c.fp + c.fn + c.tn)


def precision(c: ConfusionCounts) -> float:
    # standard definition TP / (TP + FP); a zero denominator gives 0
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


@dataclass(frozen=True)
class Box:
    """A scored or ground-truth box tied to an image and class."""

    image: str
    label: str
    bbox: tuple
    score: float = 1.0


def match_detections(dets: Sequence[Box], gts: Sequence[Box], iou_threshold: float = 0.5):
    """Greedy COCO-style matching on a single image.

    Detections are visited by descending score (stable on input order); each
    takes the unmatched same-class ground truth of highest IoU, provided the
    IoU reaches ``iou_threshold``.  Returns ``(matches, counts)`` where
    ``matches[i]`` is the ground-truth index matched by ``dets[i]`` or ``None``.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    matches: list = [None] * len(dets)
    for i in order:
        d = dets[i]
        best, best_iou = None, iou_threshold
        for j, g in enumerate(gts):
            if taken[j] or g.label != d.label:
                continue
            v = iou(d.bbox, g.bbox)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            matches[i] = best
    tp = sum(m is not None for m in matches)
    counts = ConfusionCounts(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp, tn=0)
    return matches, counts


def average_precision(is_tp: Sequence[bool], num_gt: int,
                      scores: Sequence[float] | None = None) -> float:
    """101-point interpolated AP.

    ``is_tp`` flags detections of one class already ranked by score (or
    ranked here when ``scores`` is given, stable on ties).
    """
    if num_gt <= 0:
        return 0.0
    flags = np.asarray(is_tp, dtype=bool)
    if scores is not None and len(flags):
        flags = flags[np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")]
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    rec = tp / num_gt
    prec = tp / (tp + fp)
    # precision envelope: max precision at any recall >= r
    env = np.maximum.accumulate(prec[::-1])[::-1]
    idx = np.searchsorted(rec, RECALL_GRID, side="left")
    q = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(q.mean())


@dataclass
class EvalReport:
    ap_per_class: dict = field(default_factory=dict)   # class -> {iou_str: ap}
    map_coco: float = 0.0
    ap50: float = 0.0
    ap75: float = 0.0
    ar_max100: float = 0.0
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    precision: float = 0.0
    recall: float = 0.0
    accuracy: float = 0.0
    operating_iou: float = 0.5
    pr_curves: dict = field(default_factory=dict)       # class -> (recall, precision) at IoU 0.5

    def to_dict(self) -> dict:
        return {
            "map_coco": self.map_coco,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ar_max100": self.ar_max100,
            "ap_per_class": self.ap_per_class,
            "operating_point": {
                "iou_threshold": self.operating_iou,
                "tp": self.counts.tp, "fp": self.counts.fp,
                "fn": self.counts.fn, "tn": self.counts.tn,
                "precision": self.precision, "recall": self.recall,
                "accuracy": self.accuracy,
            },
        }


def _group(boxes: Iterable[Box]):
    out = defaultdict(list)
    for b in boxes:
        out[(b.image, b.label)].append(b)
    return out


def coco_evaluate(dets: Sequence[Box], gts: Sequence[Box],
                  classes: Sequence[str] | None = None,
                  iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
                  max_dets: int = 100, operating_iou: float = 0.5) -> EvalReport:
    """COCO-style AP per class and IoU threshold, mAP and AR@max_dets.

    Classes without any ground truth are left out of the means, as COCO does.
    """
    if classes is None:
        classes = sorted({g.label for g in gts} | {d.label for d in dets})
    # cap detections per image by score before anything else
    per_image = defaultdict(list)
    for d in dets:
        per_image[d.image].append(d)
    capped = []
    for image in per_image:
        ranked = sorted(per_image[image], key=lambda d: -d.score)
        capped.extend(ranked[:max_dets])

    det_groups = _group(capped)
    gt_groups = _group(gts)
    report = EvalReport(operating_iou=operating_iou)
    aps, ars = [], []
    for label in classes:
        num_gt = sum(len(v) for (img, lab), v in gt_groups.items() if lab == label)
        images = sorted({img for (img, lab) in det_groups if lab == label}
                        | {img for (img, lab) in gt_groups if lab == label})
        per_iou = {}
        for thr in iou_thresholds:
            scored = []
            for img in images:
                d = det_groups.get((img, label), [])
                g = gt_groups.get((img, label), [])
                matches, counts = match_detections(d, g, thr)
                scored.extend((b.score, m is not None) for b, m in zip(d, matches))
                if thr == operating_iou:
                    report.counts = report.counts + counts
            # stable sort by score keeps per-image order for ties
            scored.sort(key=lambda t: -t[0])
            flags = [t[1] for t in scored]
            ap = average_precision(flags, num_gt)
            per_iou[f"{thr:.2f}"] = ap
            if num_gt:
                aps.append(ap)
                ars.append(sum(flags) / num_gt)
            if thr == operating_iou and flags:
                tp = np.cumsum(flags)
                report.pr_curves[label] = (tp / max(num_gt, 1),
                                           tp / np.arange(1, len(flags) + 1))
        report.ap_per_class[label] = per_iou if num_gt else None

    report.map_coco = float(np.mean(aps)) if aps else 0.0
    valid = [v for v in report.ap_per_class.values() if v]
    report.ap50 = float(np.mean([v["0.50"] for v in valid])) if valid and "0.50" in valid[0] else 0.0
    report.ap75 = float(np.mean([v["0.75"] for v in valid])) if valid and "0.75" in valid[0] else 0.0
    report.ar_max100 = float(np.mean(ars)) if ars else 0.0
    report.precision = precision(report.counts)
    report.recall = recall(report.counts)
    report.accuracy = accuracy(report.counts)
    return report


def coco_map(dets: Sequence[Box], gts: Sequence[Box],
             label_map: Mapping[str, int] | None = None) -> EvalReport:
    classes = sorted(label_map, key=label_map.get) if label_map else None
    return coco_evaluate(dets, gts, classes)
