"""Report figures written next to the JSON/JSONL outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}

CLASS_COLORS = {"Mask": "#00c800", "NoMask": "#dc0000"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_pr_curves(report, path):
    """Precision-recall curve per class at the operating IoU threshold."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        for label, (rec, prec) in sorted(report.pr_curves.items()):
            ap = (report.ap_per_class.get(label) or {}).get(f"{report.operating_iou:.2f}", 0.0)
            ax.step(np.r_[0.0, rec], np.r_[prec[:1], prec] if len(prec) else [0.0], where="post",
                    color=CLASS_COLORS.get(label), label=f"{label} (AP={ap:.3f})")
        ax.set_xlim(0, 1.01)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"IoU {report.operating_iou:.2f}, mAP@[.5:.95] = {report.map_coco:.3f}")
        if report.pr_curves:
            ax.legend(loc="lower left", frameon=False)
        return _save(fig, path)


def plot_latency(report, path):
    """Per-frame latency histogram with median and p95 markers."""
    lat = np.asarray(report.latencies_ms)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.hist(lat, bins=min(30, max(5, len(lat) // 2)), color="0.55")
        for key, style in (("median", "-"), ("p95", "--")):
            v = report.stages["total"][key]
            ax.axvline(v, color="k", ls=style, lw=1, label=f"{key} {v:.1f} ms")
        ax.set_xlabel("frame latency (ms)")
        ax.set_ylabel("frames")
        ax.set_title(f"{report.frames} frames, {report.threads} workers, {report.fps:.2f} fps")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_box_areas(stats: dict, path):
    areas = np.asarray(stats.get("areas", []), dtype=np.float64)
    with plt.rc_context(RC):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.5, 3.0))
        names = list(stats["objects_per_class"])
        ax0.bar(names, [stats["objects_per_class"][n] for n in names],
                color=[CLASS_COLORS.get(n, "0.5") for n in names])
        ax0.set_ylabel("objects")
        if areas.size:
            ax1.hist(np.sqrt(areas), bins=20, color="0.55")
            for v in np.sqrt(stats["area_deciles"][1:-1]):
                ax1.axvline(v, color="k", lw=0.5, alpha=0.5)
        ax1.set_xlabel("sqrt(box area) (px)")
        ax1.set_ylabel("boxes")
        return _save(fig, path)
