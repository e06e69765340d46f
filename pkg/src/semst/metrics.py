"""Image and label-map metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class LabelMap:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError(f"label map must be H x W, got {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("label map must hold integer class ids")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"class ids must lie in [0, {self.num_classes})")


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, value: float, count: int = 1) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"metric {name} is not finite: {value}")
        self.values[name] = value
        self.counts[name] = int(count)

    def to_json(self) -> str:
        return json.dumps({"values": self.values, "counts": self.counts}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        raw = json.loads(text)
        return cls(dict(raw["values"]), {k: int(v) for k, v in raw["counts"].items()})


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def delta_accuracy(pred_rgb, gt_rgb, delta: float) -> float:
    """Fraction of pixels whose largest channel deviation is strictly below ``delta``.

    Inputs are (..., H, W, 3) arrays on the 8-bit scale.
    """
    pred = np.asarray(pred_rgb, dtype=np.float64)
    gt = np.asarray(gt_rgb, dtype=np.float64)
    _same_shape(pred, gt)
    dev = np.abs(pred - gt).max(axis=-1)
    return float((dev < delta).mean())


def rmse(pred_rgb, gt_rgb) -> float:
    pred = np.asarray(pred_rgb, dtype=np.float64)
    gt = np.asarray(gt_rgb, dtype=np.float64)
    _same_shape(pred, gt)
    return float(np.sqrt(np.mean((pred - gt) ** 2)))


def confusion_matrix(pred: LabelMap, gt: LabelMap) -> np.ndarray:
    """Rows are ground-truth classes, columns predictions."""
    if pred.num_classes != gt.num_classes:
        raise ValueError(f"class-count mismatch: {pred.num_classes} vs {gt.num_classes}")
    _same_shape(pred.labels, gt.labels)
    c = gt.num_classes
    idx = gt.labels.reshape(-1).astype(np.int64) * c + pred.labels.reshape(-1).astype(np.int64)
    return np.bincount(idx, minlength=c * c).reshape(c, c)


def seg_metrics(pred: LabelMap, gt: LabelMap) -> tuple[float, float, float]:
    """(pixel accuracy, mean per-class recall over gt classes, mean IoU over present classes)."""
    cm = confusion_matrix(pred, gt).astype(np.float64)
    tp = np.diag(cm)
    gt_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    pixel_acc = tp.sum() / cm.sum()
    in_gt = gt_count > 0
    class_acc = float(np.mean(tp[in_gt] / gt_count[in_gt]))
    union = gt_count + pred_count - tp
    present = union > 0
    mean_iou = float(np.mean(tp[present] / union[present]))
    return float(pixel_acc), class_acc, mean_iou


def histogram_divergence(pred: LabelMap, ref_distribution) -> float:
    """Half the L1 distance between predicted class frequencies and a reference."""
    ref = np.asarray(ref_distribution, dtype=np.float64)
    if ref.shape != (pred.num_classes,):
        raise ValueError(f"reference needs {pred.num_classes} entries, got {ref.shape}")
    if abs(ref.sum() - 1.0) > 1e-6 or np.any(ref < 0):
        raise ValueError("reference distribution must be non-negative and sum to 1")
    freq = np.bincount(pred.labels.reshape(-1), minlength=pred.num_classes) / pred.labels.size
    return float(0.5 * np.abs(freq - ref).sum())


def frequency_divergence(p, q) -> float:
    """Half L1 distance between two class-frequency vectors."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    for v in (p, q):
        if abs(v.sum() - 1.0) > 1e-6 or np.any(v < 0):
            raise ValueError("distributions must be non-negative and sum to 1")
    return float(0.5 * np.abs(p - q).sum())


def image_report(pred_rgb, gt_rgb, pred_labels: LabelMap | None = None,
                 gt_labels: LabelMap | None = None, ref_distribution=None) -> MetricReport:
    """All applicable metrics for one image pair."""
    rep = MetricReport()
    n = int(np.asarray(pred_rgb).shape[0] * np.asarray(pred_rgb).shape[1])
    rep.add("rmse", rmse(pred_rgb, gt_rgb), n)
    rep.add("acc_delta1", delta_accuracy(pred_rgb, gt_rgb, 5), n)
    rep.add("acc_delta2", delta_accuracy(pred_rgb, gt_rgb, 10), n)
    if pred_labels is not None and gt_labels is not None:
        pa, ca, miou = seg_metrics(pred_labels, gt_labels)
        rep.add("pixel_acc", pa, n)
        rep.add("class_acc", ca, n)
        rep.add("mean_iou", miou, n)
        if ref_distribution is not None:
            rep.add("hist_divergence", histogram_divergence(pred_labels, ref_distribution), n)
    return rep


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Count-weighted mean of each metric over reports that carry it."""
    out = MetricReport()
    names = sorted({k for r in reports for k in r.values})
    for name in names:
        vals = [(r.values[name], r.counts[name]) for r in reports if name in r.values]
        total = sum(c for _, c in vals)
        out.add(name, sum(v * c for v, c in vals) / total, total)
    return out


def write_reports(per_image: dict[str, MetricReport], out_dir) -> MetricReport:
    """``metrics.csv`` (one row per image plus ``__aggregate__``) and JSON files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate(list(per_image.values()))
    names = sorted(agg.values)
    with (out / "metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image"] + names)
        for key, rep in per_image.items():
            writer.writerow([key] + [repr(rep.values[n]) if n in rep.values else "" for n in names])
        writer.writerow(["__aggregate__"] + [repr(agg.values[n]) for n in names])
    per = {k: json.loads(r.to_json()) for k, r in per_image.items()}
    (out / "metrics_per_image.json").write_text(json.dumps(per, indent=2, sort_keys=True) + "\n")
    (out / "metrics.json").write_text(agg.to_json() + "\n")
    return agg
