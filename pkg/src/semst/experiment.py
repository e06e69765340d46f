"""Evaluation and ablation drivers shared by the CLI and the notebooks."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import data
from .config import ExperimentConfig
from .metrics import LabelMap, MetricReport, image_report, seg_metrics
from .train import TrainState, full_image_inference, train

SEG_FIELDS = ("pixel_acc", "class_acc", "mean_iou")


def translate(state: TrainState, images: np.ndarray) -> np.ndarray:
    """Full-image inference on a stack of (3, H, W) images in [-1, 1]."""
    return np.stack([full_image_inference(state, img).data for img in images])


def semantic_labels(images_signed: np.ndarray) -> np.ndarray:
    """Label translated images with the target-domain color classifier."""
    return np.stack([data.classify_pixels(data.to_unit(img)) for img in images_signed])


def semantic_scores(translated: np.ndarray, masks: np.ndarray) -> dict[str, float]:
    """Mean per-image (pixel acc, class acc, mean IoU) of the recovered layouts."""
    rows = [seg_metrics(LabelMap(lab, data.NUM_CLASSES), LabelMap(m, data.NUM_CLASSES))
            for lab, m in zip(semantic_labels(translated), masks)]
    return dict(zip(SEG_FIELDS, np.mean(rows, axis=0).tolist()))


def evaluate_images(pred: dict[str, np.ndarray], ref: dict[str, np.ndarray],
                    labels: dict[str, np.ndarray] | None = None,
                    ref_distribution=None) -> dict[str, MetricReport]:
    """Per-image reports; images are (3, H, W) in [-1, 1], compared on the 8-bit scale."""
    out = {}
    for name, img in pred.items():
        if name not in ref:
            raise FileNotFoundError(f"no reference image for {name}")
        p8 = data.to_uint8(data.to_unit(img)).astype(np.float64)
        r8 = data.to_uint8(data.to_unit(ref[name])).astype(np.float64)
        pl = gl = None
        if labels is not None and name in labels:
            pl = LabelMap(data.classify_pixels(data.to_unit(img)), data.NUM_CLASSES)
            gl = LabelMap(labels[name], data.NUM_CLASSES)
        out[name] = image_report(p8, r8, pl, gl, ref_distribution)
    return out


def ablation_runs(lambdas: Sequence[float], seeds: Sequence[int]) -> list[tuple[float, int]]:
    return [(float(lam), int(s)) for lam in lambdas for s in seeds]


def run_ablation(cfg: ExperimentConfig, lambdas: Iterable[float], seeds: Iterable[int],
                 out_dir, dataset: data.SyntheticDataset | None = None) -> list[dict]:
    """Train one run per (lambda_ts, seed) and score semantic consistency on the test split."""
    out = Path(out_dir)
    ds = dataset if dataset is not None else data.generate_from_config(cfg)
    rows = []
    for lam, seed in ablation_runs(list(lambdas), list(seeds)):
        run_cfg = cfg.replace(lambda_ts=lam, seed=seed, out_dir=str(out / f"ts{lam:g}_seed{seed}"))
        state = train(run_cfg, ds, run_cfg.out_dir)
        scores = semantic_scores(translate(state, ds.test), ds.test_masks)
        rows.append({"lambda_ts": lam, "seed": seed, **scores})
    write_ablation_table(rows, out)
    return rows


def summarize(rows: list[dict]) -> dict[float, dict[str, float]]:
    means = {}
    for lam in sorted({r["lambda_ts"] for r in rows}):
        sel = [r for r in rows if r["lambda_ts"] == lam]
        means[lam] = {k: float(np.mean([r[k] for r in sel])) for k in SEG_FIELDS}
    return means


def write_ablation_table(rows: list[dict], out_dir) -> Path:
    """``ablation.csv`` (metric rows x lambda columns, per seed and mean) and ``ablation.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lams = sorted({r["lambda_ts"] for r in rows})
    seeds = sorted({r["seed"] for r in rows})
    means = summarize(rows)
    lookup = {(r["lambda_ts"], r["seed"]): r for r in rows}
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "seed"] + [f"lambda_ts={lam:g}" for lam in lams])
        for metric in SEG_FIELDS:
            for s in seeds:
                w.writerow([metric, s] + [f"{lookup[(lam, s)][metric]:.4f}" if (lam, s) in lookup else ""
                                          for lam in lams])
            w.writerow([metric, "mean"] + [f"{means[lam][metric]:.4f}" for lam in lams])
    payload = {"runs": rows, "means": {f"{lam:g}": v for lam, v in means.items()}}
    (out / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return out / "ablation.csv"
