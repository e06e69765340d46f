"""Semantically consistent two-branch image translation at toy scale.

A numpy reverse-mode autodiff core drives a global/local translator trained
with patchwise contrastive losses and an rSMI texture-structure term.
"""

from .config import ExperimentConfig
from .contrastive import ContrastiveBatch, dce, hdce, info_nce, patch_loss, vmf_weights
from .metrics import LabelMap, MetricReport, delta_accuracy, histogram_divergence, rmse, seg_metrics
from .multiscale import CoverageError, CropSpec, ScaleMap, fuse, plan_crops, stitch
from .rsmi import EmbeddingBatch, RSMIConfig, estimate_rsmi, ts_loss
from .tensor import Tensor, no_grad
from .train import TrainState, full_image_inference, train

__version__ = "0.1.0"

__all__ = [
    "ContrastiveBatch",
    "CoverageError",
    "CropSpec",
    "EmbeddingBatch",
    "ExperimentConfig",
    "LabelMap",
    "MetricReport",
    "RSMIConfig",
    "ScaleMap",
    "Tensor",
    "TrainState",
    "dce",
    "delta_accuracy",
    "estimate_rsmi",
    "full_image_inference",
    "fuse",
    "hdce",
    "histogram_divergence",
    "info_nce",
    "no_grad",
    "patch_loss",
    "plan_crops",
    "rmse",
    "seg_metrics",
    "stitch",
    "train",
    "ts_loss",
    "vmf_weights",
]
