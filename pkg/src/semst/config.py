"""Flat experiment configuration with a commented YAML file format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml


def _f(default, comment: str, group: str, positive: bool = False):
    kw = {"default_factory": (lambda d=default: list(d))} if isinstance(default, list) \
        else {"default": default}
    return field(metadata={"comment": comment, "group": group, "positive": positive}, **kw)


@dataclass
class ExperimentConfig:
    # dataset
    image_size: int = _f(64, "square image side in pixels", "dataset", True)
    source_class_freqs: list = _f([0.5, 0.2, 0.3], "source fractions: background, disk, stripe", "dataset")
    target_class_freqs: list = _f([0.75, 0.2, 0.05], "target fractions: background, disk, stripe", "dataset")
    n_source: int = _f(48, "training images in the source domain", "dataset", True)
    n_target: int = _f(48, "training images in the target domain", "dataset", True)
    n_test: int = _f(8, "held-out source images for evaluation", "dataset", True)
    data_seed: int = _f(0, "seed for dataset generation", "dataset")
    # model
    widths: list = _f([16, 32, 64], "encoder feature widths", "model")
    n_res_blocks: int = _f(2, "residual blocks at the bottleneck", "model")
    feature_layers: list = _f([0, 1, 2, 3], "encoder layers used by the patch losses (0 = image)", "model")
    embed_dim: int = _f(32, "projection-head output dimension", "model", True)
    disc_width: int = _f(16, "discriminator base width", "model", True)
    attention_hidden: int = _f(16, "scale-attention hidden channels", "model", True)
    identity_init: bool = _f(True, "zero final generator conv (identity start)", "model")
    # losses
    tau: float = _f(0.07, "contrastive temperature", "loss", True)
    beta: float = _f(0.5, "vMF concentration for hard negatives", "loss")
    hdce_n_scale: int = _f(0, "N multiplier in the hDCE denominator; 0 means K", "loss")
    contrastive: str = _f("hdce", "patch loss: hdce, dce or infonce", "loss")
    patch_count: int = _f(256, "patches sampled per layer (capped at H*W)", "loss", True)
    rho: float = _f(0.5, "relative-divergence mixture ratio", "loss")
    ridge: float = _f(1e-3, "ridge added to the rSMI Gram matrix", "loss")
    basis_count: int = _f(64, "maximum rSMI kernel centers", "loss", True)
    lambda_gan: float = _f(1.0, "adversarial weight", "loss")
    lambda_hdce: float = _f(1.0, "contrastive weight", "loss")
    lambda_ts: float = _f(2.0, "texture-structure (rSMI) weight", "loss")
    lambda_fuse: float = _f(1.0, "adversarial weight on the fused local region", "loss")
    branch_weights: list = _f([1.0, 1.0], "per-branch multipliers: global, local", "loss")
    # crops
    global_size: int = _f(32, "global crop resize target (h_g = w_g)", "crop", True)
    local_size: int = _f(32, "local crop size (h_l = w_l)", "crop", True)
    tile_stride: int = _f(16, "inference tiling stride", "crop", True)
    global_coverage: float = _f(0.5, "minimum global crop span per dimension", "crop", True)
    # optimizer
    lr: float = _f(2e-4, "Adam learning rate", "optim", True)
    adam_beta1: float = _f(0.5, "Adam first-moment decay", "optim")
    adam_beta2: float = _f(0.999, "Adam second-moment decay", "optim")
    # run
    steps: int = _f(2000, "training steps", "run", True)
    checkpoint_every: int = _f(500, "checkpoint cadence in steps", "run", True)
    seed: int = _f(0, "training seed", "run")
    out_dir: str = _f("runs/default", "output directory", "run")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.metadata.get("positive") and not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v!r}")
        for name in ("source_class_freqs", "target_class_freqs"):
            freqs = getattr(self, name)
            if len(freqs) != 3 or any(p < 0 for p in freqs) or not math.isclose(sum(freqs), 1.0, abs_tol=1e-6):
                raise ValueError(f"{name} must be three non-negative fractions summing to 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.beta < 0 or self.ridge < 0:
            raise ValueError("beta and ridge must be non-negative")
        if self.contrastive not in ("hdce", "dce", "infonce"):
            raise ValueError(f"unknown contrastive loss {self.contrastive!r}")
        if self.global_coverage > 1:
            raise ValueError("global_coverage must be <= 1")
        if self.global_size % 4 or self.local_size % 4:
            raise ValueError("crop sizes must be divisible by 4")
        if self.local_size > self.image_size or self.tile_stride > self.local_size:
            raise ValueError("need local_size <= image_size and tile_stride <= local_size")
        if len(self.branch_weights) != 2:
            raise ValueError("branch_weights holds exactly two entries")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            default = known[name].default
            if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            kwargs[name] = value
        return cls(**kwargs)

    def dumps(self) -> str:
        lines = ["# experiment configuration (flat key: value, YAML syntax)"]
        group = None
        for f in fields(self):
            if f.metadata["group"] != group:
                group = f.metadata["group"]
                lines.append(f"\n# --- {group} ---")
            value = yaml.safe_dump(getattr(self, f.name), default_flow_style=True, width=1000)
            value = value.strip().removesuffix("...").strip()
            lines.append(f"{f.name}: {value}  # {f.metadata['comment']}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ValueError("config file must be a flat mapping")
        return cls.from_dict(data)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())
