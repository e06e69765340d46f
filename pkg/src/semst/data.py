"""Synthetic two-domain dataset with known semantic layouts.

Classes: 0 background, 1 disk, 2 stripe. Source images paint each class a
flat color; target images paint class-specific procedural textures over a
shifted palette. The two domains are generated with different class
frequencies, so a translator that matches target statistics is tempted to
repaint source regions as the wrong class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

CLASS_NAMES = ("background", "disk", "stripe")
NUM_CLASSES = len(CLASS_NAMES)

SOURCE_PALETTE = np.array([
    [0.55, 0.55, 0.55],
    [0.85, 0.25, 0.25],
    [0.25, 0.35, 0.85],
])
TARGET_PALETTE = np.array([
    [0.30, 0.55, 0.30],
    [0.90, 0.70, 0.20],
    [0.55, 0.25, 0.65],
])
TARGET_SHIFT = np.array([0.04, -0.03, 0.05])


def make_layout(size: int, freqs, rng: np.random.Generator, max_tries: int = 60) -> np.ndarray:
    """Greedy shape placement until each class nears its requested fraction.

    Stripes go down first, then disks, each painted only over background. A
    shape is kept when it moves the class count closer to its target.
    """
    mask = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    area = size * size
    for cls in (2, 1):
        target = freqs[cls] * area
        count = 0
        for _ in range(max_tries):
            if count >= target:
                break
            if cls == 2:
                width = rng.uniform(3, 8)
                theta = rng.choice([0.0, np.pi / 2, np.pi / 4, -np.pi / 4])
                offset = rng.uniform(-size / 2, size / 2)
                dist = (xx - size / 2) * np.cos(theta) + (yy - size / 2) * np.sin(theta) - offset
                shape = np.abs(dist) < width / 2
                deficit = target - count
                if (shape & (mask == 0)).sum() > deficit:
                    # shorten to a segment whose area roughly fills the deficit
                    along = -(xx - size / 2) * np.sin(theta) + (yy - size / 2) * np.cos(theta)
                    length = max(deficit / width, 2.0)
                    start = rng.uniform(along[shape].min(), max(along[shape].max() - length, along[shape].min()))
                    shape &= (along >= start) & (along < start + length)
            else:
                r = rng.uniform(3, 10)
                cy, cx = rng.uniform(0, size, 2)
                shape = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            new = shape & (mask == 0)
            added = int(new.sum())
            if added and abs(count + added - target) < abs(count - target):
                mask[new] = cls
                count += added
    return mask


def render_source(mask: np.ndarray) -> np.ndarray:
    """Flat-colored RGB image in [0, 1], shape (3, H, W)."""
    return SOURCE_PALETTE[mask].transpose(2, 0, 1).copy()


def render_target(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Textured, color-shifted RGB image in [0, 1], shape (3, H, W)."""
    h, w = mask.shape
    img = TARGET_PALETTE[mask] + TARGET_SHIFT
    yy, xx = np.mgrid[0:h, 0:w]
    # background: smooth blotches
    blotch = ndimage.gaussian_filter(rng.normal(size=(h, w)), 3.0)
    blotch *= 0.06 / (blotch.std() + 1e-12)
    # disk: speckle
    speckle = rng.uniform(-0.08, 0.08, size=(h, w))
    # stripe: fine lines
    phase = rng.uniform(0, 2 * np.pi)
    lines = 0.10 * np.sin(2 * np.pi * (xx + yy) / 4.0 + phase)
    tex = np.select([mask == 0, mask == 1, mask == 2], [blotch, speckle, lines])
    img = img + tex[..., None]
    return np.clip(img, 0.0, 1.0).transpose(2, 0, 1).copy()


def class_prototypes() -> np.ndarray:
    """Mean target color per class (textures are zero-mean), shape (C, 3)."""
    return np.clip(TARGET_PALETTE + TARGET_SHIFT, 0.0, 1.0)


def classify_pixels(image01: np.ndarray, window: int = 5, prototypes=None) -> np.ndarray:
    """Label a (3, H, W) image in [0, 1] by nearest class prototype of its local mean color."""
    protos = class_prototypes() if prototypes is None else np.asarray(prototypes)
    smooth = np.stack([ndimage.uniform_filter(c, size=window, mode="reflect") for c in image01])
    d = ((smooth[None] - protos[:, :, None, None]) ** 2).sum(axis=1)
    return d.argmin(axis=0).astype(np.int64)


def class_frequencies(masks: np.ndarray) -> list[float]:
    counts = np.bincount(np.asarray(masks).reshape(-1), minlength=NUM_CLASSES)[:NUM_CLASSES]
    return (counts / counts.sum()).tolist()


def to_signed(img01: np.ndarray) -> np.ndarray:
    return img01 * 2.0 - 1.0


def to_unit(img_signed: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(img_signed) + 1.0) / 2.0, 0.0, 1.0)


def to_uint8(img01: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    return np.round(np.clip(img01, 0, 1) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64).transpose(2, 0, 1) / 255.0


@dataclass
class SyntheticDataset:
    """Images are (n, 3, H, W) float arrays in [-1, 1]; masks are (n, H, W) ints."""

    source: np.ndarray
    source_masks: np.ndarray
    target: np.ndarray
    target_masks: np.ndarray
    test: np.ndarray
    test_masks: np.ndarray

    def manifest(self) -> dict:
        return {
            "classes": list(CLASS_NAMES),
            "counts": {"source": len(self.source), "target": len(self.target), "test": len(self.test)},
            "class_frequencies": {
                "source": class_frequencies(self.source_masks),
                "target": class_frequencies(self.target_masks),
                "test": class_frequencies(self.test_masks),
            },
        }


def generate(image_size: int, source_freqs, target_freqs, n_source: int, n_target: int,
             n_test: int, seed: int = 0) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    # quantize through 8 bits so in-memory and on-disk datasets agree exactly
    q = lambda img: from_uint8(to_uint8(img))

    def source_set(n):
        masks = np.stack([make_layout(image_size, source_freqs, rng) for _ in range(n)])
        imgs = np.stack([to_signed(q(render_source(m))) for m in masks])
        return imgs, masks.astype(np.int64)

    src, src_m = source_set(n_source)
    tgt_m = np.stack([make_layout(image_size, target_freqs, rng) for _ in range(n_target)])
    tgt = np.stack([to_signed(q(render_target(m, rng))) for m in tgt_m])
    test, test_m = source_set(n_test)
    return SyntheticDataset(src, src_m, tgt, tgt_m.astype(np.int64), test, test_m)


def generate_from_config(cfg) -> SyntheticDataset:
    return generate(cfg.image_size, cfg.source_class_freqs, cfg.target_class_freqs,
                    cfg.n_source, cfg.n_target, cfg.n_test, cfg.data_seed)


_SPLITS = (("source", "source_masks"), ("target", "target_masks"), ("test", "test_masks"))


def save_png(path: Path, img_signed: np.ndarray) -> None:
    Image.fromarray(to_uint8(to_unit(img_signed))).save(path, format="PNG")


def load_png(path: Path) -> np.ndarray:
    """PNG -> (3, H, W) float array in [-1, 1]."""
    return to_signed(from_uint8(np.asarray(Image.open(path).convert("RGB"))))


def write_dataset(ds: SyntheticDataset, root) -> Path:
    root = Path(root)
    files: dict[str, list[dict]] = {}
    for split, mask_attr in _SPLITS:
        (root / split / "images").mkdir(parents=True, exist_ok=True)
        (root / split / "labels").mkdir(parents=True, exist_ok=True)
        entries = []
        for i, (img, mask) in enumerate(zip(getattr(ds, split), getattr(ds, mask_attr))):
            name = f"{i:04d}.png"
            save_png(root / split / "images" / name, img)
            Image.fromarray(mask.astype(np.uint8)).save(root / split / "labels" / name, format="PNG")
            entries.append({"image": f"{split}/images/{name}", "label": f"{split}/labels/{name}"})
        files[split] = entries
    manifest = ds.manifest()
    manifest["files"] = files
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def read_dataset(root) -> SyntheticDataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    arrays = {}
    for split, mask_attr in _SPLITS:
        entries = manifest["files"][split]
        arrays[split] = np.stack([load_png(root / e["image"]) for e in entries])
        arrays[mask_attr] = np.stack([np.asarray(Image.open(root / e["label"])).astype(np.int64) for e in entries])
    return SyntheticDataset(**arrays)
