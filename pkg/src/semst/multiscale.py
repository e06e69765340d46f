"""Global/local crops, overlap-averaged stitching and scale-map fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .nn import Conv2d, Module
from .tensor import Tensor, pad2d, relu, resize_bilinear, sigmoid


class CoverageError(ValueError):
    """Some output pixels received no crop prediction."""


@dataclass(frozen=True)
class CropSpec:
    top: int
    bottom: int
    left: int
    right: int
    target_h: int
    target_w: int

    def __post_init__(self):
        if self.bottom <= self.top or self.right <= self.left:
            raise ValueError(f"empty crop rectangle {self.rect}")
        if self.top < 0 or self.left < 0:
            raise ValueError(f"crop rectangle {self.rect} starts outside the image")
        if self.target_h <= 0 or self.target_w <= 0:
            raise ValueError("resize targets must be positive")

    @property
    def rect(self) -> tuple[int, int, int, int]:
        return self.top, self.bottom, self.left, self.right

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def width(self) -> int:
        return self.right - self.left

    def check_bounds(self, image_h: int, image_w: int) -> None:
        if self.bottom > image_h or self.right > image_w:
            raise ValueError(f"crop {self.rect} exceeds image {image_h}x{image_w}")


def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def _grid_starts(extent: int, crop: int, stride: int) -> list[int]:
    starts = list(range(0, extent - crop + 1, stride))
    if starts[-1] + crop < extent:
        starts.append(extent - crop)
    return starts


def plan_crops(image_h: int, image_w: int, crop_size, stride=None, rng=None,
               mode: str = "tiling", coverage: float = 0.5) -> list[CropSpec]:
    """Crop rectangles for one image.

    ``global``: one random rectangle spanning at least ``coverage`` of each
    dimension, resized to ``crop_size``. ``local``: one random rectangle of
    exactly ``crop_size``. ``tiling``: a regular grid with ``stride`` whose
    last row/column is snapped to the image edge.
    """
    ch, cw = _pair(crop_size)
    if mode != "global" and (ch > image_h or cw > image_w):
        raise ValueError(f"crop {ch}x{cw} larger than image {image_h}x{image_w}")
    if mode == "tiling":
        sh, sw = _pair(stride if stride is not None else (max(ch // 2, 1), max(cw // 2, 1)))
        if sh < 1 or sw < 1:
            raise ValueError("stride must be >= 1")
        plan = [CropSpec(t, t + ch, l, l + cw, ch, cw)
                for t in _grid_starts(image_h, ch, sh) for l in _grid_starts(image_w, cw, sw)]
        uncovered = coverage_map(plan, image_h, image_w) == 0
        if uncovered.any():
            raise CoverageError(_describe_gap(uncovered))
        return plan
    rng = rng if rng is not None else np.random.default_rng()
    if mode == "local":
        t = int(rng.integers(0, image_h - ch + 1))
        l = int(rng.integers(0, image_w - cw + 1))
        return [CropSpec(t, t + ch, l, l + cw, ch, cw)]
    if mode == "global":
        if not 0.0 < coverage <= 1.0:
            raise ValueError("coverage must lie in (0, 1]")
        scale = rng.uniform(coverage, 1.0)
        gh = min(image_h, max(int(np.ceil(coverage * image_h)), int(round(scale * image_h))))
        gw = min(image_w, max(int(np.ceil(coverage * image_w)), int(round(scale * image_w))))
        t = int(rng.integers(0, image_h - gh + 1))
        l = int(rng.integers(0, image_w - gw + 1))
        return [CropSpec(t, t + gh, l, l + gw, ch, cw)]
    raise ValueError(f"unknown crop mode {mode!r}")


def nested_local_crop(outer: CropSpec, crop_size, rng) -> CropSpec:
    """Random local crop of ``crop_size`` lying inside ``outer``'s rectangle."""
    ch, cw = _pair(crop_size)
    if ch > outer.height or cw > outer.width:
        raise ValueError("local crop does not fit inside the global crop")
    t = outer.top + int(rng.integers(0, outer.height - ch + 1))
    l = outer.left + int(rng.integers(0, outer.width - cw + 1))
    return CropSpec(t, t + ch, l, l + cw, ch, cw)


def extract_crop(image: Tensor, spec: CropSpec) -> Tensor:
    """``T(image[top:bottom, left:right]; target_h, target_w)`` on the last two axes."""
    img = image if isinstance(image, Tensor) else Tensor(image)
    spec.check_bounds(*img.shape[-2:])
    region = img[..., spec.top:spec.bottom, spec.left:spec.right]
    return resize_bilinear(region, spec.target_h, spec.target_w)


def coverage_map(plan: Iterable[CropSpec], image_h: int, image_w: int) -> np.ndarray:
    counts = np.zeros((image_h, image_w))
    for spec in plan:
        counts[spec.top:spec.bottom, spec.left:spec.right] += 1
    return counts


def _describe_gap(uncovered: np.ndarray) -> str:
    rows, cols = np.nonzero(uncovered)
    return (f"{rows.size} uncovered pixels within rows {rows.min()}..{rows.max()}, "
            f"cols {cols.min()}..{cols.max()}")


class StitchAccumulator:
    """Running sums for overlap-averaged stitching."""

    def __init__(self, channels: int, image_h: int, image_w: int):
        self.shape = (channels, image_h, image_w)
        self.value_sum: Tensor = Tensor(np.zeros(self.shape))
        self.weight_sum = np.zeros((image_h, image_w))

    def add(self, spec: CropSpec, prediction: Tensor) -> None:
        c, H, W = self.shape
        spec.check_bounds(H, W)
        pred = prediction if isinstance(prediction, Tensor) else Tensor(prediction)
        if pred.ndim == 4:
            pred = pred.reshape(pred.shape[1:])
        if pred.shape[0] != c:
            raise ValueError(f"prediction has {pred.shape[0]} channels, expected {c}")
        pred = resize_bilinear(pred, spec.height, spec.width)
        placed = pad2d(pred, (spec.top, H - spec.bottom, spec.left, W - spec.right))
        self.value_sum = self.value_sum + placed
        self.weight_sum[spec.top:spec.bottom, spec.left:spec.right] += 1.0

    def result(self) -> Tensor:
        uncovered = self.weight_sum <= 0
        if uncovered.any():
            raise CoverageError(_describe_gap(uncovered))
        return self.value_sum / self.weight_sum


def stitch(predictions: Sequence[tuple[CropSpec, Tensor]], image_h: int, image_w: int) -> Tensor:
    """Average crop predictions (inverse-resized to their rectangles) into one image."""
    if not predictions:
        raise CoverageError("no predictions to stitch")
    first = predictions[0][1]
    channels = first.shape[-3]
    acc = StitchAccumulator(channels, image_h, image_w)
    for spec, pred in predictions:
        acc.add(spec, pred)
    return acc.result()


@dataclass
class ScaleMap:
    mask: Tensor

    def __post_init__(self):
        if not isinstance(self.mask, Tensor):
            self.mask = Tensor(self.mask)
        m = self.mask.data
        if np.any(m < 0.0) or np.any(m > 1.0):
            raise ValueError("scale map entries must lie in [0, 1]")


def fuse(local_pred, global_pred, scale_map) -> Tensor:
    """``M * local + (1 - M) * global`` elementwise."""
    loc = local_pred if isinstance(local_pred, Tensor) else Tensor(local_pred)
    glo = global_pred if isinstance(global_pred, Tensor) else Tensor(global_pred)
    m = scale_map.mask if isinstance(scale_map, ScaleMap) else scale_map
    m = m if isinstance(m, Tensor) else Tensor(m)
    if loc.shape != glo.shape:
        raise ValueError(f"local {loc.shape} and global {glo.shape} predictions differ in shape")
    if loc.shape[-2:] != m.shape[-2:]:
        raise ValueError(f"scale map {m.shape} not aligned with predictions {loc.shape}")
    return m * loc + (1.0 - m) * glo


class ScaleAttentionHead(Module):
    """conv3x3 -> ReLU -> conv1x1 -> sigmoid, one output channel."""

    def __init__(self, in_channels: int, hidden: int = 16, rng=None, zero: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = Conv2d(in_channels, hidden, 3, pad=1, rng=rng, zero=zero)
        self.conv2 = Conv2d(hidden, 1, 1, rng=rng, zero=zero, gain=1.0)

    def __call__(self, features: Tensor) -> Tensor:
        return sigmoid(self.conv2(relu(self.conv1(features))))


def scale_attention(head: ScaleAttentionHead, global_features: Tensor,
                    target_h: int, target_w: int) -> ScaleMap:
    """Per-pixel trust in the local branch, upsampled from feature resolution."""
    feats = global_features if isinstance(global_features, Tensor) else Tensor(global_features)
    if feats.ndim == 3:
        feats = feats.reshape((1,) + feats.shape)
    m = head(feats)
    m = resize_bilinear(m, target_h, target_w)
    return ScaleMap(m.reshape(m.shape[-2:]) if m.shape[0] == 1 else m.reshape(m.shape[0], 1, target_h, target_w))
