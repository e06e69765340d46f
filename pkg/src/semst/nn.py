"""Small layer toolkit on top of :mod:`semst.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, conv2d, matmul, sqrt


class Module:
    """Parameter container; parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            replace_data(p, arr)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for k, item in value.items():
            yield from _walk(item, f"{name}.{k}")


def replace_data(p: Tensor, new: np.ndarray) -> None:
    """Swap a leaf parameter's buffer (the optimizer's only write path)."""
    arr = np.array(new, dtype=np.float64)
    arr.flags.writeable = False
    p.data = arr


def param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, stride=1, pad=0, rng=None, zero=False, gain=np.sqrt(2.0)):
        rng = rng if rng is not None else np.random.default_rng(0)
        std = gain / np.sqrt(c_in * k * k)
        w = np.zeros((c_out, c_in, k, k)) if zero else rng.normal(0.0, std, (c_out, c_in, k, k))
        self.weight = param(w)
        self.bias = param(np.zeros(c_out))
        self.stride, self.pad = stride, pad

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, n_in, n_out, rng=None, gain=np.sqrt(2.0)):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = param(rng.normal(0.0, gain / np.sqrt(n_in), (n_in, n_out)))
        self.bias = param(np.zeros(n_out))

    def __call__(self, x):
        return matmul(x, self.weight) + self.bias


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes (no affine)."""
    mu = x.mean(axis=(2, 3), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    return xc / sqrt(var + eps)


class Adam:
    """Adam with bias correction; moments live in plain arrays keyed by name."""

    def __init__(self, named_params: dict[str, Tensor], lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in self.params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            replace_data(p, p.data - upd)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array(float(self.t))}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k].copy()
            out[f"{prefix}.v.{k}"] = self.v[k].copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str) -> None:
        self.t = int(state[f"{prefix}.t"])
        for k in self.params:
            self.m[k] = np.array(state[f"{prefix}.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"{prefix}.v.{k}"], dtype=np.float64)
