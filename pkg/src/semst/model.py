"""Toy two-branch translation networks."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import Conv2d, Linear, Module, instance_norm
from .tensor import Tensor, leaky_relu, normalize, relu, tanh, upsample_nearest

# keeps atanh finite on saturated pixels
_EDGE = 1.0 - 1e-6


class Generator(Module):
    """Encoder (strides 1, 2, 2) -> residual blocks -> mirrored decoder.

    The decoder output is a residual added in tanh-preimage space to the
    input, so with a zero final conv the generator is the identity map.
    ``forward`` also returns the encoder features at ``layers``; layer 0 is
    the input image itself.
    """

    def __init__(self, widths: Sequence[int] = (16, 32, 64), n_res: int = 2,
                 layers: Sequence[int] = (0, 1, 2, 3), rng=None, identity_init: bool = True,
                 channels: int = 3):
        rng = rng if rng is not None else np.random.default_rng(0)
        w1, w2, w3 = widths
        self.enc = [
            Conv2d(channels, w1, 3, stride=1, pad=1, rng=rng),
            Conv2d(w1, w2, 3, stride=2, pad=1, rng=rng),
            Conv2d(w2, w3, 3, stride=2, pad=1, rng=rng),
        ]
        self.res = [(Conv2d(w3, w3, 3, pad=1, rng=rng), Conv2d(w3, w3, 3, pad=1, rng=rng))
                    for _ in range(n_res)]
        self.dec = [
            Conv2d(w3, w2, 3, pad=1, rng=rng),
            Conv2d(w2, w1, 3, pad=1, rng=rng),
        ]
        self.out = Conv2d(w1, channels, 3, pad=1, rng=rng, zero=identity_init, gain=0.1)
        self.layers = tuple(layers)
        self.widths = (channels, w1, w2, w3)
        for layer in self.layers:
            if not 0 <= layer <= 3:
                raise ValueError(f"feature layer {layer} outside 0..3")

    downsample = 4

    def encode(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        feats = [x]
        h = x
        for conv in self.enc:
            h = relu(instance_norm(conv(h)))
            feats.append(h)
        return h, [feats[i] for i in self.layers]

    def __call__(self, x: Tensor):
        return self.forward(x)

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        y, feats, _ = self.forward_full(x)
        return y, feats

    def forward_full(self, x: Tensor) -> tuple[Tensor, list[Tensor], Tensor]:
        """``(output, selected encoder features, encoder bottleneck)``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        if x.shape[-1] % self.downsample or x.shape[-2] % self.downsample:
            raise ValueError(f"image extents {x.shape[-2:]} not divisible by {self.downsample}")
        bottleneck, feats = self.encode(x)
        h = bottleneck
        for c1, c2 in self.res:
            h = h + instance_norm(c2(relu(instance_norm(c1(h)))))
        for conv in self.dec:
            h = relu(instance_norm(conv(upsample_nearest(h, 2))))
        residual = self.out(h)
        base = Tensor(np.arctanh(np.clip(x.data, -_EDGE, _EDGE)))
        return tanh(base + residual), feats, bottleneck


class ProjectionHeads(Module):
    """One two-layer MLP per feature layer, shared by input and output features."""

    def __init__(self, in_channels: Sequence[int], dim: int = 32, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mlps = [(Linear(c, dim, rng=rng), Linear(dim, dim, rng=rng, gain=1.0)) for c in in_channels]
        self.dim = dim

    def __len__(self):
        return len(self.mlps)

    def project(self, i: int, rows: Tensor) -> Tensor:
        l1, l2 = self.mlps[i]
        return l2(relu(l1(rows)))

    def embed(self, i: int, rows: Tensor) -> Tensor:
        return normalize(self.project(i, rows), axis=1)


class Discriminator(Module):
    """PatchGAN-style classifier returning a real-valued score map."""

    def __init__(self, width: int = 16, rng=None, channels: int = 3):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c1 = Conv2d(channels, width, 4, stride=2, pad=1, rng=rng)
        self.c2 = Conv2d(width, 2 * width, 4, stride=2, pad=1, rng=rng)
        self.c3 = Conv2d(2 * width, 1, 3, stride=1, pad=1, rng=rng, gain=1.0)

    def __call__(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.c1(x))
        h = leaky_relu(instance_norm(self.c2(h)))
        return self.c3(h)


def lsgan_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    return ((d_real - 1.0) ** 2).mean() * 0.5 + (d_fake**2).mean() * 0.5


def lsgan_g_loss(d_fake: Tensor) -> Tensor:
    return ((d_fake - 1.0) ** 2).mean() * 0.5


def adversarial_losses(disc, real_batch, fake_batch) -> tuple[Tensor, Tensor]:
    """Least-squares GAN losses ``(loss_D, loss_G)``; ``fake`` is detached for loss_D."""
    real = real_batch if isinstance(real_batch, Tensor) else Tensor(real_batch)
    fake = fake_batch if isinstance(fake_batch, Tensor) else Tensor(fake_batch)
    loss_d = lsgan_d_loss(disc(real), disc(fake.detach()))
    loss_g = lsgan_g_loss(disc(fake))
    return loss_d, loss_g
