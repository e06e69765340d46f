"""Relative squared-loss mutual information (rSMI) and the TS loss.

The estimator fits the density ratio

    r(z, w) = p(z) p(w) / (rho * p(z) p(w) + (1 - rho) * p(z, w))

with a linear model over Gaussian product kernels and reports
``2 a.h - a.H a - 1`` at the fitted coefficients. Product-of-marginals
samples come from a derangement of the w-index, so no joint pair leaks in.

Everything on the w side is built from ``Tensor`` ops (bandwidth, centers,
kernel design, Gram statistics, the Cholesky solve), so the value is
differentiable in the output embeddings. The z side is treated as data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .tensor import Tensor, concat, exp, matmul, solve_spd, sqrt


class DegenerateInputError(ValueError):
    """All pairwise distances in a marginal are zero."""


@dataclass
class EmbeddingBatch:
    vectors: Tensor
    layer_index: int = 0
    normalized: bool = False

    def __post_init__(self):
        if not isinstance(self.vectors, Tensor):
            self.vectors = Tensor(self.vectors)
        if self.vectors.ndim != 2:
            raise ValueError(f"embedding batch must be N x d, got {self.vectors.shape}")
        if len(self.vectors) < 2:
            raise ValueError("embedding batch needs N >= 2")
        if self.normalized:
            norms = np.linalg.norm(self.vectors.data, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("batch flagged normalized but row norms deviate from 1")

    def __len__(self):
        return len(self.vectors)


# (input batch, output batch) per selected encoder layer
LayerPairSet = Sequence[tuple[EmbeddingBatch, EmbeddingBatch]]


@dataclass
class RSMIConfig:
    ridge: float = 1e-3
    mix: float = 0.5
    max_basis: int = 64
    constant_basis: bool = True

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must lie in [0, 1]")
        if self.max_basis < 1:
            raise ValueError("max_basis must be >= 1")


@dataclass
class KernelModel:
    centers_z: np.ndarray
    centers_w: Tensor
    sigma_z: float
    sigma_w: Tensor
    alpha: Tensor
    h_vec: Tensor
    H_mat: Tensor
    ridge: float = 1e-3
    mix: float = 0.5
    penalty: np.ndarray | None = field(default=None, repr=False)


def random_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of ``range(n)`` without fixed points (rejection sampling)."""
    if n < 2:
        raise ValueError("a derangement needs n >= 2")
    ident = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == ident):
            return perm


def make_product_samples(z, w, rng: np.random.Generator):
    """Pair each ``z_i`` with ``w_{pi(i)}`` for a random derangement ``pi``.

    Returns ``(z, w_permuted, pi)``.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    w = w if isinstance(w, Tensor) else Tensor(w)
    if len(z) != len(w):
        raise ValueError("joint samples must pair up one-to-one")
    perm = random_derangement(len(z), rng)
    return z, w[perm], perm


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.maximum(
        (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T, 0.0
    )


def _median_pair(x: np.ndarray) -> list[tuple[int, int]]:
    """Index pairs whose distance is the median positive pairwise distance."""
    n = len(x)
    iu, ju = np.triu_indices(n, 1)
    d = pdist(x)
    pos = np.flatnonzero(d > 0)
    if pos.size == 0:
        raise DegenerateInputError("all pairwise distances are zero; bandwidth undefined")
    m = pos.size
    ranks = [(m - 1) // 2] if m % 2 else [m // 2 - 1, m // 2]
    part = np.argpartition(d[pos], ranks)
    return [(int(iu[pos[part[r]]]), int(ju[pos[part[r]]])) for r in ranks]


def median_bandwidth(x) -> Tensor:
    """Median pairwise distance among positive distances, differentiable in ``x``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    pairs = _median_pair(x.data)
    total = None
    for i, j in pairs:
        diff = x[i] - x[j]
        dist = sqrt((diff * diff).sum())
        total = dist if total is None else total + dist
    return total / len(pairs)


def gaussian_kernel(x, centers, sigma) -> Tensor:
    """``exp(-|x - c|^2 / (2 sigma^2))`` for every row/center pair."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    centers = centers if isinstance(centers, Tensor) else Tensor(centers)
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
    sq = (x * x).sum(axis=1, keepdims=True) + (centers * centers).sum(axis=1).reshape(1, -1) \
        - 2.0 * matmul(x, centers.T)
    return exp(sq * (-0.5) / (sigma * sigma))


def _as_2d(x) -> Tensor:
    if isinstance(x, EmbeddingBatch):
        x = x.vectors
    x = x if isinstance(x, Tensor) else Tensor(x)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def fit_rsmi(joint, product, cfg: RSMIConfig | None = None,
             rng: np.random.Generator | None = None) -> KernelModel:
    """Least-squares fit of the relative density ratio.

    ``joint`` and ``product`` are ``(z, w)`` pairs of equal sample count.
    Basis centers are drawn uniformly without replacement from the product
    samples; bandwidths use the median heuristic per marginal on the joint
    samples. With ``cfg.constant_basis`` a constant function joins the
    design and is left out of the ridge penalty.
    """
    cfg = cfg or RSMIConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    zj, wj = (_as_2d(v) for v in joint)
    zp, wp = (_as_2d(v) for v in product)
    n = len(zj)
    if len(wj) != n or len(zp) != n or len(wp) != n:
        raise ValueError("joint and product sample counts must be equal")
    if n < 2:
        raise ValueError("rSMI needs at least two samples")

    zj_np, zp_np = zj.data, zp.data
    sigma_z = float(median_bandwidth(zj_np).data)
    sigma_w = median_bandwidth(wj)

    m = min(n, cfg.max_basis)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    cz = zp_np[idx]
    cw = wp[idx]

    kz_j = np.exp(-_sq_dists(zj_np, cz) / (2.0 * sigma_z**2))
    kz_p = np.exp(-_sq_dists(zp_np, cz) / (2.0 * sigma_z**2))
    phi_j = gaussian_kernel(wj, cw, sigma_w) * Tensor(kz_j)
    phi_p = gaussian_kernel(wp, cw, sigma_w) * Tensor(kz_p)

    penalty = np.ones(m)
    if cfg.constant_basis:
        ones = Tensor(np.ones((n, 1)))
        phi_j = concat([ones, phi_j], axis=1)
        phi_p = concat([ones, phi_p], axis=1)
        penalty = np.concatenate([[0.0], penalty])

    h_vec = phi_p.mean(axis=0)
    H_mat = matmul(phi_p.T, phi_p) * (cfg.mix / n) + matmul(phi_j.T, phi_j) * ((1.0 - cfg.mix) / n)
    A = H_mat + Tensor(np.diag(cfg.ridge * penalty))
    alpha = solve_spd(A, h_vec)
    return KernelModel(
        centers_z=cz, centers_w=cw, sigma_z=sigma_z, sigma_w=sigma_w,
        alpha=alpha, h_vec=h_vec, H_mat=H_mat, ridge=cfg.ridge, mix=cfg.mix, penalty=penalty,
    )


def rsmi_value(model: KernelModel) -> Tensor:
    """``2 a.h - a.H a - 1`` at the fitted coefficients."""
    a = model.alpha if isinstance(model.alpha, Tensor) else Tensor(model.alpha)
    h = model.h_vec if isinstance(model.h_vec, Tensor) else Tensor(model.h_vec)
    H = model.H_mat if isinstance(model.H_mat, Tensor) else Tensor(model.H_mat)
    col = a.reshape(-1, 1)
    quad = matmul(matmul(col.T, H), col).reshape(())
    return (a * h).sum() * 2.0 - quad - 1.0


def estimate_rsmi(z, w, cfg: RSMIConfig | None = None,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Derange, fit and evaluate in one call."""
    rng = rng if rng is not None else np.random.default_rng(0)
    z, w = _as_2d(z), _as_2d(w)
    zp, wp, _ = make_product_samples(z, w, rng)
    return rsmi_value(fit_rsmi((z, w), (zp, wp), cfg, rng))


def ts_loss(layers: LayerPairSet, cfg: RSMIConfig | None = None,
            rng: np.random.Generator | None = None) -> Tensor:
    """Negative mean rSMI between input and output embeddings over layers.

    Input-side embeddings are detached: only the output side gets gradient.
    """
    if not layers:
        raise ValueError("ts_loss needs at least one layer pair")
    rng = rng if rng is not None else np.random.default_rng(0)
    total = None
    for z, w in layers:
        z = _as_2d(z).detach()
        w = _as_2d(w)
        if z.shape != w.shape:
            raise ValueError(f"paired batches must agree in N and d, got {z.shape} vs {w.shape}")
        val = estimate_rsmi(z, w, cfg, rng)
        total = val if total is None else total + val
    return -(total / len(layers))
