"""Patch contrastive losses: InfoNCE, decoupled (DCE) and hard-negative DCE.

Queries are output-image patch embeddings, positives the input-image patch at
the same location, negatives other input patches. All rows are unit vectors,
so inner products are cosine similarities.

hDCE replaces the DCE denominator by ``N * E`` where ``E`` sums the negative
exponentials reweighted by von Mises-Fisher importance weights
``exp(beta * z.z_neg)`` normalized to mean one over the negatives. At
``beta = 0`` the weights are all one and ``hdce = dce + log N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, concat, logsumexp, matmul, normalize, softmax


class ContractViolation(ValueError):
    """Batch does not satisfy the loss preconditions."""


_NORM_TOL = 1e-6
_MASKED = -np.inf


def _check_unit(x: Tensor, what: str) -> None:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(np.abs(norms - 1.0) > _NORM_TOL):
        raise ContractViolation(f"{what} rows must be unit-normalized (max |norm-1| = "
                                f"{np.max(np.abs(norms - 1.0)):.2e})")


@dataclass
class ContrastiveBatch:
    """Explicit batch: ``negatives`` has shape (N, K, d)."""

    queries: Tensor
    positives: Tensor
    negatives: Tensor
    tau: float = 0.07
    beta: float = 0.5
    n_scale: float | None = None

    def __post_init__(self):
        for name in ("queries", "positives", "negatives"):
            v = getattr(self, name)
            if not isinstance(v, Tensor):
                setattr(self, name, Tensor(v))
        q, p, n = self.queries, self.positives, self.negatives
        if q.ndim != 2 or q.shape != p.shape:
            raise ContractViolation(f"queries {q.shape} and positives {p.shape} must both be N x d")
        if n.ndim != 3 or n.shape[0] != q.shape[0] or n.shape[2] != q.shape[1]:
            raise ContractViolation(f"negatives must be N x K x d, got {n.shape}")
        if n.shape[1] < 1:
            raise ContractViolation("need at least one negative per query")
        if self.tau <= 0:
            raise ContractViolation("tau must be > 0")
        if self.beta < 0:
            raise ContractViolation("beta must be >= 0")
        _check_unit(q, "query")
        _check_unit(p, "positive")
        _check_unit(n, "negative")

    @property
    def num_negatives(self) -> int:
        return self.negatives.shape[1]

    def logits(self):
        q = self.queries
        pos = (q * self.positives).sum(axis=1) / self.tau
        neg = matmul(self.negatives, q.reshape(q.shape[0], -1, 1)).reshape(q.shape[0], -1) / self.tau
        sim = matmul(self.negatives, self.positives.reshape(q.shape[0], -1, 1)).reshape(q.shape[0], -1)
        return pos, neg, sim


def _nce(pos: Tensor, neg: Tensor) -> Tensor:
    both = concat([pos.reshape(-1, 1), neg], axis=1)
    return (logsumexp(both, axis=1) - pos).mean()


def _dce(pos: Tensor, neg: Tensor) -> Tensor:
    return (logsumexp(neg, axis=1) - pos).mean()


def _hdce(pos: Tensor, neg: Tensor, sim: Tensor, beta: float, n_scale: float, mask=None) -> Tensor:
    tilt = sim * beta
    if mask is not None:
        tilt = tilt + mask
    k = neg.shape[1] if mask is None else (neg.shape[1] - 1)
    # log sum_j e^{beta c_j} e^{s_j} - log mean_k e^{beta c_k}
    log_e = logsumexp(tilt + neg, axis=1) - logsumexp(tilt, axis=1) + np.log(k)
    return (np.log(n_scale) + log_e - pos).mean()


def info_nce(batch: ContrastiveBatch) -> Tensor:
    pos, neg, _ = batch.logits()
    return _nce(pos, neg)


def dce(batch: ContrastiveBatch) -> Tensor:
    pos, neg, _ = batch.logits()
    return _dce(pos, neg)


def hdce(batch: ContrastiveBatch) -> Tensor:
    pos, neg, sim = batch.logits()
    n_scale = batch.n_scale if batch.n_scale is not None else batch.num_negatives
    return _hdce(pos, neg, sim, batch.beta, n_scale)


def vmf_weights(positive, negatives, beta: float) -> Tensor:
    """Normalized importance weights ``exp(beta z.z_j) / sum_k exp(beta z.z_k)``.

    ``positive`` is (d,) with ``negatives`` (K, d), or (N, d) with (N, K, d).
    """
    if beta < 0:
        raise ContractViolation("beta must be >= 0")
    z = positive if isinstance(positive, Tensor) else Tensor(positive)
    neg = negatives if isinstance(negatives, Tensor) else Tensor(negatives)
    if z.ndim == 1:
        sim = matmul(neg, z.reshape(-1, 1)).reshape(-1)
        return softmax(sim * beta, axis=0)
    sim = matmul(neg, z.reshape(z.shape[0], -1, 1)).reshape(z.shape[0], -1)
    return softmax(sim * beta, axis=1)


def internal_negatives(positives) -> Tensor:
    """(N, N-1, d) tensor: for row i every positive except row i."""
    p = positives if isinstance(positives, Tensor) else Tensor(positives)
    n = len(p)
    idx = np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=int)
    return p[idx]


def patch_loss(queries: Tensor, positives: Tensor, kind: str = "hdce", tau: float = 0.07,
               beta: float = 0.5, n_scale: float | None = None) -> Tensor:
    """Contrastive loss with internal negatives, computed from similarity matrices.

    Equivalent to building ``ContrastiveBatch(queries, positives,
    internal_negatives(positives))`` but without materializing the (N, N-1, d)
    negative tensor.
    """
    n = len(queries)
    if n < 2:
        raise ContractViolation("internal negatives need at least two patches")
    if tau <= 0 or beta < 0:
        raise ContractViolation("need tau > 0 and beta >= 0")
    mask = np.where(np.eye(n, dtype=bool), _MASKED, 0.0)
    logits = matmul(queries, positives.T) / tau
    pos = (queries * positives).sum(axis=1) / tau
    neg = logits + mask
    if kind == "infonce":
        # the diagonal of ``logits`` is the positive, so no concat needed
        return (logsumexp(logits, axis=1) - pos).mean()
    if kind == "dce":
        return _dce(pos, neg)
    if kind == "hdce":
        sim = matmul(positives, positives.T)
        return _hdce(pos, neg, sim, beta, n_scale if n_scale is not None else n - 1, mask=mask)
    raise ValueError(f"unknown contrastive loss {kind!r}")


# -- patch sampling -----------------------------------------------------------

def sample_patch_indices(h: int, w: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct flat spatial indices into an ``h x w`` grid."""
    total = h * w
    if count > total:
        raise ValueError(f"cannot sample {count} patches from a {h}x{w} map")
    if count == total:
        return np.arange(total)
    return np.sort(rng.choice(total, size=count, replace=False))


def gather_patches(feature_map: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of a C x H x W (or 1 x C x H x W) map at flat spatial ``indices``."""
    fm = feature_map if isinstance(feature_map, Tensor) else Tensor(feature_map)
    if fm.ndim == 4:
        if fm.shape[0] != 1:
            raise ValueError("gather_patches takes a single feature map")
        fm = fm.reshape(fm.shape[1:])
    c = fm.shape[0]
    return fm.reshape(c, -1).T[np.asarray(indices)]


def sample_patches(feature_map: Tensor, count: int, rng: np.random.Generator,
                   head: Callable[[Tensor], Tensor] | None = None, layer_index: int = 0,
                   indices: np.ndarray | None = None):
    """Sample ``count`` spatial locations, project through ``head`` and normalize.

    Pass the returned indices back in (``indices=``) for the paired map so
    input and output patches correspond.
    """
    from .rsmi import EmbeddingBatch

    fm = feature_map if isinstance(feature_map, Tensor) else Tensor(feature_map)
    h, w = fm.shape[-2:]
    if indices is None:
        indices = sample_patch_indices(h, w, count, rng)
    rows = gather_patches(fm, indices)
    if head is not None:
        rows = head(rows)
    return indices, EmbeddingBatch(normalize(rows, axis=1), layer_index=layer_index, normalized=True)
