"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from semst.tensor import Tensor

STEP = 1e-5


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """d f / d x by central differences; ``f`` maps an ndarray to a float."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def analytic_grad(build, x: np.ndarray) -> np.ndarray:
    t = Tensor(x, requires_grad=True)
    build(t).backward()
    return t.grad


def max_rel_err(a: np.ndarray, n: np.ndarray) -> float:
    """Infinity-norm relative error ``max|a - n| / max(|a|_inf, |n|_inf)``.

    Entries many orders below the gradient's scale sit at the central
    difference roundoff floor (about eps * |f| / step), so an elementwise
    ratio there measures noise, not correctness.
    """
    a, n = np.asarray(a), np.asarray(n)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def check(build, x: np.ndarray, step: float = STEP) -> float:
    """Max relative error between analytic and numeric gradients of ``build``."""
    a = analytic_grad(build, x)
    n = numeric_grad(lambda v: float(build(Tensor(v)).data), x, step)
    return max_rel_err(a, n)
