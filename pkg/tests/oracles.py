"""Independent reference computations used by the tests."""

from functools import lru_cache

import numpy as np
from scipy import integrate, stats


@lru_cache(maxsize=None)
def rpe_divergence(corr: float, mix: float = 0.5, lim: float = 9.0) -> float:
    """Relative Pearson divergence of the product of marginals from the joint.

    Standard bivariate Gaussian with correlation ``corr``; the integrand is
    p_prod^2 / (mix p_prod + (1 - mix) p_joint), minus one.
    """
    joint = stats.multivariate_normal([0.0, 0.0], [[1.0, corr], [corr, 1.0]])

    def integrand(y, x):
        pp = stats.norm.pdf(x) * stats.norm.pdf(y)
        pj = joint.pdf([x, y])
        return pp * pp / (mix * pp + (1.0 - mix) * pj)

    val, _ = integrate.dblquad(integrand, -lim, lim, -lim, lim, epsabs=1e-10, epsrel=1e-8)
    return val - 1.0


def gaussian_pairs(corr: float, n: int, rng: np.random.Generator):
    z = rng.normal(size=(n, 1))
    w = corr * z + np.sqrt(1.0 - corr**2) * rng.normal(size=(n, 1))
    return z, w


def derangements(n: int) -> list[tuple[int, ...]]:
    from itertools import permutations

    return [p for p in permutations(range(n)) if all(p[i] != i for i in range(n))]
