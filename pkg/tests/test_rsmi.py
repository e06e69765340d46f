import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fd import check
from oracles import derangements, gaussian_pairs, rpe_divergence
from semst.rsmi import (
    DegenerateInputError,
    EmbeddingBatch,
    KernelModel,
    RSMIConfig,
    estimate_rsmi,
    fit_rsmi,
    make_product_samples,
    median_bandwidth,
    random_derangement,
    rsmi_value,
    ts_loss,
)
from semst.tensor import Tensor, normalize


def unit_rows(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# -- product samples --------------------------------------------------------

def test_derangement_of_two_is_the_swap():
    for seed in range(5):
        assert random_derangement(2, np.random.default_rng(seed)).tolist() == [1, 0]


def test_derangement_of_three_is_a_seeded_three_cycle():
    cycles = {(1, 2, 0), (2, 0, 1)}
    for seed in range(10):
        a = tuple(random_derangement(3, np.random.default_rng(seed)))
        assert a in cycles
        assert a == tuple(random_derangement(3, np.random.default_rng(seed)))


def test_derangements_of_four_are_uniform():
    rng = np.random.default_rng(0)
    counts = Counter(tuple(random_derangement(4, rng)) for _ in range(10_000))
    assert set(counts) == set(derangements(4))
    assert len(counts) == 9
    for c in counts.values():
        assert abs(c / 10_000 - 1 / 9) < 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_product_samples_have_no_fixed_points(n, seed):
    z = np.arange(n, dtype=float)[:, None]
    _, wp, perm = make_product_samples(z, z * 10, np.random.default_rng(seed))
    assert sorted(perm.tolist()) == list(range(n))
    assert np.all(perm != np.arange(n))
    np.testing.assert_array_equal(wp.data[:, 0], 10 * perm)


def test_derangement_needs_two():
    with pytest.raises(ValueError):
        random_derangement(1, np.random.default_rng(0))


# -- embedding batch --------------------------------------------------------

def test_embedding_batch_contract():
    EmbeddingBatch(unit_rows(3, 4, 0), normalized=True)
    with pytest.raises(ValueError):
        EmbeddingBatch(unit_rows(3, 4, 0) * 1.01, normalized=True)
    with pytest.raises(ValueError):
        EmbeddingBatch(unit_rows(1, 4, 0))


# -- fit / value ------------------------------------------------------------

def test_value_with_zero_alpha_is_minus_one():
    m = KernelModel(np.zeros((2, 1)), Tensor(np.zeros((2, 1))), 1.0, Tensor(1.0),
                    alpha=np.zeros(2), h_vec=np.array([0.3, 0.2]), H_mat=np.eye(2))
    assert float(rsmi_value(m).data) == -1.0


def test_value_self_consistent_solve():
    h = np.array([0.3, -0.4, 1.2])
    m = KernelModel(np.zeros((3, 1)), Tensor(np.zeros((3, 1))), 1.0, Tensor(1.0),
                    alpha=h, h_vec=h, H_mat=np.eye(3), ridge=0.0)
    assert float(rsmi_value(m).data) == pytest.approx(h @ h - 1.0, abs=1e-15)


def test_joint_equal_to_product_gives_zero():
    rng = np.random.default_rng(1)
    z, w = gaussian_pairs(0.7, 200, rng)
    model = fit_rsmi((z, w), (z, w), RSMIConfig(), rng)
    assert abs(float(rsmi_value(model).data)) < 1e-6


def test_kernel_model_invariants():
    rng = np.random.default_rng(2)
    z, w = gaussian_pairs(0.5, 300, rng)
    zp, wp, _ = make_product_samples(z, w, rng)
    cfg = RSMIConfig()
    model = fit_rsmi((z, w), (zp, wp), cfg, rng)
    A = model.H_mat.data + np.diag(model.ridge * model.penalty)
    np.testing.assert_allclose(A, A.T, atol=1e-14)
    assert np.linalg.eigvalsh(A).min() > 0
    h = model.h_vec.data
    assert np.linalg.norm(A @ model.alpha.data - h) < 1e-8 * np.linalg.norm(h)
    assert model.penalty[0] == 0.0 and np.all(model.penalty[1:] == 1.0)
    assert len(model.alpha.data) == min(300, cfg.max_basis) + 1


def test_independent_pair_near_zero():
    z, w = gaussian_pairs(0.0, 512, np.random.default_rng(3))
    assert abs(float(estimate_rsmi(z, w, rng=np.random.default_rng(4)).data)) < 0.05


def test_strong_correlation_matches_quadrature():
    est = [float(estimate_rsmi(*gaussian_pairs(0.9, 1024, np.random.default_rng(s)),
                               rng=np.random.default_rng(100 + s)).data) for s in range(10)]
    oracle = rpe_divergence(0.9, 0.5)
    assert abs(np.mean(est) - oracle) <= 0.15 * oracle


def test_quadrature_oracle_sanity():
    # independent case vanishes; the relative divergence is bounded by 1/mix - 1
    assert abs(rpe_divergence(0.0, 0.5)) < 1e-8
    assert 0 < rpe_divergence(0.5, 0.5) < rpe_divergence(0.9, 0.5) < 1.0


def test_order_invariance():
    rng = np.random.default_rng(5)
    z, w = gaussian_pairs(0.6, 128, rng)
    zp, wp, _ = make_product_samples(z, w, np.random.default_rng(6))
    base = float(rsmi_value(fit_rsmi((z, w), (zp, wp), rng=np.random.default_rng(7))).data)
    p = rng.permutation(128)
    q = rng.permutation(128)
    moved = float(rsmi_value(fit_rsmi((z[p], w[p]), (zp.data[q], wp.data[q]),
                                      rng=np.random.default_rng(7))).data)
    # centers are indexed draws, so compare with the full basis to remove subsampling
    full = RSMIConfig(max_basis=128)
    a = float(rsmi_value(fit_rsmi((z, w), (zp, wp), full, np.random.default_rng(7))).data)
    b = float(rsmi_value(fit_rsmi((z[p], w[p]), (zp.data[q], wp.data[q]), full,
                                  np.random.default_rng(7))).data)
    assert a == pytest.approx(b, abs=1e-9)
    assert np.isfinite(base) and np.isfinite(moved)


def test_deterministic_given_seed():
    z, w = gaussian_pairs(0.3, 200, np.random.default_rng(8))
    a = estimate_rsmi(z, w, rng=np.random.default_rng(9)).data
    b = estimate_rsmi(z, w, rng=np.random.default_rng(9)).data
    assert a == b


def test_median_bandwidth_and_degenerate_input():
    x = np.array([[0.0], [1.0], [3.0]])
    # positive pairwise distances 1, 2, 3
    assert float(median_bandwidth(x).data) == 2.0
    with pytest.raises(DegenerateInputError):
        median_bandwidth(np.ones((4, 2)))


# -- ts_loss ----------------------------------------------------------------

def test_identity_pairing_minimizes_ts_loss():
    z = unit_rows(4, 3, 0)
    rng = lambda: np.random.default_rng(0)
    losses = {p: float(ts_loss([(EmbeddingBatch(z, normalized=True),
                                 EmbeddingBatch(z[list(p)], normalized=True))], rng=rng()).data)
              for p in itertools.permutations(range(4))}
    assert losses[(0, 1, 2, 3)] <= min(losses.values())


def test_two_independent_layers_near_zero():
    rng = np.random.default_rng(10)
    layers = [(EmbeddingBatch(rng.normal(size=(512, 2))), EmbeddingBatch(rng.normal(size=(512, 2))))
              for _ in range(2)]
    assert abs(float(ts_loss(layers, rng=np.random.default_rng(11)).data)) < 0.05


def test_z_side_receives_no_gradient():
    z = Tensor(unit_rows(16, 4, 1), requires_grad=True)
    w = Tensor(unit_rows(16, 4, 2), requires_grad=True)
    ts_loss([(EmbeddingBatch(z), EmbeddingBatch(w))], rng=np.random.default_rng(0)).backward()
    assert z.grad is None or np.all(z.grad == 0)
    assert np.any(w.grad != 0)


def test_ts_loss_rejects_mismatched_layers():
    with pytest.raises(ValueError):
        ts_loss([(EmbeddingBatch(np.ones((4, 2)) * np.arange(4)[:, None]),
                  EmbeddingBatch(np.ones((5, 2)) * np.arange(5)[:, None]))])


@pytest.mark.parametrize("seed", range(5))
def test_ts_loss_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    z = unit_rows(12, 3, 50 + seed)
    raw = rng.normal(size=(12, 3))
    build = lambda t: ts_loss([(EmbeddingBatch(z), EmbeddingBatch(normalize(t, axis=1)))],
                              RSMIConfig(max_basis=8), np.random.default_rng(seed))
    assert check(build, raw) < 1e-4
