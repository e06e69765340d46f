import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fd import check
from semst.multiscale import (
    CoverageError,
    CropSpec,
    ScaleAttentionHead,
    ScaleMap,
    coverage_map,
    extract_crop,
    fuse,
    nested_local_crop,
    plan_crops,
    scale_attention,
    stitch,
)
from semst.tensor import Tensor


def test_tiling_without_overlap():
    plan = plan_crops(512, 512, 256, 256, mode="tiling")
    assert len(plan) == 4
    assert coverage_map(plan, 512, 512).max() == 1


def test_tiling_half_stride():
    plan = plan_crops(512, 512, 256, 128, mode="tiling")
    assert len(plan) == 9
    cov = coverage_map(plan, 512, 512)
    assert cov.min() >= 1 and cov.max() == 4
    assert cov[256, 256] == 4 and cov[0, 0] == 1


def test_global_crop_is_seeded_and_large_enough():
    a = plan_crops(64, 48, 32, rng=np.random.default_rng(3), mode="global", coverage=0.5)
    b = plan_crops(64, 48, 32, rng=np.random.default_rng(3), mode="global", coverage=0.5)
    assert a == b
    spec = a[0]
    assert spec.height >= 32 and spec.width >= 24
    assert (spec.target_h, spec.target_w) == (32, 32)


def test_nested_local_crop_inside_global():
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = plan_crops(64, 64, 32, rng=rng, mode="global")[0]
        l = nested_local_crop(g, 16, rng)
        assert g.top <= l.top and l.bottom <= g.bottom and g.left <= l.left and l.right <= g.right


def test_cropspec_validation():
    with pytest.raises(ValueError):
        CropSpec(4, 4, 0, 3, 2, 2)
    with pytest.raises(ValueError):
        CropSpec(-1, 3, 0, 3, 2, 2)
    with pytest.raises(ValueError):
        extract_crop(np.zeros((1, 4, 4)), CropSpec(0, 5, 0, 4, 5, 4))


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 80), st.integers(4, 80), st.data())
def test_tiling_covers_every_pixel(h, w, draw):
    ch = draw.draw(st.integers(1, h))
    cw = draw.draw(st.integers(1, w))
    sh = draw.draw(st.integers(1, ch))
    sw = draw.draw(st.integers(1, cw))
    plan = plan_crops(h, w, (ch, cw), (sh, sw), mode="tiling")
    assert coverage_map(plan, h, w).min() >= 1


def test_stride_beyond_crop_raises_coverage_error():
    with pytest.raises(CoverageError):
        plan_crops(64, 64, 8, 12, mode="tiling")


def test_stitch_with_gap_raises():
    spec = CropSpec(0, 4, 0, 4, 4, 4)
    with pytest.raises(CoverageError):
        stitch([(spec, np.zeros((1, 4, 4)))], 6, 6)


# -- stitch -----------------------------------------------------------------

def test_stitch_single_full_crop_is_identity():
    img = np.random.default_rng(0).normal(size=(3, 10, 7))
    out = stitch([(CropSpec(0, 10, 0, 7, 10, 7), img)], 10, 7).data
    np.testing.assert_array_equal(out, img)


def test_stitch_two_overlapping_crops_average():
    spec = CropSpec(0, 5, 0, 5, 5, 5)
    out = stitch([(spec, np.full((1, 5, 5), 1.5)), (spec, np.full((1, 5, 5), 4.0))], 5, 5).data
    np.testing.assert_array_equal(out, np.full((1, 5, 5), 2.75))


def test_stitch_constant_nine_tiles():
    plan = plan_crops(64, 64, 32, 16, mode="tiling")
    assert len(plan) == 9
    out = stitch([(s, np.full((2, 32, 32), 0.3)) for s in plan], 64, 64).data
    assert np.all(out == 0.3)


@pytest.mark.parametrize("seed", range(5))
def test_stitch_reconstructs_from_restrictions(seed):
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(3, 40, 36))
    plan = plan_crops(40, 36, (16, 12), (5, 7), mode="tiling")
    preds = [(s, img[:, s.top:s.bottom, s.left:s.right]) for s in plan]
    assert np.abs(stitch(preds, 40, 36).data - img).max() <= 1e-12


def test_stitch_inverse_resizes_predictions():
    # predictions at a lower resolution are resized back onto their rectangle
    spec = CropSpec(0, 8, 0, 8, 4, 4)
    out = stitch([(spec, np.full((1, 4, 4), 2.0))], 8, 8).data
    np.testing.assert_allclose(out, 2.0, atol=1e-15)


# -- fuse / attention -------------------------------------------------------

def test_fuse_extremes_are_exact():
    rng = np.random.default_rng(1)
    loc, glo = rng.normal(size=(3, 6, 6)), rng.normal(size=(3, 6, 6))
    assert np.array_equal(fuse(loc, glo, ScaleMap(np.ones((6, 6)))).data, loc)
    assert np.array_equal(fuse(loc, glo, ScaleMap(np.zeros((6, 6)))).data, glo)
    half = fuse(np.full((1, 3, 3), 2.0), np.full((1, 3, 3), 4.0), ScaleMap(np.full((3, 3), 0.5))).data
    assert np.all(half == 3.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_fuse_stays_between_branches(seed):
    rng = np.random.default_rng(seed)
    loc, glo = rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 5, 4))
    out = fuse(loc, glo, ScaleMap(rng.uniform(size=(5, 4)))).data
    assert np.all(out >= np.minimum(loc, glo) - 1e-15)
    assert np.all(out <= np.maximum(loc, glo) + 1e-15)


def test_scale_map_range_checked():
    with pytest.raises(ValueError):
        ScaleMap(np.full((2, 2), 1.2))
    with pytest.raises(ValueError):
        fuse(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)), ScaleMap(np.zeros((2, 2))))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100))
def test_attention_output_in_unit_interval(seed, scale):
    rng = np.random.default_rng(seed)
    head = ScaleAttentionHead(4, 6, rng=rng)
    m = scale_attention(head, scale * rng.normal(size=(4, 5, 5)), 17, 13).mask.data
    assert m.shape == (17, 13)
    assert np.all((m >= 0) & (m <= 1))


def test_zero_head_gives_half():
    head = ScaleAttentionHead(4, 6, zero=True)
    m = scale_attention(head, np.random.default_rng(0).normal(size=(4, 3, 3)), 8, 8).mask.data
    assert np.all(m == 0.5)


def test_gradient_reaches_attention_head():
    rng = np.random.default_rng(2)
    head = ScaleAttentionHead(4, 6, rng=rng)
    loc, glo = Tensor(rng.normal(size=(3, 8, 8))), Tensor(rng.normal(size=(3, 8, 8)))
    out = fuse(loc, glo, scale_attention(head, rng.normal(size=(4, 4, 4)), 8, 8))
    (out * Tensor(rng.normal(size=out.shape))).sum().backward()
    assert all(np.any(p.grad != 0) for p in head.parameters())


def fused_forward(features, head, loc, glo):
    return fuse(loc, glo, scale_attention(head, features, *loc.shape[-2:]))


@pytest.mark.parametrize("seed", range(3))
def test_fused_forward_gradients_fd(seed):
    rng = np.random.default_rng(seed)
    head = ScaleAttentionHead(3, 4, rng=rng)
    feats = rng.normal(size=(3, 3, 3))
    loc, glo = rng.normal(size=(2, 6, 6)), rng.normal(size=(2, 6, 6))
    R = Tensor(rng.normal(size=(2, 6, 6)))
    assert check(lambda t: (fused_forward(t, head, Tensor(loc), Tensor(glo)) * R).sum(), feats) < 1e-4
    assert check(lambda t: (fused_forward(feats, head, t, Tensor(glo)) * R).sum(), loc) < 1e-4
    assert check(lambda t: (fused_forward(feats, head, Tensor(loc), t) * R).sum(), glo) < 1e-4
