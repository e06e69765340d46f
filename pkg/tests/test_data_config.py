import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semst import data
from semst.config import ExperimentConfig


def tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


SMALL = dict(image_size=32, n_source=4, n_target=4, n_test=2)


# -- dataset ----------------------------------------------------------------

def test_generation_is_byte_stable(tmp_path):
    cfg = ExperimentConfig(**SMALL, data_seed=7)
    data.write_dataset(data.generate_from_config(cfg), tmp_path / "a")
    data.write_dataset(data.generate_from_config(cfg), tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    other = ExperimentConfig(**SMALL, data_seed=8)
    data.write_dataset(data.generate_from_config(other), tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_manifest_matches_pixel_counts_and_round_trips(tmp_path):
    ds = data.generate_from_config(ExperimentConfig(**SMALL))
    root = data.write_dataset(ds, tmp_path)
    manifest = json.loads((root / "manifest.json").read_text())
    back = data.read_dataset(root)
    for split, attr in (("source", "source_masks"), ("target", "target_masks"), ("test", "test_masks")):
        masks = getattr(back, attr)
        counts = np.bincount(masks.reshape(-1), minlength=3) / masks.size
        np.testing.assert_allclose(manifest["class_frequencies"][split], counts, atol=1e-6)
        np.testing.assert_array_equal(getattr(back, split), getattr(ds, split))
        np.testing.assert_array_equal(masks, getattr(ds, attr))


def test_realized_frequencies_track_request():
    src_req, tgt_req = [0.6, 0.2, 0.2], [0.75, 0.2, 0.05]
    rng = np.random.default_rng(0)
    for req in (src_req, tgt_req):
        masks = np.stack([data.make_layout(64, req, rng) for _ in range(100)])
        np.testing.assert_allclose(data.class_frequencies(masks), req, atol=0.03)


def test_domains_have_mismatched_frequencies():
    ds = data.generate_from_config(ExperimentConfig(n_source=20, n_target=20, n_test=2))
    m = ds.manifest()["class_frequencies"]
    assert m["source"][2] > m["target"][2] + 0.15


def test_classifier_recovers_target_layouts():
    ds = data.generate_from_config(ExperimentConfig(**SMALL))
    for img, mask in zip(ds.target, ds.target_masks):
        labels = data.classify_pixels(data.to_unit(img))
        # textures are zero-mean and the 5x5 window blurs only at boundaries
        assert (labels == mask).mean() > 0.9


def test_png_round_trip_is_lossless(tmp_path):
    img = data.to_signed(data.from_uint8(np.random.default_rng(0).integers(0, 256, (8, 6, 3)).astype(np.uint8)))
    data.save_png(tmp_path / "x.png", img)
    np.testing.assert_array_equal(data.load_png(tmp_path / "x.png"), img)


# -- config -----------------------------------------------------------------

def test_config_round_trip_default(tmp_path):
    cfg = ExperimentConfig()
    assert ExperimentConfig.loads(cfg.dumps()) == cfg
    path = cfg.save(tmp_path / "c.yaml")
    assert ExperimentConfig.load(path) == cfg
    text = path.read_text()
    assert "# " in text and "lambda_ts: 2.0" in text


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 10, allow_nan=False), st.floats(1e-4, 1, allow_nan=False), st.integers(1, 5000),
       st.sampled_from(["hdce", "dce", "infonce"]), st.text(alphabet="abc/_-. #:", min_size=1, max_size=12))
def test_config_round_trip_random(lam, tau, steps, kind, out):
    cfg = ExperimentConfig(lambda_ts=lam, tau=tau, steps=steps, contrastive=kind, out_dir=out)
    assert ExperimentConfig.loads(cfg.dumps()) == cfg


@pytest.mark.parametrize("bad", [dict(tau=0.0), dict(steps=0), dict(rho=1.5), dict(contrastive="x"),
                                 dict(source_class_freqs=[0.5, 0.5, 0.5]), dict(local_size=30),
                                 dict(tile_stride=64)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_config_rejects_unknown_keys():
    with pytest.raises(KeyError):
        ExperimentConfig.loads("not_a_field: 3\n")
