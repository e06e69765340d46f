"""Two-branch training state, the training step, checkpoints and inference."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ExperimentConfig
from .contrastive import gather_patches, patch_loss, sample_patch_indices
from .model import Discriminator, Generator, ProjectionHeads, lsgan_d_loss, lsgan_g_loss
from .multiscale import (ScaleAttentionHead, extract_crop, fuse, nested_local_crop, plan_crops,
                         scale_attention, stitch)
from .nn import Adam
from .rsmi import RSMIConfig, ts_loss
from .tensor import Tensor, no_grad, resize_bilinear

BRANCHES = ("global", "local")
REPORT_FIELDS = (
    "step", "loss_D_global", "loss_D_local", "loss_G_global", "loss_G_local",
    "hdce_global", "hdce_local", "ts_global", "ts_local", "fuse", "total_G",
)


class TrainingDivergence(FloatingPointError):
    def __init__(self, term: str, step: int, value: float):
        super().__init__(f"non-finite {term} = {value} at step {step}")
        self.term, self.step, self.value = term, step, value


@dataclass
class TrainState:
    cfg: ExperimentConfig
    gens: dict
    heads: dict
    discs: dict
    attention: ScaleAttentionHead
    opt_g: Adam = field(repr=False)
    opt_d: Adam = field(repr=False)
    step: int = 0

    @classmethod
    def create(cls, cfg: ExperimentConfig) -> "TrainState":
        rng = np.random.default_rng([cfg.seed, 7919])
        gens, heads, discs = {}, {}, {}
        for b in BRANCHES:
            g = Generator(cfg.widths, cfg.n_res_blocks, cfg.feature_layers, rng=rng,
                          identity_init=cfg.identity_init)
            gens[b] = g
            heads[b] = ProjectionHeads([g.widths[i] for i in cfg.feature_layers], cfg.embed_dim, rng=rng)
            discs[b] = Discriminator(cfg.disc_width, rng=rng)
        attention = ScaleAttentionHead(cfg.widths[2], cfg.attention_hidden, rng=rng)
        g_params = {}
        for b in BRANCHES:
            g_params.update({f"gen.{b}.{k}": p for k, p in gens[b].named_parameters()})
            g_params.update({f"head.{b}.{k}": p for k, p in heads[b].named_parameters()})
        g_params.update({f"attention.{k}": p for k, p in attention.named_parameters()})
        d_params = {f"disc.{b}.{k}": p for b in BRANCHES for k, p in discs[b].named_parameters()}
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        return cls(cfg, gens, heads, discs, attention,
                   Adam(g_params, cfg.lr, betas), Adam(d_params, cfg.lr, betas))

    def weights(self, branch: str) -> float:
        return float(self.cfg.branch_weights[BRANCHES.index(branch)])

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"param.{k}": p.data.copy() for k, p in self.opt_g.params.items()}
        out.update({f"param.{k}": p.data.copy() for k, p in self.opt_d.params.items()})
        out.update(self.opt_g.state_dict("opt_g"))
        out.update(self.opt_d.state_dict("opt_d"))
        out["meta.step"] = np.array(float(self.step))
        out["meta.seed"] = np.array(float(self.cfg.seed))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from .nn import replace_data

        for opt in (self.opt_g, self.opt_d):
            for k, p in opt.params.items():
                arr = state[f"param.{k}"]
                if arr.shape != p.shape:
                    raise ValueError(f"checkpoint shape mismatch for {k}: {arr.shape} vs {p.shape}")
                replace_data(p, arr)
        self.opt_g.load_state_dict(state, "opt_g")
        self.opt_d.load_state_dict(state, "opt_d")
        self.step = int(state["meta.step"])

    def save(self, path) -> Path:
        return checkpoint.save(path, self.state_dict())

    @classmethod
    def load(cls, cfg: ExperimentConfig, path) -> "TrainState":
        state = cls.create(cfg)
        state.load_state_dict(checkpoint.load(path))
        return state


def _rng(state: TrainState, stream: int) -> np.random.Generator:
    return np.random.default_rng([state.cfg.seed, state.step, stream])


def rsmi_config(cfg: ExperimentConfig) -> RSMIConfig:
    return RSMIConfig(ridge=cfg.ridge, mix=cfg.rho, max_basis=cfg.basis_count)


def patch_terms(state: TrainState, branch: str, feats_in, feats_out, rng, rng_ts):
    """(contrastive loss, TS loss) between input and output features of one branch."""
    cfg = state.cfg
    heads = state.heads[branch]
    pairs = []
    for i, (f_in, f_out) in enumerate(zip(feats_in, feats_out)):
        h, w = f_in.shape[-2:]
        idx = sample_patch_indices(h, w, min(cfg.patch_count, h * w), rng)
        z = heads.embed(i, gather_patches(f_in, idx)).detach()
        w_hat = heads.embed(i, gather_patches(f_out, idx))
        pairs.append((z, w_hat))
    nce = None
    if cfg.lambda_hdce:
        n_scale = cfg.hdce_n_scale or None
        terms = [patch_loss(w_hat, z, cfg.contrastive, cfg.tau, cfg.beta, n_scale) for z, w_hat in pairs]
        nce = sum(terms[1:], terms[0]) / len(terms)
    ts = ts_loss(pairs, rsmi_config(cfg), rng_ts) if cfg.lambda_ts else None
    return nce, ts


def _check(report: dict, step: int) -> None:
    for k, v in report.items():
        if k != "step" and not np.isfinite(v):
            raise TrainingDivergence(k, step, v)


def training_step(state: TrainState, source_image, target_image) -> tuple[TrainState, dict]:
    """One discriminator update followed by one generator update.

    Crops, patch locations and derangements are drawn from streams seeded by
    ``(seed, step)``, so a step is reproducible from a checkpoint. ``state``
    is updated in place and returned.
    """
    cfg = state.cfg
    src = source_image.data if isinstance(source_image, Tensor) else np.asarray(source_image, dtype=np.float64)
    tgt = target_image.data if isinstance(target_image, Tensor) else np.asarray(target_image, dtype=np.float64)
    rng_crop, rng_patch, rng_ts = _rng(state, 1), _rng(state, 2), _rng(state, 3)
    H, W = src.shape[-2:]

    g_spec = plan_crops(H, W, cfg.global_size, rng=rng_crop, mode="global", coverage=cfg.global_coverage)[0]
    l_spec = nested_local_crop(g_spec, cfg.local_size, rng_crop)
    tg_spec = plan_crops(*tgt.shape[-2:], cfg.global_size, rng=rng_crop, mode="global",
                         coverage=cfg.global_coverage)[0]
    tl_spec = plan_crops(*tgt.shape[-2:], cfg.local_size, rng=rng_crop, mode="local")[0]
    x = {"global": extract_crop(src, g_spec), "local": extract_crop(src, l_spec)}
    y = {"global": extract_crop(tgt, tg_spec), "local": extract_crop(tgt, tl_spec)}
    x = {b: v.reshape((1,) + v.shape) for b, v in x.items()}
    y = {b: v.reshape((1,) + v.shape) for b, v in y.items()}

    fake, feats_in, bottleneck = {}, {}, {}
    for b in BRANCHES:
        fake[b], feats_in[b], bottleneck[b] = state.gens[b].forward_full(x[b])

    report = {k: 0.0 for k in REPORT_FIELDS}
    report["step"] = state.step

    # discriminator update
    state.opt_d.zero_grad()
    loss_d_total = None
    for b in BRANCHES:
        wb = state.weights(b)
        if not wb:
            continue
        loss_d = lsgan_d_loss(state.discs[b](y[b]), state.discs[b](fake[b].detach()))
        report[f"loss_D_{b}"] = loss_d.item()
        loss_d_total = loss_d * wb if loss_d_total is None else loss_d_total + loss_d * wb
    _check(report, state.step)
    if loss_d_total is not None:
        loss_d_total.backward()
        state.opt_d.step()

    # generator update
    state.opt_g.zero_grad()
    total = None

    def add(term, weight):
        nonlocal total
        if term is None or not weight:
            return
        total = term * weight if total is None else total + term * weight

    for b in BRANCHES:
        wb = state.weights(b)
        if not wb:
            continue
        loss_g = lsgan_g_loss(state.discs[b](fake[b]))
        report[f"loss_G_{b}"] = loss_g.item()
        add(loss_g, wb * cfg.lambda_gan)
        if cfg.lambda_hdce or cfg.lambda_ts:
            _, feats_out = state.gens[b].encode(fake[b])
            nce, ts = patch_terms(state, b, feats_in[b], feats_out, rng_patch, rng_ts)
            if nce is not None:
                report[f"hdce_{b}"] = nce.item()
                add(nce, wb * cfg.lambda_hdce)
            if ts is not None:
                report[f"ts_{b}"] = ts.item()
                add(ts, wb * cfg.lambda_ts)

    fuse_weight = cfg.lambda_fuse * state.weights("global") * state.weights("local")
    if fuse_weight:
        fused = fused_local_region(state, fake["global"], fake["local"], bottleneck["global"], g_spec, l_spec)
        loss_fuse = lsgan_g_loss(state.discs["local"](fused))
        report["fuse"] = loss_fuse.item()
        add(loss_fuse, fuse_weight)

    if total is not None:
        report["total_G"] = total.item()
    _check(report, state.step)
    if total is not None:
        total.backward()
        state.opt_g.step()
    state.step += 1
    return state, report


def fused_local_region(state: TrainState, fake_global: Tensor, fake_local: Tensor,
                       bottleneck: Tensor, g_spec, l_spec) -> Tensor:
    """Fuse the local prediction with the co-located part of the global prediction."""
    up = resize_bilinear(fake_global, g_spec.height, g_spec.width)
    smap = scale_attention(state.attention, bottleneck, g_spec.height, g_spec.width)
    t, l = l_spec.top - g_spec.top, l_spec.left - g_spec.left
    region = up[..., t:t + l_spec.height, l:l + l_spec.width]
    mask = smap.mask[t:t + l_spec.height, l:l + l_spec.width]
    return fuse(fake_local, region, mask)


def full_image_inference(state: TrainState, image) -> Tensor:
    """Tile the local branch, run the global branch on the resized image, fuse."""
    cfg = state.cfg
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    H, W = img.shape[-2:]
    with no_grad():
        tiles = []
        for spec in plan_crops(H, W, cfg.local_size, cfg.tile_stride, mode="tiling"):
            crop = extract_crop(img, spec)
            pred, _ = state.gens["local"](crop)
            tiles.append((spec, pred.reshape(pred.shape[1:])))
        local = stitch(tiles, H, W)
        small = resize_bilinear(Tensor(img), cfg.global_size, cfg.global_size)
        pred_g, _, bottleneck = state.gens["global"].forward_full(small)
        glob = resize_bilinear(pred_g.reshape(pred_g.shape[1:]), H, W)
        smap = scale_attention(state.attention, bottleneck, H, W)
        return fuse(local, glob, smap)


def sample_pair(cfg: ExperimentConfig, step: int, n_source: int, n_target: int) -> tuple[int, int]:
    rng = np.random.default_rng([cfg.seed, step, 0])
    return int(rng.integers(n_source)), int(rng.integers(n_target))


def _csv_rows(path: Path, before_step: int) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(float(r["step"])) < before_step]


def train(cfg: ExperimentConfig, dataset, out_dir=None, state: TrainState | None = None,
          log_every: int = 0, stop_at: int | None = None) -> TrainState:
    """Run ``cfg.steps`` training steps, writing checkpoints and a loss CSV.

    Passing a resumed ``state`` continues from its step; CSV rows at or after
    that step are dropped first so the log matches an uninterrupted run.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.yaml")
    state = state or TrainState.create(cfg)
    log_path = out / "losses.csv"
    rows = _csv_rows(log_path, state.step)
    fields = list(REPORT_FIELDS) + ["wall_time"]
    with log_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
        t0 = time.perf_counter()
        end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
        while state.step < end:
            si, ti = sample_pair(cfg, state.step, len(dataset.source), len(dataset.target))
            state, report = training_step(state, dataset.source[si], dataset.target[ti])
            writer.writerow({**{k: repr(v) if isinstance(v, float) else v for k, v in report.items()},
                             "wall_time": f"{time.perf_counter() - t0:.3f}"})
            if state.step % cfg.checkpoint_every == 0:
                fh.flush()
                state.save(out / f"ckpt_{state.step:06d}.bin")
            if log_every and state.step % log_every == 0:
                print(f"step {state.step}: total_G={report['total_G']:.4f} "
                      f"ts={report['ts_global']:.4f}/{report['ts_local']:.4f}", flush=True)
    state.save(out / "final.bin")
    return state
