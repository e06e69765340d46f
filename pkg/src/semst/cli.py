"""Command-line entry point: ``semst <verb> [flags]``.

Failures exit nonzero after printing one line to stderr of the form
``error: {"type": ..., "message": ..., ...}`` (JSON after the prefix).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import data
from .checkpoint import CheckpointError
from .config import ExperimentConfig
from .experiment import evaluate_images, run_ablation, summarize, translate
from .metrics import write_reports
from .train import TrainingDivergence, TrainState, train

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_FAILURE, **extra):
        super().__init__(message)
        self.code, self.extra = code, extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message, EXIT_USAGE, kind="usage")


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def load_config(args, seed_field: str = "seed", out_is_run_dir: bool = True) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes[seed_field] = args.seed
    if out_is_run_dir and getattr(args, "out", None):
        changes["out_dir"] = str(args.out)
    if getattr(args, "steps", None) is not None:
        changes["steps"] = args.steps
    return cfg.replace(**changes) if changes else cfg


def _require_writable(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CLIError(f"output path {path} is not writable: {exc.strerror}", path=str(path)) from exc
    return path


def _read_pngs(folder: Path) -> dict[str, np.ndarray]:
    files = sorted(folder.glob("*.png"))
    if not files:
        raise CLIError(f"no PNG images in {folder}", path=str(folder))
    return {f.name: data.load_png(f) for f in files}


def cmd_generate_data(args) -> dict:
    cfg = load_config(args, seed_field="data_seed", out_is_run_dir=False)
    out = _require_writable(Path(args.out or "data"))
    ds = data.generate_from_config(cfg)
    data.write_dataset(ds, out)
    cfg.save(out / "config.yaml")
    return {"out": str(out), **ds.manifest()["counts"]}


def cmd_train(args) -> dict:
    cfg = load_config(args)
    if args.data and not (Path(args.data) / "manifest.json").exists():
        raise CLIError(f"dataset not found at {args.data}", path=str(args.data))
    out = _require_writable(Path(cfg.out_dir))
    if args.data:
        ds = data.read_dataset(args.data)
    else:
        ds = data.generate_from_config(cfg)
    state = TrainState.load(cfg, args.checkpoint) if args.checkpoint else None
    state = train(cfg, ds, out, state=state, log_every=args.log_every)
    return {"out": str(out), "step": state.step, "final": str(out / "final.bin")}


def _config_for_checkpoint(args) -> ExperimentConfig:
    if args.config:
        return load_config(args, out_is_run_dir=False)
    archived = Path(args.checkpoint).parent / "config.yaml"
    if not archived.exists():
        raise CLIError("--config is required when the checkpoint directory has no config.yaml")
    return ExperimentConfig.load(archived)


def cmd_infer(args) -> dict:
    if not args.checkpoint:
        raise CLIError("--checkpoint is required", EXIT_USAGE, kind="usage")
    cfg = _config_for_checkpoint(args)
    state = TrainState.load(cfg, args.checkpoint)
    images = _read_pngs(Path(args.input))
    out = _require_writable(Path(args.out or "predictions"))
    translated = translate(state, np.stack(list(images.values())))
    for name, img in zip(images, translated):
        data.save_png(out / name, img)
    return {"out": str(out), "images": len(images)}


def cmd_eval(args) -> dict:
    cfg = load_config(args, out_is_run_dir=False)
    pred = _read_pngs(Path(args.pred))
    gt_root = Path(args.gt)
    ref = _read_pngs(gt_root / "images")
    label_dir = gt_root / "labels"
    labels = None
    if label_dir.is_dir():
        labels = {f.name: np.asarray(Image.open(f)).astype(np.int64) for f in sorted(label_dir.glob("*.png"))}
    reports = evaluate_images(pred, ref, labels, cfg.target_class_freqs)
    out = _require_writable(Path(args.out or "eval"))
    agg = write_reports(reports, out)
    return {"out": str(out), **agg.values}


def cmd_ablate(args) -> dict:
    cfg = load_config(args)
    seeds = _int_list(args.seeds) if args.seeds else [cfg.seed]
    out = _require_writable(Path(cfg.out_dir))
    rows = run_ablation(cfg, _float_list(args.lambdas), seeds, out)
    means = summarize(rows)
    return {"out": str(out), "mean_pixel_acc": {f"{k:g}": v["pixel_acc"] for k, v in means.items()}}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semst", description="Toy semantically consistent image translation experiments.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", type=Path, help="experiment config file (YAML key: value)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help=out_help)

    sp = sub.add_parser("generate-data", help="write the synthetic two-domain dataset")
    common(sp, "dataset directory (default: data)")
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("train", help="train the two-branch translator")
    common(sp, "run directory (default: config out_dir)")
    sp.add_argument("--data", type=Path, help="dataset directory; generated in memory when omitted")
    sp.add_argument("--checkpoint", type=Path, help="resume from this checkpoint")
    sp.add_argument("--steps", type=int, help="override the step count")
    sp.add_argument("--log-every", type=int, default=0)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="translate a folder of PNG images")
    common(sp, "output folder (default: predictions)")
    sp.add_argument("--checkpoint", type=Path, help="trained checkpoint")
    sp.add_argument("--input", type=Path, required=True, help="folder of PNG images")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="score predictions against a dataset split")
    common(sp, "report folder (default: eval)")
    sp.add_argument("--pred", type=Path, required=True, help="folder of predicted PNGs")
    sp.add_argument("--gt", type=Path, required=True, help="split folder holding images/ and labels/")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="sweep lambda_ts over seeds and tabulate semantic consistency")
    common(sp, "sweep directory (default: config out_dir)")
    sp.add_argument("--lambdas", default="0,1,2", help="comma-separated lambda_ts values")
    sp.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    sp.add_argument("--steps", type=int, help="override the step count")
    sp.set_defaults(func=cmd_ablate)
    return p


def _error_line(kind: str, message: str, **extra) -> str:
    return "error: " + json.dumps({"type": kind, "message": message, **extra}, sort_keys=True)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
    except CLIError as exc:
        print(_error_line(exc.extra.pop("kind", "CLIError"), str(exc), **exc.extra), file=sys.stderr)
        return exc.code
    except TrainingDivergence as exc:
        print(_error_line("TrainingDivergence", str(exc), term=exc.term, step=exc.step), file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError, KeyError, CheckpointError) as exc:
        print(_error_line(type(exc).__name__, str(exc)), file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
