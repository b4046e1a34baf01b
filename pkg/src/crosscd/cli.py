"""Command-line entry point: prepare, train, eval, sweep, infer, plot."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import Checkpoint
from .config import OUTPUT_DIR_ENV, TrainConfig, dump_config, load_config, model_hash
from .evaluate import evaluate_ratio, plot_curve, predict, sweep, write_results_csv
from .synthesis import BitemporalSample, prepare_inference_pair
from .train import model_from_checkpoint, train, train_config_of


def _output_dir(cfg: TrainConfig | None = None) -> Path:
    if os.environ.get(OUTPUT_DIR_ENV):
        return Path(os.environ[OUTPUT_DIR_ENV])
    return Path(cfg.output_dir) if cfg else Path("runs")


def _load_model(args):
    ckpt = Checkpoint.load(args.ckpt)
    cfg = train_config_of(ckpt)
    check = None
    if getattr(args, "config", None):
        cfg_check = load_config(args.config)
        check = cfg_check.model
        if model_hash(check) != ckpt.manifest.get("model_hash"):
            raise SystemExit(f"error: {args.config} describes a different model than {args.ckpt} "
                             f"({model_hash(check)} != {ckpt.manifest.get('model_hash')})")
    return model_from_checkpoint(ckpt, check), cfg, ckpt


def cmd_prepare(args):
    if args.synthetic:
        splits = D.write_synthetic_layout(args.dst, args.synthetic, args.n_val, args.n_test, args.size, args.seed)
    else:
        splits = D.tile_layout(args.src, args.dst, args.tile_size)
    for k, v in splits.items():
        print(f"{k}: {len(v)} tiles")


def cmd_train(args):
    cfg = load_config(args.config)
    if not cfg.data_root:
        raise SystemExit("error: config lacks data_root")
    D.validate_layout(cfg.data_root, (cfg.train_split, cfg.val_split))
    out = _output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    slot = cfg.synthesis.degraded_slot
    train_set = D.load_split(cfg.data_root, cfg.train_split, cfg.train_ratio, slot)
    val_set = D.load_split(cfg.data_root, cfg.val_split, cfg.train_ratio, slot)
    resume = Checkpoint.load(args.resume) if args.resume else None
    res = train(cfg, train_set, val_set, out, resume)
    print(f"best val F1 {res.best.manifest['best_val_f1']:.4f} (epoch {res.best.manifest['epoch']}); "
          f"checkpoints in {out}")


def _eval_samples(args, cfg):
    root = args.data or cfg.data_root
    if not root:
        raise SystemExit("error: no dataset root (pass --data)")
    return D.load_split(root, args.split, 1.0, cfg.synthesis.degraded_slot)


def _write_manifest(path: Path, ckpt, ratios, samples):
    shape = samples[0].label.shape if samples else (0, 0)
    manifest = {
        "config_hash": ckpt.manifest.get("config_hash"),
        "model_hash": ckpt.manifest.get("model_hash"),
        "seed": ckpt.manifest.get("seed"),
        "ratios": list(ratios),
        "realized_lr_sizes": {repr(r): D.realized_lr_size(shape, r) for r in ratios},
        "metric_conventions": {"empty_positives": 1.0, "single_empty_denominator": 0.0},
    }
    path.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=1))


def cmd_eval(args):
    model, cfg, ckpt = _load_model(args)
    samples = _eval_samples(args, cfg)
    rep, counts = evaluate_ratio(model, samples, args.ratio, cfg.synthesis.degraded_slot, cfg.eval_batch_size)
    out = Path(args.out) if args.out else _output_dir(cfg) / f"eval_{args.split}_r{args.ratio:g}.csv"
    write_results_csv(out, [(args.ratio, rep, counts)])
    _write_manifest(out, ckpt, [args.ratio], samples)
    print(f"ratio {args.ratio:g}: " + "  ".join(f"{k} {v:.4f}" for k, v in rep.as_dict().items()))


def cmd_sweep(args):
    model, cfg, ckpt = _load_model(args)
    samples = _eval_samples(args, cfg)
    spec = D.SweepSpec([float(r) for r in args.ratios.split(",")], cfg.synthesis.degraded_slot)
    rows = sweep(model, samples, spec, cfg.eval_batch_size)
    out = Path(args.out) if args.out else _output_dir(cfg) / f"sweep_{args.split}.csv"
    write_results_csv(out, rows)
    _write_manifest(out, ckpt, spec.ratios, samples)
    for r, rep, _ in rows:
        print(f"ratio {r:g}: F1 {rep.f1:.4f}  IoU {rep.iou:.4f}")
    if args.plot:
        plot_curve([out], args.plot)


def cmd_infer(args):
    model, cfg, _ = _load_model(args)
    pre, post = D.read_image(args.pre), D.read_image(args.post)
    slot = cfg.synthesis.degraded_slot
    hr, lr = (post, pre) if slot == "pre" else (pre, post)
    ratio = hr.shape[0] / lr.shape[0]
    sample = BitemporalSample(pre, post, np.zeros(hr.shape[:2], np.uint8), ratio, slot)
    mask = predict(model, [prepare_inference_pair(sample)])[0]
    D.write_label(args.out, mask)
    print(f"wrote {args.out} ({int(mask.sum())} change pixels)")


def cmd_plot(args):
    plot_curve(args.csv, args.out, args.labels)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crosscd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("prepare", help="tile a dataset layout, or write the synthetic fixture")
    s.add_argument("--src")
    s.add_argument("--dst", required=True)
    s.add_argument("--tile-size", type=int, default=256)
    s.add_argument("--synthetic", type=int, default=0, metavar="N_TRAIN")
    s.add_argument("--n-val", type=int, default=4)
    s.add_argument("--n-test", type=int, default=4)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_prepare)

    s = sub.add_parser("train")
    s.add_argument("--config", required=True)
    s.add_argument("--resume")
    s.set_defaults(fn=cmd_train)

    for name, fn in (("eval", cmd_eval), ("sweep", cmd_sweep)):
        s = sub.add_parser(name)
        s.add_argument("--ckpt", required=True)
        s.add_argument("--config", help="refuse to run unless the checkpoint matches this config's model")
        s.add_argument("--data")
        s.add_argument("--split", default="test")
        s.add_argument("--out")
        if name == "eval":
            s.add_argument("--ratio", type=float, required=True)
        else:
            s.add_argument("--ratios", default=",".join(f"{r:g}" for r in D.DEFAULT_RATIOS))
            s.add_argument("--plot")
        s.set_defaults(fn=fn)

    s = sub.add_parser("infer")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config")
    s.add_argument("--pre", required=True)
    s.add_argument("--post", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("plot")
    s.add_argument("--csv", nargs="+", required=True)
    s.add_argument("--labels", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.cmd == "train" else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.cmd == "prepare" and not args.synthetic and not args.src:
        raise SystemExit("error: prepare needs --src or --synthetic")
    args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
