"""Command-line surface.

Subcommands: gen-data, train, eval, predict, ablate, report-efficiency.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys

from PIL import Image as PILImage

from . import data
from .ablation import AXES, run_ablation
from .config import ONE_STAGE, TWO_STAGE, TrainConfig
from .evaluate import evaluate_split, mean_inference_time, predict_scores
from .metrics import pr_curve
from .training import pipeline_from_checkpoint, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="puddleseg",
        description="Prompt-conditioned standing-water segmentation at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--root", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--hard-fraction", type=float, default=0.4)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="training log CSV path")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--strategy", choices=["one", "two"])
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--spatial-mode", choices=["mask", "box", "point"])
    p.add_argument("--tau", type=float)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--num-prototypes-per-class", type=int)
    p.add_argument("--encoder-depth", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--epochs-stage1", type=int)
    p.add_argument("--epochs-stage2", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["all", "hard"], default="all")
    p.add_argument("--pr-out", help="write a PR curve CSV here")
    p.add_argument("--pr-thresholds", type=int, default=21)

    p = sub.add_parser("predict", help="segment a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--axis", choices=list(AXES), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="result CSV path")
    p.add_argument("--config", help="base config file")

    p = sub.add_parser("report-efficiency",
                       help="parameter counts and inference timing")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    return parser


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {
        "strategy": {"one": ONE_STAGE, "two": TWO_STAGE}.get(args.strategy)
        if args.strategy else None,
        "ratio": args.ratio,
        "seed": args.seed,
        "spatial_mode": args.spatial_mode,
        "tau": args.tau,
        "grid_size": args.grid_size,
        "num_prototypes_per_class": args.num_prototypes_per_class,
        "encoder_depth": args.encoder_depth,
        "embed_dim": args.embed_dim,
        "epochs_stage1": args.epochs_stage1,
        "epochs_stage2": args.epochs_stage2,
    }
    updates = {k: v for k, v in overrides.items() if v is not None}
    cfg = dataclasses.replace(cfg, **updates)
    cfg.validate()
    return cfg


def cmd_gen_data(args) -> int:
    data.generate_synthetic_dataset(
        args.root, seed=args.seed, n_train=args.n_train, n_test=args.n_test,
        side=args.side, hard_fraction=args.hard_fraction)
    test_idx = data.load_split(args.root, "test-all")
    hard_idx = data.load_split(args.root, "test-hard")
    print(f"wrote {args.n_train} train and {len(test_idx.pairs)} test pairs "
          f"({len(hard_idx.pairs)} hard) under {args.root}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    index = data.load_split(args.data, "train")
    dataset = data.load_arrays(index)
    result = train(cfg, dataset, checkpoint_out=args.out, log_path=args.log,
                   resume=args.resume)
    last = result.log_rows[-1] if result.log_rows else {}
    print(f"trained {cfg.strategy} for {len(result.log_rows)} steps; "
          f"final total loss {last.get('total', float('nan')):.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    if result.stage1_checkpoint_path:
        print(f"stage-1 checkpoint: {result.stage1_checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    pipe, _, prompted = pipeline_from_checkpoint(args.checkpoint)
    split = "test-all" if args.split == "all" else "test-hard"
    index = data.load_split(args.data, split)
    images, masks = data.load_arrays(index)
    counts, vals = evaluate_split(pipe, images, masks, prompted=prompted)
    print(f"split={split} n={len(index.pairs)} "
          f"tp={counts.tp} fp={counts.fp} fn={counts.fn} tn={counts.tn}")
    print(f"precision={vals.precision:.4f} recall={vals.recall:.4f} "
          f"f1={vals.f1:.4f} iou={vals.iou:.4f}")
    if args.pr_out:
        scores = predict_scores(pipe, images, prompted=prompted)
        curve = pr_curve(scores, masks, num_thresholds=args.pr_thresholds)
        with open(args.pr_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall"])
            writer.writerows(curve.points)
        print(f"PR curve written to {args.pr_out}")
    return 0


def cmd_predict(args) -> int:
    pipe, _, prompted = pipeline_from_checkpoint(args.checkpoint)
    img = data.load_image(args.image)
    mask = pipe.predict(img[None], prompted=prompted)[0]
    PILImage.fromarray(mask * 255, mode="L").save(args.out)
    print(f"wrote mask ({int(mask.sum())} foreground px) to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    base = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    rows = run_ablation(args.axis, base, args.data, out_csv=args.out)
    print(f"{len(rows)} rows written to {args.out}")
    for row in rows:
        print(row)
    return 0


def cmd_report_efficiency(args) -> int:
    pipe, cfg, prompted = pipeline_from_checkpoint(args.checkpoint)
    index = data.load_split(args.data, "test-all")
    images, _ = data.load_arrays(index)
    counts = pipe.group_param_counts()
    stage2_groups = ("spatial", "semantic", "style", "dpc", "decoder")
    trainable = sum(counts[g] for g in stage2_groups)
    total = sum(counts.values())
    print("parameters per component:")
    for group, n in counts.items():
        print(f"  {group:10s} {n:8d}")
    print(f"  total      {total:8d} (prompt-stage trainable: {trainable})")
    t = mean_inference_time(pipe, images, prompted=prompted)
    print(f"mean per-image inference time: {t * 1e3:.1f} ms")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "ablate": cmd_ablate,
        "report-efficiency": cmd_report_efficiency,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
