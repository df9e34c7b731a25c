"""Command-line entry points.

Subcommands: prepare (parse + split + persist the interval system), train,
evaluate (re-score a checkpoint), ablate (config grid sweep), export
(embedding / attention CSVs).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiment, model
from .data import DataError, chronological_split, parse_interactions
from .experiment import ConfigError, ExperimentConfig
from .system import build_hybrid_system, save_system


def _cmd_prepare(args) -> int:
    log = parse_interactions(args.input, args.format)
    train, valid, test = chronological_split(log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    system = build_hybrid_system(train, args.k)
    save_system(out / "system.npz", system)
    np.savez(out / "splits.npz",
             n_users=log.n_users, n_items=log.n_items,
             train_users=train.users, train_items=train.items,
             train_ts=train.timestamps,
             valid_users=valid.users, valid_items=valid.items,
             valid_ts=valid.timestamps,
             test_users=test.users, test_items=test.items,
             test_ts=test.timestamps)
    print(f"{log.n_users} users, {log.n_items} items, {len(log)} interactions")
    print(f"splits train/valid/test = {len(train)}/{len(valid)}/{len(test)}")
    print(f"K={args.k} intervals with "
          f"{np.diff(system.offsets).tolist()} train edges each")
    print(f"wrote {out / 'system.npz'} and {out / 'splits.npz'}")
    return 0


def _cmd_train(args) -> int:
    cfg = experiment.load_config(args.config)
    summary = experiment.run_experiment(cfg)
    print(f"best epoch {summary['best_epoch']} "
          f"(valid mrr {summary['best_valid_mrr']:.4f})")
    print(f"test recall@5 {summary['recall@5']:.4f}  "
          f"recall@10 {summary['recall@10']:.4f}  mrr {summary['mrr']:.4f}")
    print(f"checkpoint: {summary['checkpoint']}")
    return 0


def _cmd_evaluate(args) -> int:
    params, meta = model.load_checkpoint(args.checkpoint)
    cfg = ExperimentConfig(**meta["config"])
    if args.mask_seen:
        cfg.mask_seen = args.mask_seen
    train_log, valid_log, test_log = experiment.load_splits(cfg)
    eval_log = valid_log if args.split == "valid" else test_log
    mask_valid = valid_log if args.split == "test" else None
    system = build_hybrid_system(train_log, cfg.k)
    _, skips, summary = experiment.evaluate(
        params, system, eval_log, train_log, mask_valid, mask_seen=cfg.mask_seen,
        policy=cfg.policy(), variant=cfg.variant, eps=cfg.eps,
        per_user=args.per_user)
    print(f"{args.split}: recall@5 {summary['recall@5']:.4f}  "
          f"recall@10 {summary['recall@10']:.4f}  mrr {summary['mrr']:.4f}")
    print(f"ranked {summary['n_ranked']} interactions; skipped "
          f"{skips.cold_users} cold-user, {skips.cold_items} cold-item, "
          f"{skips.masked_targets} masked-target")
    return 0


def _cmd_ablate(args) -> int:
    configs = experiment.expand_grid(args.grid)
    print(f"{len(configs)} grid cells")
    rows, failures = experiment.run_ablation(configs, args.out, quiet=False)
    print(f"wrote {len(rows)} rows to {args.out}")
    if failures:
        print(f"{len(failures)} cells failed, see "
              f"{Path(args.out).with_suffix('.failures.log')}", file=sys.stderr)
        return 1
    return 0


def _cmd_export(args) -> int:
    if args.what == "embeddings":
        n = experiment.export_embeddings(args.checkpoint, args.out)
    else:
        n = experiment.export_attention(args.checkpoint, args.out)
    print(f"wrote {n} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphode",
        description="Continuous-time graph recommendation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse, split, and persist a dataset")
    p.add_argument("--input", required=True, help="raw interaction file")
    p.add_argument("--format", required=True, choices=["movielens", "amazon"])
    p.add_argument("--k", type=int, required=True, help="number of time intervals")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True, choices=["valid", "test"])
    p.add_argument("--mask-seen", dest="mask_seen",
                   choices=list(experiment.MASK_MODES), default=None)
    p.add_argument("--per-user", dest="per_user", action="store_true",
                   help="average metrics per user instead of per interaction")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="run a config grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", default="ablation.csv")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export", help="dump embeddings or attention weights")
    p.add_argument("--what", required=True, choices=["embeddings", "attention"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
