"""Batch command-line interface.

Subcommands: gen-data, train, eval, compare-policies, calib-report. Every run
writes a resolved-config snapshot next to its outputs so it can be reproduced
exactly from the snapshot alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .calibration import weight_table_rows
from .config import ConfigError, RunConfig, load_run_config, write_snapshot
from .data import (load_dataset, save_dataset, save_splits, split_ssmll,
                   train_test_datasets)
from .metrics import (classwise_average_precision, mean_average_precision,
                      reliability_report)
from .model import load_checkpoint, save_checkpoint
from .policies import compare_policies
from .thresholding import threshold_rows
from .training import POLICIES, run_pipeline

logger = logging.getLogger(__name__)


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _prepare(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out / "resolved_config.json")
    train_ds, test_ds = train_test_datasets(cfg.data, cfg.n_test)
    splits = split_ssmll(train_ds, rho=cfg.rho, est_fraction=cfg.est_fraction,
                         seed=cfg.split_seed)
    return train_ds, test_ds, splits


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if getattr(args, "policy", None) is not None:
        if args.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {args.policy!r}")
        cfg = replace(cfg, policy=args.policy)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    train_ds, test_ds, splits = _prepare(cfg, out)
    save_dataset(train_ds, out / "features.csv", out / "labels.csv")
    save_dataset(test_ds, out / "test_features.csv", out / "test_labels.csv")
    save_splits(splits, out / "splits.json")
    logger.info("wrote dataset (%d train / %d test rows) to %s",
                train_ds.n_samples, test_ds.n_samples, out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    train_ds, test_ds, splits = _prepare(cfg, out)
    result = run_pipeline(train_ds, splits, cfg.model, cfg.train,
                          policy=cfg.policy, test_set=test_ds,
                          collect_reliability=False)
    with open(out / "metrics.jsonl", "w") as fh:
        for report in result.epoch_reports:
            fh.write(json.dumps(report.to_dict()) + "\n")
    save_checkpoint(result.model, out / "model.npz")
    last = result.epoch_reports[-1] if result.epoch_reports else None
    _write_json(out / "summary.json", {
        "policy": cfg.policy,
        "test_map": result.test_map,
        "warmup_losses": result.warmup_losses,
        "finetune_losses": result.finetune_losses,
        "final_epoch": last.to_dict() if last else None,
    })
    logger.info("test mAP %.4f", result.test_map if result.test_map is not None else float("nan"))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.features, args.labels)
    scores = model.predict_scores(dataset.features, use_ema=True)
    aps, skipped = classwise_average_precision(scores, dataset.labels)
    payload = {
        "map": mean_average_precision(scores, dataset.labels),
        "per_class_ap": [None if np.isnan(a) else float(a) for a in aps],
        "skipped_classes": skipped,
    }
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_compare_policies(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    train_ds, test_ds, splits = _prepare(cfg, out)
    seeds = [int(s) for s in args.seeds.split(",")]
    report = compare_policies(train_ds, splits, test_ds, cfg.model, cfg.train,
                              seeds=seeds)
    _write_csv(out / "policy_report.csv", report.to_rows())
    _write_json(out / "policy_summary.json", report.summary())
    for policy, stats in report.summary()["policies"].items():
        logger.info("%-12s mAP %.4f +- %.4f", policy, stats["map_mean"], stats["map_std"])
    return 0


def cmd_calib_report(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    train_ds, test_ds, splits = _prepare(cfg, out)
    result = run_pipeline(train_ds, splits, cfg.model, cfg.train,
                          policy=cfg.policy, test_set=test_ds,
                          collect_reliability=True)
    report = reliability_report(result.est_table, result.oracle_table)
    _write_csv(out / "reliability.csv", report.to_rows())
    _write_csv(out / "weight_table.csv", weight_table_rows(result.est_table))
    _write_csv(out / "thresholds.csv", threshold_rows(result.thresholds))
    _write_json(out / "calibration_summary.json", {
        "max_gap_co_occupied": report.max_gap,
        "n_co_occupied": report.n_co_occupied,
        "test_map": result.test_map,
    })
    logger.info("reliability gap %.4f over %d co-occupied bins",
                report.max_gap, report.n_co_occupied)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudocal",
        description="Semi-supervised multi-label training with correctness-"
                    "calibrated pseudo-label weighting.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p, with_policy=True):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the training seed from the config")
        if with_policy:
            p.add_argument("--policy", default=None, choices=POLICIES,
                           help="override the weighting policy")

    p = sub.add_parser("gen-data", help="emit dataset, test set and split files")
    add_run_args(p, with_policy=False)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="run the full pipeline and emit metrics")
    add_run_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="mAP of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare-policies", help="run every weighting policy")
    add_run_args(p, with_policy=False)
    p.add_argument("--seeds", default="1,2,3", help="comma-separated run seeds")
    p.set_defaults(fn=cmd_compare_policies)

    p = sub.add_parser("calib-report", help="reliability CSV for a run")
    add_run_args(p)
    p.set_defaults(fn=cmd_calib_report)
    return parser


def run_command(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
