"""Command-line entry point.

Subcommands: ingest, train, analyze, pipeline, evaluate, simulate.
Exit codes: 0 ok, 2 input/schema problem, 3 numeric divergence,
4 empty filter. Reruns with the same config and seed write byte-identical
checkpoints, reports and metrics; wall-clock timings go to a separate
timings file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import load_config
from .errors import EmptyFilter, MosaicError, NonFiniteUpdate
from .evaluate import evaluate_model, metrics_to_csv
from .memory import simulate_arfima
from .model import load_checkpoint, save_checkpoint
from .pipeline import classify_trajectories, compose_scoring_model, filter_users, run_mosaic
from .trainer import read_trajectories, train_bpr, train_snape, write_trajectories

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_EMPTY_FILTER = 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_split(cfg, data_path):
    log = data_mod.read_interactions(data_path)
    return data_mod.temporal_split(log, cfg.split_ratio)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(args.input) as fh:
        log = data_mod.parse_interactions(fh, cfg.schema, cfg.positive_rule)
    stats = data_mod.dataset_stats(log)
    (out / "stats.csv").write_text(stats.to_csv())
    data_mod.write_interactions(log, out / "interactions.bin")
    print(
        f"ingested {len(log)} interactions "
        f"({log.skipped_rows} rows skipped), {log.n_users} users, {log.n_items} items"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = _load_split(cfg, args.data)
    manifest = {
        "data_sha256": _sha256(args.data),
        "split_ratio": cfg.split_ratio,
        "dropped_users": split.dropped_users,
        "n_train": len(split.train),
        "n_test": len(split.test),
    }
    _write_json(out / "split_manifest.json", manifest)
    if args.algo == "snape":
        model, trajectories = train_snape(split.train, cfg.train)
        save_checkpoint(model, out / "snape.ckpt")
        write_trajectories(trajectories, cfg.train.dim_k, out / "trajectories.jsonl")
        total0 = _total_block_loss(model, split.train, at_init=True, cfg=cfg)
        total1 = _total_block_loss(model, split.train)
        print(f"loss audit: initial {total0:.6f} -> trained {total1:.6f}")
    else:
        model = train_bpr(split.train, cfg.train, cfg.bpr_samples)
        save_checkpoint(model, out / "bpr.ckpt")
    print(f"trained {args.algo} on {len(split.train)} interactions")
    return EXIT_OK


def _total_block_loss(model, train, at_init=False, cfg=None):
    from .data import iter_user_blocks
    from .model import block_loss, init_model

    if at_init:
        model = init_model(train.n_users, train.n_items, cfg.train.dim_k, cfg.train.seed,
                           cfg.train.reg_lambda)
    total = 0.0
    count = 0
    for _, blocks in iter_user_blocks(train):
        for b in blocks:
            total += block_loss(model, b)
            count += 1
    return total / max(count, 1)


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trajectories = read_trajectories(args.trajectories)
    if not trajectories:
        print("error: empty trajectories file", file=sys.stderr)
        return EXIT_INPUT
    reports = classify_trajectories(trajectories, cfg.memory)
    _write_reports(reports, out)
    survivors = filter_users(reports)
    print(f"analyzed {len(reports)} users, {len(survivors)} pass both gates")
    return EXIT_OK


def _write_reports(reports, out: Path):
    with open(out / "memory_reports.jsonl", "w") as fh:
        for u in sorted(reports):
            fh.write(json.dumps(reports[u].to_record(), sort_keys=True) + "\n")
    with open(out / "dhat_distribution.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "d_hat"])
        for u in sorted(reports):
            for c_idx, comp in enumerate(reports[u].components):
                if comp.estimate is not None:
                    writer.writerow([c_idx, f"{comp.estimate.d_hat:.6f}"])


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.snapshot())
    split = _load_split(cfg, args.data)
    manifest = {
        "data_sha256": _sha256(args.data),
        "split_ratio": cfg.split_ratio,
        "dropped_users": split.dropped_users,
        "n_train": len(split.train),
        "n_test": len(split.test),
    }
    _write_json(out / "split_manifest.json", manifest)
    try:
        stage1, stage2, trajectories, reports, report = run_mosaic(
            split.train, cfg.train, cfg.memory
        )
    except EmptyFilter as err:
        rec = err.report.to_record()
        rec.pop("stage_seconds", None)
        _write_json(out / "pipeline_report.json", rec)
        print("error: memory filter removed every user", file=sys.stderr)
        return EXIT_EMPTY_FILTER
    save_checkpoint(stage1, out / "stage1.ckpt")
    save_checkpoint(stage2, out / "stage2.ckpt")
    write_trajectories(trajectories, cfg.train.dim_k, out / "trajectories.jsonl")
    _write_reports(reports, out)
    survivors = filter_users(reports)
    scoring = compose_scoring_model(stage1, stage2, survivors, split.train)
    save_checkpoint(scoring, out / "scoring.ckpt")

    rec = report.to_record()
    timings = rec.pop("stage_seconds", {})
    _write_json(out / "pipeline_report.json", rec)
    _write_json(out / "timings.json", timings)

    results = {
        "stage1": evaluate_model(stage1, split.test, cfg.k_values),
        "mosaic": evaluate_model(scoring, split.test, cfg.k_values),
    }
    (out / "metrics.csv").write_text(metrics_to_csv(results))
    print(
        f"pipeline done: {report.total_users} users -> "
        f"{report.stationary_users} stationary -> {report.stationary_lrd_users} kept"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.split_manifest:
        with open(args.split_manifest) as fh:
            manifest = json.load(fh)
        actual = _sha256(args.data)
        if manifest["data_sha256"] != actual:
            print("error: data file does not match the split manifest checksum", file=sys.stderr)
            return EXIT_INPUT
        if manifest["split_ratio"] != cfg.split_ratio:
            print("error: config split_ratio differs from the manifest", file=sys.stderr)
            return EXIT_INPUT
    split = _load_split(cfg, args.data)
    results = {}
    for spec_str in args.checkpoint:
        name, _, path = spec_str.partition("=")
        if not path:
            print(f"error: --checkpoint needs NAME=PATH, got {spec_str!r}", file=sys.stderr)
            return EXIT_INPUT
        model = load_checkpoint(path)
        results[name] = evaluate_model(model, split.test, cfg.k_values)
    (out / "metrics.csv").write_text(metrics_to_csv(results))
    print(f"evaluated {len(results)} checkpoint(s) on {len(split.test)} test interactions")
    return EXIT_OK


def cmd_simulate(args) -> int:
    x = simulate_arfima(args.n, args.d, args.sigma, args.seed)
    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "value"])
        for t, v in enumerate(x):
            writer.writerow([t, repr(float(v))])
    print(f"wrote {args.n} samples (d={args.d}) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosaic",
        description="Block-wise sequential ranking trainer with long-memory user filtering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw interaction file into the normalized format")
    p.add_argument("--config", default=None)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="temporal split + train one model")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="normalized interaction file")
    p.add_argument("--algo", required=True, choices=["snape", "bpr"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="classify embedding trajectories")
    p.add_argument("--config", default=None)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pipeline", help="full two-stage run with the memory filter")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", help="rank the test split with saved checkpoints")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--split-manifest", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="write a fractionally integrated noise fixture")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteUpdate as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, OSError, MosaicError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
