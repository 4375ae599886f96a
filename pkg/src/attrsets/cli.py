"""Command-line front end: simulate, verify, train, eval, sweep.

One JSON config document drives everything; every default is embedded
here and `--print-config` shows the effective merged configuration.
Exit codes: 0 ok, 1 verification failure, 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import oracle
from .datasets import Dataset, DatasetSpec, load
from .errors import AttrsetsError, ConfigError
from .estimator import EstimatorConfig
from .losses import loss_by_name
from .models import load_checkpoint, save_checkpoint
from .priors import custom_prior, prior_by_name
from .simulate import (
    SyntheticTask,
    generate_attribution_sets,
    read_set_records,
    stream_from_dataset,
    write_oracle_records,
    write_set_records,
)
from .train import TrainConfig, TrainData, default_lr_grid, evaluate, train

DEFAULT_CONFIG = {
    "dataset": {
        "source": "synthetic",
        "positive_rate": 0.1,
        "dim": 10,
        "separation": 3.0,
        "n_train": 20000,
        "n_test": 5000,
        "task_seed": 0,
        # csv/idx fields, unused for synthetic
        "path": None,
        "header": False,
        "test_rows": 0,
        "train_rows": None,
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "positive_labels": [1],
        "normalize": None,
        "name": "synthetic",
    },
    "prior": {"family": "uniform", "weights": None},
    "k_list": [2**i for i in range(9)],
    "algorithms": ["unbiased", "random", "max_prior"],
    "learning_rates": [float(lr) for lr in default_lr_grid()],
    "repetitions": 10,
    "epochs": 50,
    "batch_sets": 128,
    "batch_features": 128,
    "optimizer": "adam",
    "loss": "logloss",
    "clip": 0.01,
    "model": "logistic",
    "hidden": [64, 64],
    "seed": 0,
    "k": 4,
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if path:
        cfg = _merge(cfg, json.loads(Path(path).read_text()))
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _dataset_spec(cfg: dict) -> DatasetSpec:
    d = cfg["dataset"]
    common = dict(positive_labels=tuple(d["positive_labels"]),
                  shuffle_seed=cfg["seed"], normalize=d["normalize"],
                  name=d["name"])
    if d["source"] == "synthetic":
        task = SyntheticTask.default(positive_rate=d["positive_rate"], dim=d["dim"],
                                     separation=d["separation"], seed=d["task_seed"])
        return DatasetSpec(source="synthetic", task=task, n_train=d["n_train"],
                           n_test=d["n_test"], **common)
    if d["source"] == "csv":
        return DatasetSpec(source="csv", path=d["path"], header=d["header"],
                           test_rows=d["test_rows"], train_rows=d["train_rows"],
                           **common)
    if d["source"] == "idx":
        return DatasetSpec(source="idx", train_images=d["train_images"],
                           train_labels=d["train_labels"], test_images=d["test_images"],
                           test_labels=d["test_labels"], **common)
    raise ConfigError(f"unknown dataset source {d['source']!r}")


def _prior(cfg: dict, k: int):
    p = cfg["prior"]
    if p.get("weights"):
        return custom_prior(p["weights"])
    return prior_by_name(p["family"], k)


def _train_data(ds: Dataset, prior, seed) -> TrainData:
    stream = stream_from_dataset(ds.train_x, ds.train_y, seed)
    sets = generate_attribution_sets(stream, prior, seed)
    return TrainData(features=stream.features, sets=sets, prior=prior,
                     labels=stream.labels, test_features=ds.test_x,
                     test_labels=ds.test_y, name=ds.name)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict, out: str) -> int:
    ds = load(_dataset_spec(cfg))
    prior = _prior(cfg, cfg["k"])
    stream = stream_from_dataset(ds.train_x, ds.train_y, cfg["seed"])
    sets = generate_attribution_sets(stream, prior, cfg["seed"])
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    learner_sets = [replace_private(aset) for aset in sets]
    write_set_records(out_path, learner_sets, stream.n,
                      stream.num_conversions / stream.n, prior)
    oracle_path = out_path.with_suffix(out_path.suffix + ".oracle")
    write_oracle_records(oracle_path, stream, sets)
    print(f"wrote {len(sets)} sets to {out_path} (labels to {oracle_path})")
    return 0


def replace_private(aset):
    from dataclasses import replace as dc_replace

    return dc_replace(aset, true_position=None)


def cmd_verify(report_stream=None) -> int:
    """Run the enumeration-oracle battery; nonzero exit on any failure."""
    from fractions import Fraction

    out = report_stream or sys.stdout
    failures = 0
    checks = 0

    def report(name, ok, detail=""):
        nonlocal failures, checks
        checks += 1
        if not ok:
            failures += 1
        print(f"[{'PASS' if ok else 'FAIL'}] {name} {detail}", file=out)

    instances = oracle.load_fixture_grid()
    worst = 0.0
    for inst in instances:
        target = oracle.exact_population_loss(inst)
        for j in range(inst.k, inst.n - inst.k + 1):
            err = abs(oracle.exact_estimator_expectation(inst, j=j) - target)
            worst = max(worst, err)
    report("pointwise/per-set unbiasedness on fixture grid", worst <= 1e-10,
           f"(max |E - L| = {worst:.2e}, {len(instances)} instances)")

    agg_worst, agg_count = 0.0, 0
    for inst in instances:
        try:
            err = abs(oracle.exact_estimator_expectation(inst, aggregate=True)
                      - oracle.exact_population_loss(inst))
        except ConfigError:
            continue
        agg_worst, agg_count = max(agg_worst, err), agg_count + 1
    report("aggregate unbiasedness (admissible fixtures)", agg_worst <= 1e-10,
           f"(max err {agg_worst:.2e} over {agg_count})")

    ok = True
    for n in (6, 8, 10):
        for p in (Fraction(3, 10), Fraction(1, 2)):
            for k in (1, 2):
                for j in range(k, n - k + 1):
                    for t in range(1, min(j - 1, k) + 1):
                        for sign in (-1, 1):
                            enum, closed = oracle.verify_neighbor_label_identity(
                                n, p, j, k, t, sign)
                            ok = ok and enum == closed
                    enum, closed = oracle.conversion_position_mass(n, p, j, k)
                    ok = ok and enum == closed
    report("neighbor-label counting identity (exact rationals)", ok)

    tv_worst = 0.0
    for inst in instances[:12]:
        for label in (0, 1):
            law, prob, tv = oracle.verify_conditional_law(inst, inst.k, min(1, inst.k - 1),
                                                          label)
            if tv is not None:
                tv_worst = max(tv_worst, tv)
    report("conditional feature laws", tv_worst <= 1e-10, f"(max TV {tv_worst:.2e})")

    print(f"{checks - failures}/{checks} checks passed", file=out)
    return 1 if failures else 0


def cmd_train(cfg: dict, out: str | None) -> int:
    ds = load(_dataset_spec(cfg))
    prior = _prior(cfg, cfg["k"])
    data = _train_data(ds, prior, cfg["seed"])
    tc = TrainConfig(
        algorithm=cfg["algorithms"][0], epochs=cfg["epochs"],
        batch_sets=cfg["batch_sets"], batch_features=cfg["batch_features"],
        learning_rate=cfg["learning_rates"][0], optimizer=cfg["optimizer"],
        seed=cfg["seed"], loss_name=cfg["loss"], clip=cfg["clip"],
        model=cfg["model"], hidden=tuple(cfg["hidden"]),
    )
    report = train(data, tc)
    print(json.dumps(report.metrics))
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(report.to_json())
        save_checkpoint(str(Path(out).with_suffix(".model")), report.model)
        print(f"wrote report to {out}")
    return 0


def cmd_eval(cfg: dict, checkpoint: str, out: str | None) -> int:
    ds = load(_dataset_spec(cfg))
    model = load_checkpoint(checkpoint)
    loss = loss_by_name(cfg["loss"], cfg["clip"])
    metrics = evaluate(model, ds.test_x, ds.test_y, loss)
    print(json.dumps(metrics))
    if out:
        Path(out).write_text(json.dumps(metrics))
    return 0


def _sweep_cell(args):
    cfg, algorithm, k, lr, rep = args
    ds = load(_dataset_spec(cfg))
    prior = _prior(cfg, k)
    seed = cfg["seed"] + 1000 * rep
    data = _train_data(ds, prior, seed)
    tc = TrainConfig(
        algorithm=algorithm, epochs=cfg["epochs"], batch_sets=cfg["batch_sets"],
        batch_features=cfg["batch_features"], learning_rate=lr,
        optimizer=cfg["optimizer"], seed=seed, loss_name=cfg["loss"],
        clip=cfg["clip"], model=cfg["model"], hidden=tuple(cfg["hidden"]),
    )
    t0 = time.perf_counter()
    report = train(data, tc)
    return {
        "dataset": cfg["dataset"]["name"], "algorithm": algorithm, "k": k,
        "prior": cfg["prior"]["family"], "lr": lr, "repetition": rep,
        "seed": seed, "accuracy": report.metrics["accuracy"],
        "logloss": report.metrics["log_loss"], "f1": report.metrics["f1"],
        "seconds": time.perf_counter() - t0,
    }


FIELDS = ["dataset", "algorithm", "k", "prior", "lr", "repetition", "seed",
          "accuracy", "logloss", "f1", "seconds"]


def cmd_sweep(cfg: dict, out: str, jobs: int = 1) -> int:
    """Full (algorithm x k x lr x repetition) grid with per-cell resume markers."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker_dir = out_dir / "cells"
    marker_dir.mkdir(exist_ok=True)
    cells = [
        (cfg, algorithm, k, lr, rep)
        for algorithm in cfg["algorithms"]
        for k in cfg["k_list"]
        for lr in cfg["learning_rates"]
        for rep in range(cfg["repetitions"])
    ]

    def marker(cell):
        _, algorithm, k, lr, rep = cell
        return marker_dir / f"{algorithm}-k{k}-lr{lr:g}-r{rep}.json"

    pending = [cell for cell in cells if not marker(cell).exists()]
    print(f"sweep: {len(cells)} cells, {len(pending)} pending")
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            results = pool.map(_sweep_cell_safe, pending)
    else:
        results = [_sweep_cell_safe(cell) for cell in pending]
    for cell, row in zip(pending, results):
        marker(cell).write_text(json.dumps(row))

    rows = [json.loads(m.read_text()) for m in sorted(marker_dir.glob("*.json"))]
    ok_rows = [r for r in rows if "error" not in r]
    with open(out_dir / "sweep.csv", "w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=FIELDS)
        writer.writeheader()
        writer.writerows(ok_rows)
    _write_summary(ok_rows, out_dir / "summary.csv")
    errors = len(rows) - len(ok_rows)
    print(f"wrote {len(ok_rows)} rows to {out_dir / 'sweep.csv'}"
          + (f" ({errors} failed cells recorded)" if errors else ""))
    return 0


def _sweep_cell_safe(cell):
    try:
        return _sweep_cell(cell)
    except Exception as exc:  # cell failures recorded, sweep continues
        _, algorithm, k, lr, rep = cell
        return {"algorithm": algorithm, "k": k, "lr": lr, "repetition": rep,
                "error": repr(exc)}


def _write_summary(rows, path):
    """Best mean accuracy over learning rates per (dataset, algorithm, k)."""
    groups: dict = {}
    for row in rows:
        key = (row["dataset"], row["algorithm"], row["k"], row["prior"], row["lr"])
        groups.setdefault(key, []).append(row["accuracy"])
    best: dict = {}
    for (ds, algo, k, prior, lr), accs in groups.items():
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        key = (ds, algo, k, prior)
        if key not in best or mean > best[key]["mean_accuracy"]:
            best[key] = {"dataset": ds, "algorithm": algo, "k": k, "prior": prior,
                         "best_lr": lr, "mean_accuracy": mean, "std_accuracy": std,
                         "repetitions": len(accs)}
    with open(path, "w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=["dataset", "algorithm", "k", "prior",
                                                "best_lr", "mean_accuracy",
                                                "std_accuracy", "repetitions"])
        writer.writeheader()
        writer.writerows(sorted(best.values(), key=lambda r: (r["dataset"],
                                                              r["algorithm"], r["k"])))


# ---------------------------------------------------------------------------
# Entry point.
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrsets",
        description="Attribution-set simulation, verification, training and sweeps",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", help="output file or directory")
    parser.add_argument("--jobs", type=int, default=1, help="sweep worker processes")
    parser.add_argument("--print-config", action="store_true",
                        help="print the effective config and exit")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("simulate", help="write attribution-set records")
    sub.add_parser("verify", help="run the enumeration-oracle battery")
    sub.add_parser("train", help="run one training configuration")
    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    eval_p.add_argument("checkpoint")
    sub.add_parser("sweep", help="run the full experiment grid")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        if args.print_config:
            print(json.dumps(cfg, indent=2))
            return 0
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out or "sets.jsonl")
        if args.command == "verify":
            return cmd_verify()
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.out)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out or "sweep_out", jobs=args.jobs)
        parser.print_help()
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AttrsetsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
