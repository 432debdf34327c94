"""Command-line experiment runner.

    crl train --config run.ini --out runs/crl
    crl eval --model runs/crl/checkpoint.json --data test --out runs/crl/eval
    crl ood --model runs/crl/checkpoint.json --in test --out-dist ood --detector odin --tune
    crl active --config run.ini --out runs/al
    crl ensemble-eval --models a/checkpoint.json b/checkpoint.json --data test --out runs/ens

Set ``CRL_LOG_LEVEL`` (DEBUG, INFO, WARNING) to control verbosity.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .active import run_active_loop, write_queries, write_stage_log
from .config import ConfigError, DataConfig, RunConfig, load_config
from .data import Dataset, gen_blobs, load_csv, load_idx
from .nn import ensemble_probs, penultimate_features
from .ood import (OdinConfig, mahalanobis_fit, mahalanobis_model_score, msp_score, odin_grid, odin_grid_search,
                  odin_score, ood_report, write_scores)
from .ranking import confidence_score
from .train import evaluate, load_checkpoint, predict_probs, save_checkpoint, train_model

log = logging.getLogger("crl")

EPOCH_LOG_FIELDS = ["epoch", "lr", "ce", "crl", "train_acc", "test_acc", "test_aurc", "test_eaurc", "test_nll"]


@contextlib.contextmanager
def atomic_path(path: Path):
    """Yield a temp path in the target directory; rename over ``path`` on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_json(path: Path, doc) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(json.dumps(doc, indent=1) + "\n")


class Manifest:
    def __init__(self, command: str, config: dict, seeds: dict):
        self.command = command
        self.config = config
        self.seeds = seeds
        self.artifacts: list[str] = []
        self.started = time.time()

    @property
    def hash(self) -> str:
        # wall-clock timings are excluded so repeated runs hash identically
        doc = {"tool": "crl", "version": __version__, "command": self.command, "config": self.config,
               "seeds": self.seeds, "artifacts": sorted(self.artifacts)}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def write(self, out: Path) -> None:
        doc = {"tool": "crl", "version": __version__, "command": self.command, "config": self.config,
               "seeds": self.seeds, "artifacts": sorted(self.artifacts), "hash": self.hash,
               "threads": {k: os.environ.get(k) for k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")},
               "timings": {"wall_seconds": time.time() - self.started}}
        write_json(out / "manifest.json", doc)


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_data(spec: str, data_cfg: DataConfig | None, holdout_seed: int = 5000) -> Dataset:
    """A split name resolved against the run's data config, or a CSV / ``idx:IMAGES,LABELS`` path."""
    if spec.startswith("idx:"):
        images, labels = spec[4:].split(",")
        return load_idx(images, labels, "file", data_cfg.num_classes if data_cfg else None)
    if spec.endswith(".csv"):
        return load_csv(spec, "file", data_cfg.num_classes if data_cfg else None)
    if data_cfg is None:
        raise ConfigError(f"split {spec!r} needs a data config (none embedded in the checkpoint)")
    if spec in ("holdout-in", "holdout-ood"):
        if data_cfg.kind != "blobs":
            raise ConfigError("hold-out splits are only defined for blob data")
        spec_ = data_cfg.blob_spec("test")
        spec_.seed = holdout_seed
        val = gen_blobs(spec_, "val")
        return val if spec == "holdout-in" else val.translated(data_cfg.ood_offset_stds * data_cfg.std)
    return data_cfg.load(spec)


def _write_epoch_log(path: Path, rows: list[dict]) -> None:
    with atomic_path(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EPOCH_LOG_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _report(records, manifest: Manifest, bins: int, extra: dict | None = None) -> dict:
    rep = metrics.metrics_report(records, bins)
    rep.update(extra or {})
    rep["manifest"] = manifest.hash
    return rep


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    manifest = Manifest("train", cfg.to_dict(), {"train": cfg.train.seed, "data": cfg.data.seed,
                                                 "test_data": cfg.data.test_seed})
    train, test = cfg.data.load("train"), cfg.data.load("test")
    res = train_model(cfg.train, train, test)
    manifest.artifacts = ["checkpoint.json", "epoch_log.csv", "history.csv", "predictions.jsonl", "metrics.json"]
    with atomic_path(out / "checkpoint.json") as tmp:
        save_checkpoint(tmp, res.model, cfg.train, {"data_config": cfg.to_dict()["data"],
                                                    "ood_config": cfg.to_dict()["ood"],
                                                    "entropy_range": list(res.entropy_range),
                                                    "manifest": manifest.hash})
    _write_epoch_log(out / "epoch_log.csv", res.epoch_log)
    with atomic_path(out / "history.csv") as tmp:
        res.history.write_csv(tmp, train.ids)
    records = evaluate(res.model, test, cfg.train.kappa_kind)
    with atomic_path(out / "predictions.jsonl") as tmp:
        metrics.write_predictions(records, tmp)
    rep = _report(records, manifest, args.ece_bins, {"split": "test", "kappa_kind": cfg.train.kappa_kind,
                                                     "lam": cfg.train.lam})
    write_json(out / "metrics.json", rep)
    manifest.write(out)
    print(metrics.format_table_row(rep))
    return 0


def _load_model(path):
    model, train_cfg, doc = load_checkpoint(path)
    data_cfg = DataConfig(**doc["data_config"]) if "data_config" in doc else None
    return model, train_cfg, doc, data_cfg


def _eval_records(probs, ds: Dataset, kind: str, frozen_range=None):
    kappa = confidence_score(probs, kind, frozen_range)
    return metrics.make_records(ds.ids, ds.labels, probs, kappa)


def _evaluate_probs(args, command: str, model_paths: list[str], probs_fn) -> int:
    model, train_cfg, doc, data_cfg = _load_model(model_paths[0])
    ds = resolve_data(args.data, data_cfg)
    frozen = tuple(doc["entropy_range"]) if args.entropy_scaling == "frozen" and "entropy_range" in doc else None
    records = _eval_records(probs_fn(ds), ds, train_cfg.kappa_kind, frozen)
    manifest = Manifest(command, {"models": [_file_hash(p) for p in model_paths], "data": args.data,
                                  "ece_bins": args.ece_bins, "entropy_scaling": args.entropy_scaling},
                        {"train": train_cfg.seed})
    out = Path(args.out)
    manifest.artifacts = ["predictions.jsonl", "metrics.json"]
    with atomic_path(out / "predictions.jsonl") as tmp:
        metrics.write_predictions(records, tmp)
    write_json(out / "metrics.json", _report(records, manifest, args.ece_bins,
                                             {"split": args.data, "kappa_kind": train_cfg.kappa_kind}))
    manifest.write(out)
    print(metrics.format_table_row(metrics.metrics_report(records, args.ece_bins)))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)[0]
    return _evaluate_probs(args, "eval", [args.model], lambda ds: predict_probs(model, ds.inputs))


def cmd_ensemble_eval(args) -> int:
    models = [load_checkpoint(p)[0] for p in args.models]
    kinds = {load_checkpoint(p)[1].kappa_kind for p in args.models}
    if len(kinds) > 1:
        raise ConfigError(f"ensemble members use different confidence kinds: {sorted(kinds)}")
    return _evaluate_probs(args, "ensemble-eval", list(args.models),
                           lambda ds: ensemble_probs([predict_probs(m, ds.inputs) for m in models]))


def cmd_ood(args) -> int:
    model, train_cfg, doc, data_cfg = _load_model(args.model)
    ood_cfg = doc.get("ood_config", {})
    holdout_seed = int(ood_cfg.get("holdout_seed", 5000))
    ds_in = resolve_data(args.in_data, data_cfg)
    ds_out = resolve_data(args.out_dist, data_cfg)
    in_x = ds_in.inputs
    in_ids = ds_in.ids
    if args.exclude_misclassified:
        keep = np.argmax(predict_probs(model, in_x), axis=1) == ds_in.labels
        in_x, in_ids = in_x[keep], in_ids[keep]
    config_doc: dict = {"detector": args.detector, "in": args.in_data, "out": args.out_dist,
                        "model": _file_hash(args.model), "exclude_misclassified": args.exclude_misclassified}
    if args.detector == "msp":
        in_s, out_s = msp_score(model, in_x), msp_score(model, ds_out.inputs)
    elif args.detector == "odin":
        if args.tune:
            grid = odin_grid(ood_cfg.get("temperatures", (1.0, 10.0, 100.0, 1000.0)),
                             ood_cfg.get("epsilons", (0.0, 1e-4, 5e-4, 1e-3, 2e-3)))
            val_in = resolve_data(args.holdout_in, data_cfg, holdout_seed)
            val_out = resolve_data(args.holdout, data_cfg, holdout_seed)
            cfg = odin_grid_search(model, val_in.inputs, val_out.inputs, grid)
            config_doc["grid"] = [[c.temperature, c.epsilon] for c in grid]
        else:
            try:
                cfg = OdinConfig(args.temperature, args.epsilon)
                cfg.check_scale(in_x)
            except ValueError as exc:
                raise ConfigError(f"odin: {exc}") from None
        config_doc["odin"] = {"temperature": cfg.temperature, "epsilon": cfg.epsilon}
        in_s, out_s = odin_score(model, in_x, cfg), odin_score(model, ds_out.inputs, cfg)
    else:
        fit_ds = resolve_data(args.fit_data, data_cfg)
        fit = mahalanobis_fit(penultimate_features(model, fit_ds.inputs), fit_ds.labels, model.num_classes)
        in_s = mahalanobis_model_score(model, fit, in_x)
        out_s = mahalanobis_model_score(model, fit, ds_out.inputs)
    manifest = Manifest("ood", config_doc, {"train": train_cfg.seed, "holdout": holdout_seed})
    out = Path(args.out)
    manifest.artifacts = ["scores.csv", "ood_report.json"]
    with atomic_path(out / "scores.csv") as tmp:
        write_scores(tmp, in_ids, in_s, ds_out.ids, out_s)
    rep = {"detector": args.detector, "in": args.in_data, "out": args.out_dist, **ood_report(in_s, out_s)}
    if "odin" in config_doc:
        rep["odin"] = config_doc["odin"]
    rep["manifest"] = manifest.hash
    write_json(out / "ood_report.json", rep)
    manifest.write(out)
    print(" ".join(f"{k} {100 * rep[k]:.2f}" for k in ("fpr_at_95_tpr", "detection_error", "auroc",
                                                        "aupr_in", "aupr_out")))
    return 0


def cmd_active(args) -> int:
    cfg: RunConfig = load_config(args.config)
    pool, test = cfg.data.load("train"), cfg.data.load("test")
    state = run_active_loop(pool, test, cfg.train, cfg.active)
    out = Path(args.out)
    manifest = Manifest("active", cfg.to_dict(), {"run": cfg.active.seed, "train": cfg.train.seed})
    manifest.artifacts = ["stage_log.csv", "queries.json"]
    with atomic_path(out / "stage_log.csv") as tmp:
        write_stage_log(tmp, state, cfg.active)
    with atomic_path(out / "queries.json") as tmp:
        write_queries(tmp, state)
    manifest.write(out)
    for s, acc in enumerate(state.accuracy_log, start=1):
        print(f"stage {s:2d}  test acc {100 * acc:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crl", description="Correctness Ranking Loss experiments")
    p.add_argument("--version", action="version", version=f"crl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a baseline or CRL model")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--ece-bins", type=int, default=metrics.DEFAULT_ECE_BINS)
    t.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("ensemble-eval", cmd_ensemble_eval)):
        e = sub.add_parser(name, help="write predictions and the metric report")
        if name == "eval":
            e.add_argument("--model", required=True)
        else:
            e.add_argument("--models", nargs="+", required=True)
        e.add_argument("--data", default="test", help="split name (train/test/ood), a .csv file or idx:IMAGES,LABELS")
        e.add_argument("--out", required=True)
        e.add_argument("--ece-bins", type=int, default=metrics.DEFAULT_ECE_BINS)
        e.add_argument("--entropy-scaling", choices=["split", "frozen"], default="split",
                       help="min-max range for negative entropy: evaluation split or frozen from training")
        e.set_defaults(func=func)

    o = sub.add_parser("ood", help="score in- vs out-of-distribution data")
    o.add_argument("--model", required=True)
    o.add_argument("--in", dest="in_data", default="test")
    o.add_argument("--out-dist", default="ood")
    o.add_argument("--detector", choices=["msp", "odin", "mahalanobis"], default="msp")
    o.add_argument("--tune", action="store_true", help="grid-search ODIN (T, eps) on the hold-out split")
    o.add_argument("--holdout", default="holdout-ood")
    o.add_argument("--holdout-in", default="holdout-in")
    o.add_argument("--temperature", type=float, default=1000.0)
    o.add_argument("--epsilon", type=float, default=0.0)
    o.add_argument("--fit-data", default="train", help="split used to fit the Mahalanobis detector")
    o.add_argument("--exclude-misclassified", action="store_true")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_ood)

    a = sub.add_parser("active", help="staged active-learning run")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_active)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CRL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
