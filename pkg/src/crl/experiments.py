"""Desk-scale experiment presets: noisy 4-class blobs, a 2-32-32-4 MLP, 60 epochs.

Shared by ``scripts/`` and the acceptance tests so both run the same protocol.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .active import AlConfig, run_active_loop
from .data import BlobSpec, Dataset, gen_blobs
from .ood import (OdinConfig, mahalanobis_fit, mahalanobis_model_score, msp_score, odin_grid_search, odin_score,
                  ood_report)
from .nn import penultimate_features
from .train import TrainConfig, TrainResult, evaluate, train_model

SEEDS = (0, 1, 2, 3, 4)

RANKING_TRAIN = TrainConfig(lam=1.0, kappa_kind="max_prob", batch_size=128, epochs=60, lr=0.1, momentum=0.9,
                            weight_decay=1e-4, milestones=[30, 50], decay_factor=0.1, hidden=[32, 32])
ACTIVE_TRAIN = replace(RANKING_TRAIN, batch_size=32, milestones=[36, 48])
OOD_OFFSET_STDS = 6.0


def ranking_data(seed: int, noise: float = 0.1) -> tuple[Dataset, Dataset]:
    """2,000 train and 2,000 test points, 4 unit-std blobs on a radius-3 ring."""
    train = gen_blobs(BlobSpec(4, 2, 500, std=1.0, radius=3.0, overlap_noise=noise, seed=1000 + seed))
    test = gen_blobs(BlobSpec(4, 2, 500, std=1.0, radius=3.0, overlap_noise=noise, seed=2000 + seed), "test")
    return train, test


def holdout_data(seed: int) -> tuple[Dataset, Dataset]:
    """In-distribution validation split and its translated copy for ODIN tuning."""
    val = gen_blobs(BlobSpec(4, 2, 250, std=1.0, radius=3.0, overlap_noise=0.1, seed=5000 + seed), "val")
    return val, val.translated(OOD_OFFSET_STDS)


@dataclass
class PairedRun:
    seed: int
    baseline: TrainResult
    crl: TrainResult
    baseline_report: dict
    crl_report: dict


def ranking_pair(seed: int, kappa_kind: str = "max_prob", lam: float = 1.0) -> PairedRun:
    train, test = ranking_data(seed)
    runs = {}
    for name, l in (("baseline", 0.0), ("crl", lam)):
        cfg = replace(RANKING_TRAIN, lam=l, kappa_kind=kappa_kind, seed=seed)
        res = train_model(cfg, train, test)
        runs[name] = (res, metrics.metrics_report(evaluate(res.model, test, kappa_kind)))
    return PairedRun(seed, runs["baseline"][0], runs["crl"][0], runs["baseline"][1], runs["crl"][1])


def ood_scores(res: TrainResult, seed: int, tune: bool = True) -> dict:
    """AUROC-bearing reports for MSP, tuned ODIN and Mahalanobis on the translated test split."""
    train, test = ranking_data(seed)
    ood = test.translated(OOD_OFFSET_STDS)
    model = res.model
    out = {"msp": ood_report(msp_score(model, test.inputs), msp_score(model, ood.inputs))}
    cfg = OdinConfig(1.0, 0.0)
    if tune:
        val, val_ood = holdout_data(seed)
        cfg = odin_grid_search(model, val.inputs, val_ood.inputs)
    out["odin"] = ood_report(odin_score(model, test.inputs, cfg), odin_score(model, ood.inputs, cfg))
    out["odin"]["config"] = {"temperature": cfg.temperature, "epsilon": cfg.epsilon}
    fit = mahalanobis_fit(penultimate_features(model, train.inputs), train.labels, train.num_classes)
    out["mahalanobis"] = ood_report(mahalanobis_model_score(model, fit, test.inputs),
                                    mahalanobis_model_score(model, fit, ood.inputs))
    return out


def active_data(seed: int) -> tuple[Dataset, Dataset]:
    pool = gen_blobs(BlobSpec(4, 2, 500, std=1.0, radius=3.0, seed=3000 + seed))
    test = gen_blobs(BlobSpec(4, 2, 500, std=1.0, radius=3.0, seed=4000 + seed), "test")
    return pool, test


def active_run(seed: int, strategy: str, lam: float, keep_models: bool = False, stages: int = 10):
    pool, test = active_data(seed)
    train_cfg = replace(ACTIVE_TRAIN, lam=lam, seed=seed)
    al_cfg = AlConfig(initial_size=100, per_stage=100, stages=stages, pool_subset=1000, strategy=strategy, seed=seed)
    return run_active_loop(pool, test, train_cfg, al_cfg, keep_models=keep_models)


def summarize_pairs(runs: list[PairedRun], key: str = "e_aurc") -> dict:
    base = np.array([r.baseline_report[key] for r in runs])
    crl = np.array([r.crl_report[key] for r in runs])
    return {"baseline_mean": float(base.mean()), "crl_mean": float(crl.mean()),
            "crl_lower_count": int(np.sum(crl < base)), "n": len(runs)}
