"""Staged active learning with from-scratch retraining.

Every stage trains a fresh model on the labeled pool with an init seed that
depends only on (run seed, stage), so different query strategies share their
stage-1 model exactly.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, substream
from .nn import MlpModel, penultimate_features
from .ranking import confidence_score, neg_entropy
from .train import TrainConfig, predict_probs, train_model, evaluate
from . import metrics

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    RANDOM = "random"
    ENTROPY = "entropy"
    LEAST_CONFIDENCE = "least_confidence"
    CORESET = "coreset"


@dataclass
class AlConfig:
    initial_size: int = 100
    per_stage: int = 100
    stages: int = 10
    pool_subset: int = 1000
    strategy: str = "least_confidence"
    seed: int = 0

    def __post_init__(self):
        self.strategy = Strategy(self.strategy).value
        if self.pool_subset < self.per_stage:
            raise ValueError("pool_subset must be >= per_stage")
        if self.initial_size < 1 or self.stages < 1:
            raise ValueError("initial_size and stages must be positive")

    def check_dataset(self, n: int) -> None:
        need = self.initial_size + (self.stages - 1) * self.per_stage
        if need > n:
            raise ValueError(f"active-learning schedule needs {need} samples, dataset has {n}")


@dataclass
class AlState:
    labeled_ids: list[int]
    unlabeled_ids: list[int]
    stage: int = 0
    accuracy_log: list[float] = field(default_factory=list)
    queried: list[list[int]] = field(default_factory=list)
    models: list[MlpModel] = field(default_factory=list)


def stage_seed(run_seed: int, stage: int) -> int:
    """Model-init seed for a stage: a pure function of (run seed, stage)."""
    return int(substream(run_seed, "stage-init", stage).integers(2**63))


def _min_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = np.sqrt(((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
    return d.min(axis=1)


def kcenter_greedy(labeled_feats, candidate_feats, k: int) -> list[int]:
    """Repeatedly take the candidate farthest (l2) from the labeled and already-chosen points."""
    labeled = np.atleast_2d(np.asarray(labeled_feats, dtype=np.float64))
    cand = np.atleast_2d(np.asarray(candidate_feats, dtype=np.float64))
    if len(labeled) == 0:
        raise ValueError("k-center greedy needs a non-empty labeled set")
    if k > len(cand):
        raise ValueError(f"asked for {k} centers from {len(cand)} candidates")
    dist = _min_dists(cand, labeled)
    chosen: list[int] = []
    for _ in range(k):
        dist[chosen] = -np.inf
        pick = int(np.argmax(dist))
        chosen.append(pick)
        dist = np.minimum(dist, _min_dists(cand, cand[pick:pick + 1]))
    return chosen


def select_queries(model: MlpModel, state: AlState, cfg: AlConfig, pool: Dataset, stage: int) -> list[int]:
    """Pick ``cfg.per_stage`` ids from a stage-seeded random subset of the unlabeled pool."""
    unlabeled = np.array(state.unlabeled_ids, dtype=np.int64)
    if len(unlabeled) < cfg.per_stage:
        raise ValueError("unlabeled pool exhausted")
    rng = substream(cfg.seed, "pool", stage)
    subset = rng.choice(unlabeled, size=min(cfg.pool_subset, len(unlabeled)), replace=False)
    strategy = Strategy(cfg.strategy)
    if strategy is Strategy.RANDOM:
        return [int(i) for i in subset[:cfg.per_stage]]
    cand = pool.by_ids(subset)
    if strategy is Strategy.CORESET:
        labeled = pool.by_ids(state.labeled_ids)
        picks = kcenter_greedy(penultimate_features(model, labeled.inputs),
                               penultimate_features(model, cand.inputs), cfg.per_stage)
        return [int(subset[p]) for p in picks]
    probs = predict_probs(model, cand.inputs)
    if strategy is Strategy.ENTROPY:
        priority = neg_entropy(probs)  # most uncertain first
    else:
        priority = confidence_score(probs, "max_prob")
    order = np.argsort(priority, kind="stable")
    return [int(subset[p]) for p in order[:cfg.per_stage]]


def run_active_loop(pool: Dataset, test: Dataset, train_cfg: TrainConfig, cfg: AlConfig,
                    keep_models: bool = False) -> AlState:
    cfg.check_dataset(len(pool))
    ids = [int(i) for i in pool.ids]
    first = substream(cfg.seed, "initial").choice(len(ids), size=cfg.initial_size, replace=False)
    labeled = [ids[p] for p in sorted(first)]
    chosen = set(labeled)
    state = AlState(labeled, [i for i in ids if i not in chosen])
    for stage in range(1, cfg.stages + 1):
        state.stage = stage
        labeled_ds = pool.by_ids(state.labeled_ids)
        result = train_model(train_cfg, labeled_ds, init_seed=stage_seed(cfg.seed, stage))
        acc = metrics.accuracy(evaluate(result.model, test))
        state.accuracy_log.append(acc)
        if keep_models:
            state.models.append(result.model)
        log.info("stage %d strategy %s labeled %d acc %.4f", stage, cfg.strategy, len(state.labeled_ids), acc)
        if stage == cfg.stages:
            break
        picks = select_queries(result.model, state, cfg, pool, stage)
        state.queried.append(picks)
        picked = set(picks)
        state.labeled_ids = sorted(state.labeled_ids + picks)
        state.unlabeled_ids = [i for i in state.unlabeled_ids if i not in picked]
    return state


def write_stage_log(path, state: AlState, cfg: AlConfig, initial_size: int | None = None) -> None:
    """CSV ``stage,labeled_count,test_accuracy,strategy,seed``."""
    start = cfg.initial_size if initial_size is None else initial_size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "labeled_count", "test_accuracy", "strategy", "seed"])
        for s, acc in enumerate(state.accuracy_log, start=1):
            w.writerow([s, start + (s - 1) * cfg.per_stage, repr(acc), cfg.strategy, cfg.seed])


def write_queries(path, state: AlState) -> None:
    with open(path, "w") as fh:
        json.dump(state.queried, fh)
