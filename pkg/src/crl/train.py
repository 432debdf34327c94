"""Mini-batch training with optional Correctness Ranking Loss, plus evaluation
and checkpoint I/O."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics
from .data import Dataset, batch_schedule, substream
from .nn import (MlpModel, OptState, backward_grads, forward_logits, init_mlp, lr_at_epoch, sgd_momentum_step,
                 softmax_probs)
from .ranking import ConfidenceKind, CorrectnessHistory, confidence_score, neg_entropy, objective_and_grad

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "crl-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lam: float = 1.0
    kappa_kind: str = "max_prob"
    batch_size: int = 128
    epochs: int = 300
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    milestones: list[int] = field(default_factory=lambda: [150, 250])
    decay_factor: float = 0.1  # multiplicative: lr is scaled by this at each milestone
    hidden: list[int] = field(default_factory=lambda: [32, 32])
    disable_crl: bool = False
    crl_normalization: str = "mean over the b in-batch pairs"

    def __post_init__(self):
        self.kappa_kind = ConfidenceKind.parse(self.kappa_kind).value
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1 or (self.lam > 0 and not self.disable_crl and self.batch_size < 2):
            raise ValueError("batch_size must be >= 2 when the ranking loss is active")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        self.milestones = sorted(int(m) for m in self.milestones)
        self.hidden = [int(h) for h in self.hidden]

    @property
    def use_crl(self) -> bool:
        return not self.disable_crl

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainResult:
    model: MlpModel
    config: TrainConfig
    history: CorrectnessHistory
    epoch_log: list[dict]
    entropy_range: tuple[float, float]


def evaluate(model: MlpModel, ds: Dataset, kind="max_prob", entropy_range=None) -> list[metrics.PredictionRecord]:
    """Prediction records; NegEntropy is scaled over ``ds`` unless ``entropy_range`` is given."""
    logits, _ = forward_logits(model, ds.inputs)
    probs = softmax_probs(logits)
    kappa = confidence_score(probs, kind, entropy_range)
    return metrics.make_records(ds.ids, ds.labels, probs, kappa)


def predict_probs(model: MlpModel, x) -> np.ndarray:
    logits, _ = forward_logits(model, x)
    return softmax_probs(logits)


def train_model(cfg: TrainConfig, train: Dataset, test: Dataset | None = None,
                init_seed: int | None = None) -> TrainResult:
    """Train a fresh MLP.

    Each step: forward, mark correct predictions, update the correctness
    history, read the batch's proportions, then take the loss gradient.
    ``init_seed`` overrides the seed used for weight init (shuffling still uses ``cfg.seed``).
    """
    dims = [train.dim, *cfg.hidden, train.num_classes]
    model = init_mlp(dims, substream(cfg.seed if init_seed is None else init_seed, "init"))
    opt = OptState.for_model(model, cfg.lr, cfg.milestones, cfg.decay_factor)
    history = CorrectnessHistory(len(train))
    epoch_log = []
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        lr = lr_at_epoch(opt)
        ce_sum = crl_sum = 0.0
        n_correct = 0
        for pos in batch_schedule(len(train), cfg.batch_size, epoch, cfg.seed):
            logits, cache = forward_logits(model, train.inputs[pos])
            probs = softmax_probs(logits)
            labels = train.labels[pos]
            correct = np.argmax(probs, axis=1) == labels
            n_correct += int(correct.sum())
            if cfg.use_crl:
                history.update(pos, correct)
                c = history.proportions(pos)
            else:
                c = None
            parts, dlogits = objective_and_grad(probs, labels, c, cfg.kappa_kind, cfg.lam, cfg.use_crl)
            grads = backward_grads(model, cache, dlogits)
            params, opt = sgd_momentum_step(model.params(), grads, opt, lr, cfg.momentum, cfg.weight_decay)
            model = model.with_params(params)
            ce_sum += parts.ce * len(pos)
            crl_sum += parts.crl * len(pos)
        row = {"epoch": epoch + 1, "lr": lr, "ce": ce_sum / len(train), "crl": crl_sum / len(train),
               "train_acc": n_correct / len(train)}
        if test is not None and len(test):
            recs = evaluate(model, test, cfg.kappa_kind)
            aurc, e_aurc = metrics.aurc_eaurc(recs)
            row.update(test_acc=metrics.accuracy(recs), test_aurc=aurc, test_eaurc=e_aurc,
                       test_nll=metrics.nll(recs))
        epoch_log.append(row)
        log.debug("epoch %d %s", epoch + 1, row)
    h = neg_entropy(predict_probs(model, train.inputs)) if len(train) else np.zeros(1)
    return TrainResult(model, cfg, history, epoch_log, (float(h.min()), float(h.max())))


def save_checkpoint(path, model: MlpModel, cfg: TrainConfig, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(model.layer_dims),
        "activation": model.activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "train_config": asdict(cfg),
    }
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[MlpModel, TrainConfig, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    model = MlpModel(doc["layer_dims"], [np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in
                                         zip(doc["weights"], doc["layer_dims"][:-1], doc["layer_dims"][1:])],
                     [np.array(b, dtype=np.float64) for b in doc["biases"]], doc.get("activation", "relu"))
    return model, TrainConfig.from_dict(doc["train_config"]), doc
