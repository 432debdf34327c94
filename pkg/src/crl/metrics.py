"""Confidence-quality metrics: risk-coverage, AURC/E-AURC, AUPR, AUROC,
FPR at a target TPR, detection error, ECE, NLL and Brier score.

Ranking metrics take ``(scores, positive_flags)`` arrays. Record-level
metrics take a sequence of :class:`PredictionRecord`.
"""
from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .nn import PROB_FLOOR

DEFAULT_ECE_BINS = 15


@dataclass(frozen=True)
class PredictionRecord:
    id: int
    label: int
    predicted: int
    probs: tuple[float, ...]
    confidence: float
    correct: bool

    def __post_init__(self):
        if self.correct != (self.predicted == self.label):
            raise ValueError(f"record {self.id}: correct flag disagrees with predicted/label")

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "label": self.label, "pred": self.predicted,
                           "probs": list(self.probs), "kappa": self.confidence, "correct": self.correct})

    @classmethod
    def from_json(cls, line: str) -> "PredictionRecord":
        d = json.loads(line)
        return cls(int(d["id"]), int(d["label"]), int(d["pred"]), tuple(float(p) for p in d["probs"]),
                   float(d["kappa"]), bool(d["correct"]))


def make_records(ids, labels, probs, confidence) -> list[PredictionRecord]:
    probs = np.asarray(probs, dtype=np.float64)
    pred = np.argmax(probs, axis=1)
    return [PredictionRecord(int(i), int(y), int(p), tuple(map(float, row)), float(k), bool(p == y))
            for i, y, p, row, k in zip(ids, labels, pred, probs, confidence)]


def write_predictions(records: Iterable[PredictionRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    with open(path) as fh:
        return [PredictionRecord.from_json(line) for line in fh if line.strip()]


def _columns(records: Sequence[PredictionRecord]):
    if len(records) == 0:
        raise ValueError("no prediction records")
    ids = np.array([r.id for r in records], dtype=np.int64)
    kappa = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=bool)
    return ids, kappa, correct


@dataclass(frozen=True)
class RiskCoveragePoint:
    coverage: float
    risk: float


def _ranked_errors(ids, kappa, correct) -> np.ndarray:
    # descending confidence, ties by ascending id
    order = np.lexsort((ids, -kappa))
    return (~correct[order]).astype(np.float64)


def _prefix_risks(errors: np.ndarray) -> np.ndarray:
    return np.cumsum(errors) / np.arange(1, len(errors) + 1)


def risk_coverage(records) -> list[RiskCoveragePoint]:
    ids, kappa, correct = _columns(records)
    risks = _prefix_risks(_ranked_errors(ids, kappa, correct))
    n = len(risks)
    return [RiskCoveragePoint((m + 1) / n, float(r)) for m, r in enumerate(risks)]


def aurc_eaurc(records) -> tuple[float, float]:
    """AURC as the mean of the n prefix risks, and its excess over the best ordering."""
    ids, kappa, correct = _columns(records)
    aurc = float(np.mean(_prefix_risks(_ranked_errors(ids, kappa, correct))))
    optimal = float(np.mean(_prefix_risks(np.sort((~correct).astype(np.float64)))))
    return aurc, max(aurc - optimal, 0.0)


def _check_binary(scores, flags, need_negative: bool):
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if scores.shape != flags.shape or scores.ndim != 1:
        raise ValueError("scores and flags must be 1-D arrays of equal length")
    if not flags.any():
        raise ValueError("need at least one positive")
    if need_negative and flags.all():
        raise ValueError("need at least one negative")
    return scores, flags


def _threshold_counts(scores, flags):
    """TP and FP counts when predicting positive for score >= t, t over distinct scores, descending."""
    order = np.argsort(-scores, kind="stable")
    s, f = scores[order], flags[order]
    tp = np.cumsum(f)
    fp = np.cumsum(~f)
    last_of_block = np.r_[s[1:] != s[:-1], True]
    return s[last_of_block], tp[last_of_block].astype(np.float64), fp[last_of_block].astype(np.float64)


def aupr(scores, positive_flags) -> float:
    """Trapezoidal area under precision-recall, anchored at (recall 0, precision 1)."""
    scores, flags = _check_binary(scores, positive_flags, need_negative=False)
    _, tp, fp = _threshold_counts(scores, flags)
    recall = np.r_[0.0, tp / flags.sum()]
    precision = np.r_[1.0, tp / (tp + fp)]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


def auroc(scores, positive_flags) -> float:
    """P(positive score > negative score) + 0.5 P(tie), via average ranks."""
    scores, flags = _check_binary(scores, positive_flags, need_negative=True)
    ranks = rankdata(scores)
    n_pos, n_neg = flags.sum(), (~flags).sum()
    return float((ranks[flags].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def fpr_at_tpr(scores, positive_flags, target_tpr: float = 0.95) -> float:
    """FPR at the largest observed-score threshold whose TPR reaches ``target_tpr``."""
    scores, flags = _check_binary(scores, positive_flags, need_negative=True)
    _, tp, fp = _threshold_counts(scores, flags)
    tpr = tp / flags.sum()
    first = int(np.argmax(tpr >= target_tpr))
    return float(fp[first] / (~flags).sum())


def detection_error(in_scores, out_scores) -> float:
    """min over thresholds of 0.5 * (FPR + FNR), in-distribution scoring high."""
    in_scores = np.asarray(in_scores, dtype=np.float64)
    out_scores = np.asarray(out_scores, dtype=np.float64)
    if len(in_scores) == 0 or len(out_scores) == 0:
        raise ValueError("both score sets must be non-empty")
    scores = np.r_[in_scores, out_scores]
    flags = np.r_[np.ones(len(in_scores), bool), np.zeros(len(out_scores), bool)]
    _, tp, fp = _threshold_counts(scores, flags)
    fnr = 1.0 - tp / len(in_scores)
    fpr = fp / len(out_scores)
    # the "reject everything" threshold above the maximum score
    return float(min(0.5, np.min(0.5 * (fpr + fnr))))


def ece(records, num_bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error over equal-width bins ((m-1)/M, m/M]."""
    if num_bins < 1:
        raise ValueError("need at least one bin")
    _, kappa, correct = _columns(records)
    if np.any(kappa < 0.0) or np.any(kappa > 1.0):
        raise ValueError("confidence values must lie in [0, 1] for ECE")
    edges = np.arange(num_bins + 1) / num_bins
    bins = np.maximum(np.searchsorted(edges, kappa, side="left") - 1, 0)
    # sum_m |B_m|/n * |acc_m - conf_m| == sum_m |sum_{i in B_m} (correct_i - kappa_i)| / n,
    # accumulated exactly and rounded once
    gaps = [Fraction(0)] * num_bins
    for m, c, k in zip(bins.tolist(), correct.tolist(), kappa.tolist()):
        gaps[m] += int(c) - Fraction(k)
    return float(sum(abs(g) for g in gaps) / len(kappa))


def _probs_labels(records):
    probs = np.array([r.probs for r in records], dtype=np.float64)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return probs, labels


def nll(records) -> float:
    """Per-sample mean negative log-likelihood."""
    if len(records) == 0:
        raise ValueError("no prediction records")
    probs, labels = _probs_labels(records)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError("label out of range")
    return float(np.mean(-np.log(np.maximum(probs[np.arange(len(labels)), labels], PROB_FLOOR))))


def brier(records) -> float:
    if len(records) == 0:
        raise ValueError("no prediction records")
    probs, labels = _probs_labels(records)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


def accuracy(records) -> float:
    return float(np.mean([r.correct for r in records]))


def metrics_report(records, num_bins: int = DEFAULT_ECE_BINS) -> dict:
    """Nine confidence/calibration metrics plus the risk-coverage points.

    Values are unscaled. AUPR-Error scores by negative confidence with errors as
    positives; FPR-at-95%-TPR and AUROC treat correct predictions as positives.
    Metrics needing both classes are ``None`` when every prediction is right (or wrong).
    """
    ids, kappa, correct = _columns(records)
    aurc, e_aurc = aurc_eaurc(records)
    both = correct.any() and (~correct).any()
    return {
        "n": len(records),
        "accuracy": accuracy(records),
        "aurc": aurc,
        "e_aurc": e_aurc,
        "aupr_error": aupr(-kappa, ~correct) if (~correct).any() else None,
        "fpr_at_95_tpr": fpr_at_tpr(kappa, correct, 0.95) if both else None,
        "auroc": auroc(kappa, correct) if both else None,
        "ece": ece(records, num_bins),
        "nll": nll(records),
        "brier": brier(records),
        "ece_bins": num_bins,
        "conventions": {
            "aurc": "mean of n prefix risks, confidence descending, ties by ascending id",
            "nll": "per-sample mean",
            "aupr_error": "score=-confidence, positives=misclassified",
            "fpr_at_95_tpr": "score=confidence, positives=correct",
        },
        "risk_coverage": [[p.coverage, p.risk] for p in risk_coverage(records)],
    }


def format_table_row(report: dict) -> str:
    """Human-readable row; AURC/E-AURC x1e3, NLL x10, the rest in percent."""
    def pct(v):
        return "   n/a" if v is None else f"{100 * v:6.2f}"

    return (f"acc {pct(report['accuracy'])}  AURC(x1e3) {1e3 * report['aurc']:7.2f}  "
            f"E-AURC(x1e3) {1e3 * report['e_aurc']:7.2f}  AUPR-Err {pct(report['aupr_error'])}  "
            f"FPR95 {pct(report['fpr_at_95_tpr'])}  ECE {pct(report['ece'])}  "
            f"NLL(x10) {10 * report['nll']:6.3f}  Brier {pct(report['brier'])}")
