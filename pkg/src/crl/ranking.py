"""Correctness Ranking Loss.

A sample's correctness proportion ``c`` is the fraction of mini-batch
examinations in which it was classified correctly. The loss asks each pair's
confidence ordering to agree with the ordering of their ``c`` values, with a
margin of ``|c_i - c_j|``::

    L(i, j) = max(0, -sign(c_i - c_j) * (kappa_i - kappa_j) + |c_i - c_j|)

Only ``b`` pairs per mini-batch are used: position ``i`` is paired with
``i + 1`` and the last position wraps to the first.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import PROB_FLOOR, ce_grad_logits, ce_loss, softmax_backward


class ConfidenceKind(str, enum.Enum):
    MAX_PROB = "max_prob"
    NEG_ENTROPY = "neg_entropy"
    MARGIN = "margin"

    @classmethod
    def parse(cls, value) -> "ConfidenceKind":
        if isinstance(value, cls):
            return value
        aliases = {"maxprob": cls.MAX_PROB, "softmax": cls.MAX_PROB, "negentropy": cls.NEG_ENTROPY,
                   "entropy": cls.NEG_ENTROPY}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


class CorrectnessHistory:
    """Per-sample counters of correct predictions and examinations.

    Samples are addressed by their position ``0..n-1`` in the training set.
    """

    def __init__(self, n: int):
        self.correct_counts = np.zeros(n, dtype=np.int64)
        self.exam_counts = np.zeros(n, dtype=np.int64)

    def __len__(self):
        return len(self.exam_counts)

    def update(self, sample_ids, correct_flags) -> None:
        ids = np.asarray(sample_ids, dtype=np.int64)
        flags = np.asarray(correct_flags, dtype=bool)
        if ids.shape != flags.shape:
            raise ValueError("sample_ids and correct_flags must have the same length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate sample id in one update (sample examined twice in one step)")
        self.exam_counts[ids] += 1
        self.correct_counts[ids[flags]] += 1

    def proportion(self, sample_id: int) -> float:
        exams = self.exam_counts[sample_id]
        return float(self.correct_counts[sample_id] / exams) if exams else 0.0

    def proportions(self, sample_ids=None) -> np.ndarray:
        ids = np.arange(len(self)) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
        exams = self.exam_counts[ids]
        out = np.zeros(len(ids))
        seen = exams > 0
        out[seen] = self.correct_counts[ids][seen] / exams[seen]
        return out

    def snapshot(self) -> "CorrectnessHistory":
        h = CorrectnessHistory(0)
        h.correct_counts = self.correct_counts.copy()
        h.exam_counts = self.exam_counts.copy()
        return h

    def write_csv(self, path, sample_ids=None) -> None:
        """Dump ``sample_id,correct_count,exam_count,proportion``."""
        ids = np.arange(len(self)) if sample_ids is None else np.asarray(sample_ids)
        props = self.proportions()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "correct_count", "exam_count", "proportion"])
            for pos in range(len(self)):
                w.writerow([int(ids[pos]), int(self.correct_counts[pos]), int(self.exam_counts[pos]),
                            repr(float(props[pos]))])

    @classmethod
    def read_csv(cls, path) -> tuple["CorrectnessHistory", np.ndarray]:
        rows = list(csv.DictReader(Path(path).read_text().splitlines()))
        h = cls(len(rows))
        h.correct_counts[:] = [int(r["correct_count"]) for r in rows]
        h.exam_counts[:] = [int(r["exam_count"]) for r in rows]
        return h, np.array([int(r["sample_id"]) for r in rows], dtype=np.int64)


def _top2(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # stable: among equal probabilities the lower class index ranks first
    order = np.argsort(-probs, axis=1, kind="stable")
    return order[:, 0], order[:, 1]


def neg_entropy(probs: np.ndarray) -> np.ndarray:
    return np.sum(probs * np.log(np.maximum(probs, PROB_FLOOR)), axis=1)


def confidence_score(probs, kind, entropy_range: tuple[float, float] | None = None) -> np.ndarray:
    """Confidence per row of ``probs``.

    NegEntropy is min-max scaled over the rows given (or over a frozen
    ``entropy_range`` of raw negative entropies, clipped to [0, 1]); a batch
    whose negative entropies are all equal maps to 0.5.
    """
    kind = ConfidenceKind.parse(kind)
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    rows = np.arange(len(probs))
    if kind is ConfidenceKind.MAX_PROB:
        return probs[rows, _top2(probs)[0]] if probs.shape[1] > 1 else probs[:, 0].copy()
    if kind is ConfidenceKind.MARGIN:
        if probs.shape[1] < 2:
            raise ValueError("margin confidence needs at least two classes")
        first, second = _top2(probs)
        return probs[rows, first] - probs[rows, second]
    h = neg_entropy(probs)
    lo, hi = (h.min(), h.max()) if entropy_range is None else entropy_range
    if hi <= lo:
        return np.full(len(h), 0.5)
    return np.clip((h - lo) / (hi - lo), 0.0, 1.0)


def confidence_backward(probs: np.ndarray, kind, dkappa: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``probs`` of ``sum(dkappa * confidence_score(probs, kind))``.

    Ties use the subgradient of the stable argmax. For NegEntropy the batch min
    and max are differentiated too, since they depend on the batch rows.
    """
    kind = ConfidenceKind.parse(kind)
    rows = np.arange(len(probs))
    dprobs = np.zeros_like(probs)
    if kind is ConfidenceKind.MAX_PROB:
        first, _ = _top2(probs)
        dprobs[rows, first] = dkappa
        return dprobs
    if kind is ConfidenceKind.MARGIN:
        first, second = _top2(probs)
        dprobs[rows, first] += dkappa
        dprobs[rows, second] -= dkappa
        return dprobs
    h = neg_entropy(probs)
    i_lo, i_hi = int(np.argmin(h)), int(np.argmax(h))
    span = h[i_hi] - h[i_lo]
    if span <= 0:
        return dprobs
    scaled = (h - h[i_lo]) / span
    dh = dkappa / span
    dh[i_hi] -= np.sum(dkappa * scaled) / span
    dh[i_lo] += np.sum(dkappa * (scaled - 1.0)) / span
    dlogp = np.where(probs > PROB_FLOOR, np.log(np.maximum(probs, PROB_FLOOR)) + 1.0, np.log(PROB_FLOOR))
    return dh[:, None] * dlogp


def make_pairs(b: int) -> list[tuple[int, int]]:
    if b < 2:
        raise ValueError(f"pairing needs a batch of at least 2, got {b}")
    return [(i, (i + 1) % b) for i in range(b)]


def _check_unit(name, values):
    v = np.asarray(values, dtype=np.float64)
    if np.any(~np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return v


def crl_pair_loss(c_i, c_j, kappa_i, kappa_j):
    """Ranking hinge for one pair (or elementwise over arrays).

    Returns ``(loss, d_kappa_i, d_kappa_j)``. At the kink the zero subgradient is used.
    """
    c_i, c_j = _check_unit("c_i", c_i), _check_unit("c_j", c_j)
    kappa_i, kappa_j = _check_unit("kappa_i", kappa_i), _check_unit("kappa_j", kappa_j)
    g = np.sign(c_i - c_j)
    arg = -g * (kappa_i - kappa_j) + np.abs(c_i - c_j)
    active = arg > 0
    loss = np.where(active, arg, 0.0)
    d_i = np.where(active, -g, 0.0)
    if np.ndim(loss) == 0:
        return float(loss), float(d_i), float(-d_i)
    return loss, d_i, -d_i


@dataclass
class LossParts:
    total: float
    ce: float
    crl: float


def batch_total_loss(probs, labels, kappa, c, pairs, lam: float) -> LossParts:
    """CE (batch mean) plus ``lam`` times the mean ranking loss over ``pairs``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ce = ce_loss(probs, labels)
    if not pairs:
        return LossParts(ce, ce, 0.0)
    i, j = np.array(pairs).T
    c, kappa = np.asarray(c, dtype=np.float64), np.asarray(kappa, dtype=np.float64)
    losses, _, _ = crl_pair_loss(c[i], c[j], kappa[i], kappa[j])
    crl = float(np.mean(losses))
    return LossParts(ce + lam * crl, ce, crl)


def objective_and_grad(probs, labels, c, kind, lam: float, use_crl: bool = True):
    """Batch objective and its gradient w.r.t. the logits.

    ``c`` holds the (constant) correctness proportions of the batch rows. The
    ranking term is skipped when ``use_crl`` is false or the batch has fewer
    than two rows.
    """
    probs = np.asarray(probs, dtype=np.float64)
    dlogits = ce_grad_logits(probs, labels)
    b = len(probs)
    if not use_crl or b < 2:
        ce = ce_loss(probs, labels)
        return LossParts(ce, ce, 0.0), dlogits
    pairs = make_pairs(b)
    kappa = confidence_score(probs, kind)
    parts = batch_total_loss(probs, labels, kappa, c, pairs, lam)
    i, j = np.array(pairs).T
    c = np.asarray(c, dtype=np.float64)
    _, d_i, d_j = crl_pair_loss(c[i], c[j], kappa[i], kappa[j])
    dkappa = np.zeros(b)
    np.add.at(dkappa, i, d_i / b)
    np.add.at(dkappa, j, d_j / b)
    dprobs = confidence_backward(probs, kind, dkappa)
    return parts, dlogits + lam * softmax_backward(probs, dprobs)
