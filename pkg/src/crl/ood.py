"""Out-of-distribution scoring: MSP, ODIN and a tied-covariance Mahalanobis detector.

Every score is "higher means more in-distribution".
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from . import metrics
from .nn import MlpModel, forward_logits, input_gradient, penultimate_features, softmax_probs

ODIN_TEMPERATURES = (1.0, 10.0, 100.0, 1000.0)
ODIN_EPSILONS = (0.0, 1e-4, 5e-4, 1e-3, 2e-3)


@dataclass(frozen=True)
class OdinConfig:
    temperature: float = 1000.0
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.temperature >= 1.0:
            raise ValueError("ODIN temperature must be >= 1")
        if not self.epsilon >= 0.0:
            raise ValueError("ODIN epsilon must be >= 0")

    def check_scale(self, x) -> None:
        """Reject perturbations larger than the per-feature input spread."""
        std = float(np.std(np.asarray(x, dtype=np.float64)))
        if self.epsilon > std:
            raise ValueError(f"epsilon {self.epsilon} exceeds input std {std:.3g}")


def msp_score(model: MlpModel, x) -> np.ndarray:
    logits, _ = forward_logits(model, x)
    return softmax_probs(logits).max(axis=1)


def odin_score(model: MlpModel, x, cfg: OdinConfig) -> np.ndarray:
    """Max temperature-scaled softmax after a gradient-sign step that raises it."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if cfg.epsilon > 0:
        grad = input_gradient(model, x, cfg.temperature)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite input gradient in ODIN perturbation")
        x = x - cfg.epsilon * np.sign(grad)
    logits, _ = forward_logits(model, x)
    return softmax_probs(logits, cfg.temperature).max(axis=1)


@dataclass
class MahalanobisFit:
    class_means: np.ndarray
    shared_precision: np.ndarray
    covariance: np.ndarray
    ridge: float = 0.0

    @property
    def feature_dim(self) -> int:
        return self.class_means.shape[1]

    @classmethod
    def from_moments(cls, class_means, covariance, ridge: float = 0.0) -> "MahalanobisFit":
        cov = np.asarray(covariance, dtype=np.float64)
        cov = cov + ridge * np.eye(len(cov))
        precision = np.linalg.inv(cov)
        return cls(np.asarray(class_means, dtype=np.float64), (precision + precision.T) / 2.0, cov, ridge)


def _canonical_rows(a: np.ndarray) -> np.ndarray:
    # fixed summation order, so the fit does not depend on sample order
    return a[np.lexsort(a.T[::-1])] if len(a) else a


def mahalanobis_fit(features, labels, num_classes: int | None = None) -> MahalanobisFit:
    """Class means and a ridge-regularized pooled within-class covariance."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    n, d = features.shape
    means = np.zeros((k, d))
    scatter = np.zeros((d, d))
    for c in range(k):
        rows = _canonical_rows(features[labels == c])
        if len(rows) < 2:
            raise ValueError(f"class {c} has {len(rows)} samples; need at least 2")
        means[c] = rows.mean(axis=0)
        centred = rows - means[c]
        scatter += centred.T @ centred
    cov = scatter / n
    trace = float(np.trace(cov))
    ridge = 1e-6 * trace / d if trace > 0 else 1e-6
    return MahalanobisFit.from_moments(means, cov, ridge)


def mahalanobis_score(fit: MahalanobisFit, features) -> np.ndarray:
    """max_k of -(f - mu_k)^T P (f - mu_k) for each feature row."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if f.shape[1] != fit.feature_dim:
        raise ValueError(f"feature dim {f.shape[1]} does not match fit dim {fit.feature_dim}")
    diff = f[:, None, :] - fit.class_means[None, :, :]
    dist = np.einsum("nkd,de,nke->nk", diff, fit.shared_precision, diff)
    return -dist.min(axis=1)


def mahalanobis_model_score(model: MlpModel, fit: MahalanobisFit, x) -> np.ndarray:
    return mahalanobis_score(fit, penultimate_features(model, x))


def ood_report(in_scores, out_scores) -> dict:
    """Five detection metrics; in-distribution is the positive class except for AUPR-Out."""
    in_scores = np.asarray(in_scores, dtype=np.float64)
    out_scores = np.asarray(out_scores, dtype=np.float64)
    if len(in_scores) == 0 or len(out_scores) == 0:
        raise ValueError("both score sets must be non-empty")
    scores = np.r_[in_scores, out_scores]
    is_in = np.r_[np.ones(len(in_scores), bool), np.zeros(len(out_scores), bool)]
    return {
        "fpr_at_95_tpr": metrics.fpr_at_tpr(scores, is_in, 0.95),
        "detection_error": metrics.detection_error(in_scores, out_scores),
        "auroc": metrics.auroc(scores, is_in),
        "aupr_in": metrics.aupr(scores, is_in),
        "aupr_out": metrics.aupr(-scores, ~is_in),
    }


def odin_grid(temperatures=ODIN_TEMPERATURES, epsilons=ODIN_EPSILONS) -> list[OdinConfig]:
    return [OdinConfig(t, e) for t, e in itertools.product(sorted(temperatures), sorted(epsilons))]


def odin_grid_search(model: MlpModel, in_val, ood_holdout, grid=None) -> OdinConfig:
    """Config with the lowest hold-out FPR at 95% TPR; ties go to the lowest (T, eps)."""
    grid = odin_grid() if grid is None else sorted(grid, key=lambda c: (c.temperature, c.epsilon))
    if not grid:
        raise ValueError("empty ODIN grid")
    best, best_fpr = None, np.inf
    for cfg in grid:
        fpr = ood_report(odin_score(model, in_val, cfg), odin_score(model, ood_holdout, cfg))["fpr_at_95_tpr"]
        if fpr < best_fpr:
            best, best_fpr = cfg, fpr
    return best


def write_scores(path, in_ids, in_scores, out_ids, out_scores) -> None:
    """Dump ``id,source,score`` rows, in-distribution first, each ordered by id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "source", "score"])
        for source, ids, scores in (("in", in_ids, in_scores), ("out", out_ids, out_scores)):
            for i in np.argsort(ids, kind="stable"):
                w.writerow([int(ids[i]), source, repr(float(scores[i]))])
