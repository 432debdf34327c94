"""Random instance generators shared by unit and acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crl.nn import MlpModel, backward_grads, forward_logits, softmax_probs
from crl.ranking import objective_and_grad

import oracles

KINDS = ("max_prob", "margin", "neg_entropy")
KINK_GAP = 1e-3  # keep every non-smooth point this far away so h=1e-5 differences stay on one side


@dataclass
class GradCase:
    model: MlpModel
    x: np.ndarray
    y: np.ndarray
    c: np.ndarray
    kind: str
    lam: float


def _far_from_kinks(case: GradCase) -> bool:
    logits, cache = forward_logits(case.model, case.x)
    for z in cache.preacts[:-1]:
        if np.min(np.abs(z)) < KINK_GAP:
            return False
    probs = softmax_probs(logits)
    if probs.min() < 1e-9:  # the 1e-12 log clamp is a kink as well
        return False
    s = -np.sort(-probs, axis=1)
    if case.kind in ("max_prob", "margin") and np.min(s[:, 0] - s[:, 1]) < KINK_GAP:
        return False
    if case.kind == "margin" and s.shape[1] > 2 and np.min(s[:, 1] - s[:, 2]) < KINK_GAP:
        return False
    kappa = oracles.kappa_of(probs, case.kind)
    if case.kind == "neg_entropy":
        h = np.sort(np.sum(probs * np.log(probs), axis=1))
        if h[1] - h[0] < KINK_GAP or h[-1] - h[-2] < KINK_GAP:
            return False
    b = len(case.y)
    for i in range(b):
        j = (i + 1) % b
        ci, cj = case.c[i], case.c[j]
        if ci != cj and abs(-np.sign(ci - cj) * (kappa[i] - kappa[j]) + abs(ci - cj)) < KINK_GAP:
            return False
    return True


def draw_grad_case(rng: np.random.Generator, lam: float, kind: str) -> GradCase:
    """A random small MLP and batch whose objective is smooth near the drawn point."""
    while True:
        layers = int(rng.integers(1, 4))
        k = int(rng.integers(2, 6))
        dims = [int(rng.integers(1, 6))] + [int(rng.integers(1, 9)) for _ in range(layers - 1)] + [k]
        weights = [rng.normal(0, 1, (a, b)) for a, b in zip(dims[:-1], dims[1:])]
        biases = [rng.normal(0, 0.5, b) for b in dims[1:]]
        b = int(rng.integers(2, 9))
        x = rng.normal(0, 1, (b, dims[0]))
        y = rng.integers(0, k, b)
        c = rng.integers(0, 5, b) / 4.0
        case = GradCase(MlpModel(dims, weights, biases), x, y, c, kind, lam)
        if _far_from_kinks(case):
            return case


def analytic_grads(case: GradCase) -> list[np.ndarray]:
    logits, cache = forward_logits(case.model, case.x)
    _, dlogits = objective_and_grad(softmax_probs(logits), case.y, case.c, case.kind, case.lam)
    return backward_grads(case.model, cache, dlogits)


def numeric_grads(case: GradCase, h: float = 1e-5) -> list[np.ndarray]:
    m = case.model.copy()
    return oracles.central_diff(
        lambda: oracles.objective(m.weights, m.biases, case.x, case.y, case.c, case.kind, case.lam),
        m.params(), h)


def max_grad_rel_err(case: GradCase) -> float:
    return max(float(np.max(oracles.rel_err(a, n))) for a, n in zip(analytic_grads(case), numeric_grads(case)))
