"""Small dense ReLU network with exact backpropagation.

Everything is float64 numpy. A "Matrix" is a 2-D C-ordered ``np.ndarray``;
functions here never mutate their inputs and return fresh arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ShapeError("an MLP needs at least input and output dims")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and one bias vector per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[l], self.layer_dims[l + 1])
            if w.shape != want:
                raise ShapeError(f"weights[{l}] has shape {w.shape}, expected {want}")
            if b.shape != (want[1],):
                raise ShapeError(f"biases[{l}] has shape {b.shape}, expected ({want[1]},)")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Flat parameter list, ordered W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "MlpModel":
        return MlpModel(list(self.layer_dims), list(params[0::2]), list(params[1::2]), self.activation)

    def copy(self) -> "MlpModel":
        return self.with_params([p.copy() for p in self.params()])


def init_mlp(layer_dims: Sequence[int], rng: np.random.Generator) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


@dataclass
class ForwardCache:
    layer_dims: tuple[int, ...]
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # pre-activation of each layer; last one is the logits

    @property
    def batch(self) -> int:
        return self.inputs[0].shape[0]


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got array with {x.ndim} dims")
    return x


def forward_logits(model: MlpModel, x) -> tuple[np.ndarray, ForwardCache]:
    x = _as_batch(x)
    if x.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"input has {x.shape[1]} columns, model expects {model.layer_dims[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite entries")
    inputs, preacts = [], []
    a = x
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        z = a @ w + b
        preacts.append(z)
        a = np.maximum(z, 0.0) if l < model.num_layers - 1 else z
    return a, ForwardCache(tuple(model.layer_dims), inputs, preacts)


def penultimate_features(model: MlpModel, x) -> np.ndarray:
    """Activations feeding the output layer (the input itself for a 1-layer model)."""
    _, cache = forward_logits(model, x)
    return cache.inputs[-1]


def softmax_probs(logits, temperature: float = 1.0) -> np.ndarray:
    z = _as_batch(logits) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits (row-wise Jacobian)."""
    return probs * (dprobs - np.sum(dprobs * probs, axis=1, keepdims=True))


def _check_labels(labels, num_classes: int, batch: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"got {labels.shape[0] if labels.ndim else 0} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels.astype(np.int64)


def ce_loss(probs, labels) -> float:
    """Mean negative log-likelihood of the true class."""
    probs = _as_batch(probs)
    labels = _check_labels(labels, probs.shape[1], probs.shape[0])
    picked = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def ce_grad_logits(probs: np.ndarray, labels) -> np.ndarray:
    """d(mean CE)/d(logits) for the softmax + cross-entropy composite."""
    labels = _check_labels(labels, probs.shape[1], probs.shape[0])
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def _backprop(model: MlpModel, cache: ForwardCache, upstream) -> tuple[list[np.ndarray], np.ndarray]:
    if tuple(model.layer_dims) != cache.layer_dims:
        raise ShapeError("forward cache was produced by a model with different layer dims")
    delta = np.asarray(upstream, dtype=np.float64)
    if delta.shape != cache.preacts[-1].shape:
        raise ShapeError(f"upstream gradient shape {delta.shape} does not match logits {cache.preacts[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * model.num_layers)  # type: ignore[list-item]
    for l in range(model.num_layers - 1, -1, -1):
        grads[2 * l] = cache.inputs[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        delta = delta @ model.weights[l].T
        if l > 0:
            delta = delta * (cache.preacts[l - 1] > 0)
    return grads, delta


def backward_grads(model: MlpModel, cache: ForwardCache, upstream) -> list[np.ndarray]:
    """Parameter gradients (same order as ``model.params()``) given dLoss/dlogits."""
    grads, _ = _backprop(model, cache, upstream)
    return grads


def input_gradient(model: MlpModel, x, temperature: float = 1.0) -> np.ndarray:
    """Gradient of -log(max temperature-scaled softmax) w.r.t. each input row.

    The max class is fixed at the unperturbed prediction, so the objective is
    smooth around ``x``. Rows are independent; a batch returns one gradient per row.
    """
    logits, cache = forward_logits(model, x)
    probs = softmax_probs(logits, temperature)
    top = np.argmax(probs, axis=1)
    dlogits = probs.copy()
    dlogits[np.arange(len(top)), top] -= 1.0
    dlogits /= temperature
    _, dx = _backprop(model, cache, dlogits)
    return dx


@dataclass
class OptState:
    momentum_buffers: list[np.ndarray]
    base_lr: float = 0.1
    milestones: list[int] = field(default_factory=list)
    decay_factor: float = 0.1
    epoch: int = 0

    @classmethod
    def for_model(cls, model: MlpModel, base_lr=0.1, milestones=(), decay_factor=0.1) -> "OptState":
        return cls([np.zeros_like(p) for p in model.params()], base_lr, sorted(milestones), decay_factor)


def lr_at_epoch(opt: OptState) -> float:
    drops = sum(1 for m in opt.milestones if m <= opt.epoch)
    return opt.base_lr * opt.decay_factor**drops


def sgd_momentum_step(params, grads, opt: OptState, lr: float, momentum: float, weight_decay: float):
    """One heavy-ball SGD step with L2 weight decay folded into the gradient.

    Returns ``(new_params, new_opt)``; inputs are left untouched.
    """
    if len(params) != len(grads) or len(params) != len(opt.momentum_buffers):
        raise ShapeError("params, grads and momentum buffers must have equal length")
    new_params, new_bufs = [], []
    for p, g, v in zip(params, grads, opt.momentum_buffers):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, buffer {v.shape}")
        v = momentum * v + (g + weight_decay * p)
        new_bufs.append(v)
        new_params.append(p - lr * v)
    new_opt = OptState(new_bufs, opt.base_lr, list(opt.milestones), opt.decay_factor, opt.epoch)
    return new_params, new_opt


def ensemble_probs(prob_rows) -> np.ndarray:
    """Arithmetic mean of member probability vectors (or of per-member probability matrices)."""
    if len(prob_rows) == 0:
        raise ValueError("ensemble needs at least one member")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in prob_rows])
    if len(stacked) == 1:
        return stacked[0].copy()
    return stacked.mean(axis=0)
