import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import cases
import oracles
from crl.nn import (MlpModel, OptState, ShapeError, backward_grads, ce_grad_logits, ce_loss, ensemble_probs,
                    forward_logits, init_mlp, input_gradient, lr_at_epoch, sgd_momentum_step, softmax_probs)


def zero_model(dims):
    return MlpModel(list(dims), [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                    [np.zeros(b) for b in dims[1:]])


def test_zero_model_gives_zero_logits():
    logits, _ = forward_logits(zero_model([3, 4, 2]), np.random.default_rng(0).normal(size=(5, 3)))
    assert np.array_equal(logits, np.zeros((5, 2)))


def test_identity_layers_pass_nonnegative_input_through():
    eye = np.eye(3)
    m = MlpModel([3, 3, 3], [eye, eye], [np.zeros(3), np.zeros(3)])
    x = np.array([[0.0, 1.5, 2.0], [3.0, 0.0, 0.25]])
    assert np.array_equal(forward_logits(m, x)[0], x)


def test_single_layer_hand_multiply():
    m = MlpModel([2, 1], [np.array([[1.0], [-1.0]])], [np.array([0.5])])
    assert forward_logits(m, [2.0, 3.0])[0][0, 0] == -0.5


def test_shape_errors():
    m = zero_model([2, 3])
    with pytest.raises(ShapeError):
        forward_logits(m, np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        MlpModel([2, 3], [np.zeros((3, 2))], [np.zeros(3)])
    with pytest.raises(ValueError):
        forward_logits(m, np.array([[np.nan, 0.0]]))
    _, cache = forward_logits(m, np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        backward_grads(m, cache, np.zeros((2, 4)))


def test_init_is_glorot_with_zero_biases():
    m = init_mlp([4, 6, 3], np.random.default_rng(0))
    assert all(np.all(b == 0) for b in m.biases)
    assert np.max(np.abs(m.weights[0])) <= math.sqrt(6 / 10)
    assert np.max(np.abs(m.weights[1])) <= math.sqrt(6 / 9)


def test_softmax_examples():
    assert np.array_equal(softmax_probs([0.0, 0.0])[0], [0.5, 0.5])
    np.testing.assert_allclose(softmax_probs([7.0, 7.0, 7.0])[0], [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax_probs([math.log(2), 0.0])[0], [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(3)
    z = rng.normal(0, 10, (1000, 6))
    shift = rng.normal(0, 10, (1000, 1))
    p = softmax_probs(z)
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-12
    assert np.max(np.abs(softmax_probs(z + shift) - p)) <= 1e-12


def test_ce_examples():
    assert ce_loss([[1.0, 0.0], [0.0, 1.0]], [0, 1]) == 0.0
    assert ce_loss([[math.exp(-1), 1 - math.exp(-1)]], [0]) == pytest.approx(1.0, abs=1e-15)
    assert ce_loss([[0.5, 0.5], [0.25, 0.75]], [0, 0]) == pytest.approx(1.5 * math.log(2), abs=1e-15)


def test_ce_grad_example_and_zero_upstream():
    assert np.array_equal(ce_grad_logits(np.array([[0.5, 0.5]]), [0]), [[-0.5, 0.5]])
    m = init_mlp([3, 4, 2], np.random.default_rng(0))
    _, cache = forward_logits(m, np.ones((2, 3)))
    assert all(np.all(g == 0) for g in backward_grads(m, cache, np.zeros((2, 2))))


@pytest.mark.parametrize("kind", cases.KINDS)
@pytest.mark.parametrize("lam", [0.0, 1.0])
def test_full_gradient_matches_finite_differences(kind, lam):
    rng = np.random.default_rng([cases.KINDS.index(kind), int(lam)])
    for _ in range(5):
        assert cases.max_grad_rel_err(cases.draw_grad_case(rng, lam, kind)) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 20:
        dims = [3, 5, 4]
        m = MlpModel(dims, [rng.normal(size=(3, 5)), rng.normal(size=(5, 4))], [rng.normal(size=5), rng.normal(size=4)])
        x = rng.normal(size=(1, 3))
        t = float(rng.choice([1.0, 10.0]))
        _, cache = forward_logits(m, x)
        if np.min(np.abs(cache.preacts[0])) < 1e-3:
            continue
        cls = int(np.argmax(forward_logits(m, x)[0]))

        def f():
            z = forward_logits(m, x)[0][0] / t
            z = z - z.max()
            return -(z[cls] - math.log(np.exp(z).sum()))

        num = oracles.central_diff(f, [x])[0]
        assert np.max(oracles.rel_err(input_gradient(m, x, t), num)) < 1e-4
        checked += 1


def test_input_gradient_zero_model_and_large_temperature():
    assert np.all(input_gradient(zero_model([3, 4, 2]), np.ones((2, 3))) == 0)
    m = init_mlp([3, 8, 4], np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3))
    g1 = np.abs(input_gradient(m, x, 1.0)).max()
    g_big = np.abs(input_gradient(m, x, 1e6)).max()
    assert g_big < 1e-5 * max(g1, 1e-12) + 1e-9


def test_sgd_examples():
    opt = OptState([np.zeros(1)])
    (w,), _ = sgd_momentum_step([np.array([1.0])], [np.array([0.5])], opt, 0.1, 0.0, 0.0)
    assert w[0] == pytest.approx(0.95, abs=1e-15)
    p = [np.array([1.0, -2.0])]
    (same,), _ = sgd_momentum_step(p, [np.zeros(2)], OptState([np.zeros(2)]), 0.1, 0.9, 0.0)
    assert np.array_equal(same, p[0])
    params, opt = [np.array([1.0])], OptState([np.zeros(1)])
    for _ in range(2):
        params, opt = sgd_momentum_step(params, [np.array([1.0])], opt, 0.1, 0.9, 0.0)
    assert params[0][0] == pytest.approx(0.71, abs=1e-15)


def test_sgd_does_not_mutate_inputs():
    p, g, opt = [np.array([1.0])], [np.array([1.0])], OptState([np.zeros(1)])
    sgd_momentum_step(p, g, opt, 0.1, 0.9, 1e-4)
    assert p[0][0] == 1.0 and opt.momentum_buffers[0][0] == 0.0


def test_lr_schedule():
    opt = OptState([], 0.1, [150, 250], 0.1)
    got = {}
    for e in (0, 149, 150, 249, 250, 299):
        opt.epoch = e
        got[e] = lr_at_epoch(opt)
    assert got[0] == got[149] == 0.1
    assert got[150] == got[249] == pytest.approx(0.01, rel=1e-15)
    assert got[250] == got[299] == pytest.approx(0.001, rel=1e-15)
    flat = OptState([], 0.05)
    flat.epoch = 1000
    assert lr_at_epoch(flat) == 0.05


def test_ensemble_examples():
    one = np.array([0.3, 0.7])
    assert np.array_equal(ensemble_probs([one]), one)
    assert np.array_equal(ensemble_probs([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
    np.testing.assert_allclose(ensemble_probs([[0.8, 0.2], [0.6, 0.4], [0.1, 0.9]]), [0.5, 0.5], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 4, 5), elements=st.floats(0.01, 1.0)))
def test_ensemble_of_distributions_is_a_distribution(raw):
    members = raw / raw.sum(axis=2, keepdims=True)
    out = ensemble_probs(list(members))
    assert np.all(out >= 0) and np.max(np.abs(out.sum(axis=1) - 1)) < 1e-12
