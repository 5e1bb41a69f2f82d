"""Engine tests: analytic gradients against central finite differences,
plus the documented edge-case behaviors."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

import acgate.autodiff as ad
from acgate.autodiff import (LstmWeights, Tensor, backward, concat, dropout,
                             lag_context, lstm_cell, matmul, no_grad, softmax)
from acgate.errors import NumericError, ShapeError, UsageError
from acgate.optim import Adam, clip_global_norm

from helpers import check_gradients

RNG = np.random.default_rng(12345)


def leaf(shape, scale=1.0):
    return Tensor(RNG.normal(0.0, scale, size=shape), requires_grad=True)


# ----------------------------------------------------------------------
# matmul
# ----------------------------------------------------------------------

def test_matmul_identity():
    i2 = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert_allclose(matmul(i2, m).data, [[1, 2], [3, 4]])


def test_matmul_projector():
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    v = Tensor([[5.0], [7.0]])
    assert_allclose(matmul(p, v).data, [[5.0], [0.0]])


def test_matmul_backward_finite_difference():
    a = leaf((3, 4))
    b = leaf((4, 2))
    worst = check_gradients(lambda: matmul(a, b).square().sum(),
                            [a, b], tol=1e-6)
    assert worst <= 1e-6


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(leaf((2, 3)), leaf((2, 3)))


# ----------------------------------------------------------------------
# softmax
# ----------------------------------------------------------------------

def test_softmax_uniform_for_equal_logits():
    for tau in (0.1, 1.0, 7.0):
        out = softmax(Tensor(np.full(5, 3.3)), temperature=tau)
        assert_allclose(out.data, np.full(5, 0.2), atol=1e-15)


def test_softmax_analytic_two_point():
    out = softmax(Tensor([0.0, np.log(3.0)]), temperature=1.0)
    assert_allclose(out.data, [0.25, 0.75], atol=1e-12)


def test_softmax_low_temperature_saturates():
    out = softmax(Tensor([10.0, 0.0, 0.0]), temperature=0.1)
    assert out.data[0] >= 1.0 - 1e-10


def test_softmax_simplex_and_shift_invariance():
    x = RNG.normal(size=(4, 6))
    for tau in (0.5, 1.0, 2.0):
        y = softmax(Tensor(x), temperature=tau).data
        assert np.all(y > 0.0) and np.all(y < 1.0)
        assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
        y_shift = softmax(Tensor(x + 11.7), temperature=tau).data
        assert_allclose(y, y_shift, atol=1e-12)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericError):
        softmax(Tensor([1.0, np.nan]), temperature=1.0)


def test_softmax_backward_finite_difference():
    x = leaf((3, 5))
    w = leaf((5,))
    check_gradients(lambda: (softmax(x, temperature=0.7) * w).sum(), [x, w])


# ----------------------------------------------------------------------
# elementwise and structural ops
# ----------------------------------------------------------------------

@pytest.mark.parametrize("build", [
    lambda a, b: (a + b).square().sum(),
    lambda a, b: (a - b).square().sum(),
    lambda a, b: (a * b).sum(),
    lambda a, b: (-a + b * 2.0).square().mean(),
    lambda a, b: (a.tanh() * b.sigmoid()).sum(),
])
def test_elementwise_gradients(build):
    a = leaf((4, 3))
    b = leaf((4, 3))
    check_gradients(lambda: build(a, b), [a, b])


def test_bias_broadcast_gradient():
    x = leaf((5, 3))
    b = leaf((3,))
    check_gradients(lambda: (x + b).square().sum(), [x, b])


def test_concat_and_slice_gradients():
    a = leaf((3, 2))
    b = leaf((3, 4))

    def fn():
        joined = concat([a, b], axis=1)
        return joined[:, 1:5].square().sum()

    check_gradients(fn, [a, b])


def test_reshape_gradient():
    a = leaf((2, 6))
    check_gradients(lambda: a.reshape(3, 4).square().sum(), [a])


def test_dropout_fixed_mask_gradient():
    a = leaf((6, 4))
    rng = np.random.default_rng(0)
    mask_rng_state = rng.bit_generator.state

    def fn():
        r = np.random.default_rng(0)
        r.bit_generator.state = mask_rng_state
        return dropout(a, 0.5, r, training=True).square().sum()

    check_gradients(fn, [a])


def test_dropout_eval_is_identity():
    a = leaf((6, 4))
    out = dropout(a, 0.5, None, training=False)
    assert out is a


# ----------------------------------------------------------------------
# lag context
# ----------------------------------------------------------------------

def test_lag_context_one_hot_selects_lag():
    n, t, f, k = 3, 12, 2, 4
    x = Tensor(RNG.normal(size=(n, t, f)))
    for j in range(1, k + 1):
        w = np.zeros((n, k))
        w[:, j - 1] = 1.0
        out = lag_context(x, Tensor(w), t0=k, t1=t - 1)
        assert_allclose(out.data, x.data[:, k - j:t - j, :])


def test_lag_context_uniform_is_window_mean():
    n, t, f, k = 2, 10, 1, 5
    x = Tensor(RNG.normal(size=(n, t, f)))
    w = Tensor(np.full((n, k), 1.0 / k))
    out = lag_context(x, w, t0=k, t1=t - 1)
    for j, tt in enumerate(range(k, t)):
        expected = x.data[:, tt - k:tt, :].mean(axis=1)
        assert_allclose(out.data[:, j, :], expected, atol=1e-12)


def test_lag_context_gradients():
    n, t, f, k = 2, 9, 2, 3
    x = leaf((n, t, f))
    w = leaf((n, k), scale=0.3)
    check_gradients(lambda: lag_context(x, w, t0=k, t1=t - 1).square().sum(),
                    [x, w])


def test_lag_context_warmup_violation():
    x = Tensor(np.zeros((2, 8, 1)))
    w = Tensor(np.full((2, 4), 0.25))
    with pytest.raises(ShapeError):
        lag_context(x, w, t0=3, t1=7)


# ----------------------------------------------------------------------
# LSTM cell
# ----------------------------------------------------------------------

def _cell_weights(f_in, h, scale=0.4):
    return LstmWeights(w_x=leaf((f_in, 4 * h), scale),
                       w_h=leaf((h, 4 * h), scale),
                       b=leaf((4 * h,), scale))


def test_lstm_cell_zero_weights_zero_state():
    h = 3
    w = LstmWeights(Tensor(np.zeros((2, 4 * h))), Tensor(np.zeros((h, 4 * h))),
                    Tensor(np.zeros(4 * h)))
    x = Tensor(RNG.normal(size=(5, 2)))
    h_next, c_next = lstm_cell(x, Tensor(np.zeros((5, h))),
                               Tensor(np.zeros((5, h))), w)
    assert_allclose(h_next.data, 0.0)
    assert_allclose(c_next.data, 0.0)


def test_lstm_cell_forget_gate_saturation():
    # forget bias 50, input bias -50: cell state passes through unchanged
    h = 4
    b = np.zeros(4 * h)
    b[h:2 * h] = 50.0
    b[0:h] = -50.0
    w = LstmWeights(Tensor(np.zeros((3, 4 * h))), Tensor(np.zeros((h, 4 * h))),
                    Tensor(b))
    c0 = RNG.normal(size=(2, h))
    _, c_next = lstm_cell(Tensor(RNG.normal(size=(2, 3))),
                          Tensor(np.zeros((2, h))), Tensor(c0), w)
    assert np.max(np.abs(c_next.data - c0)) <= 1e-10


def test_lstm_cell_gradients_all_weights():
    f_in, h, n = 3, 4, 5
    w = _cell_weights(f_in, h)
    x = leaf((n, f_in))
    h0 = leaf((n, h), scale=0.5)
    c0 = leaf((n, h), scale=0.5)

    def fn():
        h1, c1 = lstm_cell(x, h0, c0, w)
        h2, c2 = lstm_cell(x, h1, c1, w)  # reuse weights across steps
        return (h2.square().sum() + c2.mean())

    check_gradients(fn, [w.w_x, w.w_h, w.b, x, h0, c0])


def test_lstm_cell_shape_error():
    w = _cell_weights(3, 4)
    with pytest.raises(ShapeError):
        lstm_cell(leaf((5, 2)), leaf((5, 4)), leaf((5, 4)), w)


# ----------------------------------------------------------------------
# backward mechanics
# ----------------------------------------------------------------------

def test_backward_leaf_identity():
    x = Tensor(3.0, requires_grad=True)
    loss = x + 0.0
    backward(loss)
    assert_allclose(x.grad, 1.0)


def test_backward_product_rule():
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(3.0, requires_grad=True)
    backward(x * y)
    assert_allclose(x.grad, 3.0)
    assert_allclose(y.grad, 2.0)


def test_backward_rejects_nonscalar():
    x = leaf((3,))
    with pytest.raises(UsageError):
        backward(x + 1.0)


def test_backward_rejects_double_call():
    x = Tensor(2.0, requires_grad=True)
    loss = x.square()
    backward(loss)
    with pytest.raises(UsageError):
        backward(loss)


def test_backward_touches_each_node_once():
    # diamond graph: y = (x*2) + (x*3); grad must be 5, not more
    x = Tensor(1.0, requires_grad=True)
    a = x * 2.0
    b = x * 3.0
    backward(a + b)
    assert_allclose(x.grad, 5.0)


def test_no_grad_builds_no_graph():
    x = Tensor(1.0, requires_grad=True)
    with no_grad():
        y = x * 2.0 + 1.0
    assert y._parents == () and not y.requires_grad


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(7)
        a = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        loss = (matmul(a, b).tanh()).square().sum()
        backward(loss)
        return loss.item(), a.grad.copy(), b.grad.copy()

    l1, ga1, gb1 = run()
    l2, ga2, gb2 = run()
    assert l1 == l2
    assert np.array_equal(ga1, ga2)
    assert np.array_equal(gb1, gb2)


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=1e-2)
    p.grad = np.zeros(2)
    before = p.data.copy()
    opt.step()
    assert_allclose(p.data, before)


def test_adam_constant_gradient_monotone():
    p = Tensor(5.0, requires_grad=True)
    opt = Adam([p], lr=1e-2)
    values = [p.item()]
    for _ in range(50):
        p.grad = np.asarray(2.0)
        opt.step()
        values.append(p.item())
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_quadratic_bowl_converges():
    w = Tensor(0.0, requires_grad=True)
    opt = Adam([w], lr=1e-2)
    for _ in range(2000):
        opt.zero_grad()
        loss = (w - 3.0).square()
        backward(loss)
        opt.step()
    assert abs(w.item() - 3.0) <= 1e-3


def test_adam_nan_gradient_aborts():
    p = Tensor(1.0, requires_grad=True)
    opt = Adam([p], lr=1e-2)
    p.grad = np.asarray(np.nan)
    before = p.item()
    with pytest.raises(NumericError):
        opt.step()
    assert p.item() == before


def test_clip_global_norm():
    a = Tensor(np.zeros(3), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    a.grad = np.array([3.0, 0.0, 0.0])
    b.grad = np.array([0.0, 4.0, 0.0, 0.0])
    norm = clip_global_norm([a, b], max_norm=1.0)
    assert_allclose(norm, 5.0)
    total = np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2))
    assert_allclose(total, 1.0)


# ----------------------------------------------------------------------
# flop counter
# ----------------------------------------------------------------------

def test_flop_counter_counts_matmul():
    ad.reset_flop_counter()
    matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((4, 5))))
    assert ad.flop_count() == 2 * 3 * 4 * 5
