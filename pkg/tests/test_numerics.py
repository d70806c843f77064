import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mtlsi import oracles
from mtlsi.numerics import (NonFiniteError, OptimizerState, Param, Tensor, grad_check, no_grad,
                            optimizer_step, precision)
from mtlsi.numerics import ops
from mtlsi.numerics.nn import BatchNorm

from .conftest import rel, t64

finite = st.floats(-10, 10, allow_nan=False, width=64)


def test_matmul_small_cases():
    b = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(ops.matmul(t64(np.eye(3)), t64(b)).data, b)
    assert ops.matmul(t64([[2.0]]), t64([[3.0]])).item() == 6.0


def test_matmul_matches_loops():
    r = np.random.default_rng(1)
    a, b = r.normal(size=(7, 5)), r.normal(size=(5, 4))
    assert rel(ops.matmul(t64(a), t64(b)), oracles.matmul_loops(a, b)) < 1e-14


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        ops.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_matmul_associative_f32(m, k, n, p, seed):
    r = np.random.default_rng(seed)
    a, b, c = (Tensor(r.normal(size=s), dtype=np.float32) for s in [(m, k), (k, n), (n, p)])
    left = ops.matmul(ops.matmul(a, b), c).data.astype(np.float64)
    right = ops.matmul(a, ops.matmul(b, c)).data.astype(np.float64)
    scale = np.abs(a.data).max() * np.abs(b.data).max() * np.abs(c.data).max() * k * n
    assert np.abs(left - right).max() <= 1e-4 * max(scale, 1e-30)


def test_depthwise_identity_and_constant():
    x = np.random.default_rng(0).normal(size=(2, 5, 5))
    out = ops.depthwise_conv2d(t64(x), t64(np.ones((2, 1, 1))), stride=1)
    assert np.array_equal(out.data, x)
    c = np.full((1, 5, 5), 1.5)
    out = ops.depthwise_conv2d(t64(c), t64(np.ones((1, 3, 3))), stride=1)
    assert out.data[0, 2, 2] == pytest.approx(9 * 1.5)


def test_depthwise_matches_loops():
    r = np.random.default_rng(2)
    x, k = r.normal(size=(2, 6, 6)), r.normal(size=(2, 3, 3))
    out = ops.depthwise_conv2d(t64(x), t64(k), stride=2)
    assert out.shape == (2, 3, 3)
    assert rel(out, oracles.depthwise_conv_loops(x, k, 2, 1)) < 1e-14


def test_depthwise_rejects_even_kernel():
    with pytest.raises(ValueError):
        ops.depthwise_conv2d(t64(np.ones((1, 4, 4))), t64(np.ones((1, 2, 2))))


def test_conv2d_matches_loops():
    r = np.random.default_rng(21)
    x, w, b = r.normal(size=(2, 3, 7, 6)), r.normal(size=(4, 3, 3, 3)), r.normal(size=4)
    out = ops.conv2d(t64(x), t64(w), t64(b), stride=2)
    ref = np.stack([oracles.conv_loops(xi, w, b, 2, 1) for xi in x])
    assert rel(out, ref) < 1e-13


def test_avg_pool():
    r = np.random.default_rng(3)
    x = r.normal(size=(1, 4, 4))
    assert np.array_equal(ops.avg_pool2d(t64(x), 1, 1).data, x)
    assert np.allclose(ops.avg_pool2d(t64(np.full((2, 4, 6), 0.7)), 2, 2).data, 0.7)
    out = ops.avg_pool2d(t64(x), 2, 2).data[0]
    quadrants = [[x[0, :2, :2].sum() / 4, x[0, :2, 2:].sum() / 4],
                 [x[0, 2:, :2].sum() / 4, x[0, 2:, 2:].sum() / 4]]
    assert np.allclose(out, quadrants, rtol=0, atol=1e-15)


def test_avg_pool_window_too_large():
    with pytest.raises(ValueError):
        ops.avg_pool2d(t64(np.ones((1, 2, 2))), 3, 1)


def test_softmax_cases():
    assert np.allclose(ops.softmax(t64(np.zeros(4))).data, 0.25)
    s = ops.softmax(t64([1000.0, 0.0])).data
    assert s[0] == pytest.approx(1.0) and s[1] < 1e-300 + 1e-12
    x = np.random.default_rng(4).normal(size=(3, 5))
    assert rel(ops.softmax(t64(x), axis=1), oracles.softmax_direct(x, 1)) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)), elements=st.floats(-1e3, 1e3)))
def test_softmax_slices_positive_and_normalised(x):
    s = ops.softmax(t64(x), axis=-1).data
    assert np.all(s > 0) or np.all(np.isfinite(s))
    assert np.abs(s.sum(axis=-1) - 1).max() <= 1e-6


def test_layer_norm_cases():
    one, zero = t64(np.ones(3)), t64(np.zeros(3))
    assert np.allclose(ops.layer_norm(t64(np.full((2, 3), 4.0)), one, zero).data, 0)
    out = ops.layer_norm(t64([[-1.0, 1.0]]), t64(np.ones(2)), t64(np.zeros(2))).data
    assert np.allclose(out, [[-1, 1]], atol=1e-4)
    x = np.random.default_rng(5).normal(size=(4, 8))
    y = ops.layer_norm(t64(x), t64(np.ones(8)), t64(np.zeros(8))).data
    assert np.abs(y.mean(axis=1)).max() <= 1e-6
    assert np.abs(y.var(axis=1) - 1).max() <= 1e-4


def test_batch_norm_modes():
    bn = BatchNorm(2, dtype=np.float64)
    x = np.random.default_rng(6).normal(size=(2, 4, 4))
    bn.eval()
    assert np.allclose(bn(t64(x)).data, x / np.sqrt(1 + 1e-5))
    bn.train()
    const = np.stack([np.full((4, 4), 3.0), x[1]])
    out = bn(t64(const)).data
    assert np.allclose(out[0], 0)
    y = bn(t64(x)).data
    assert np.abs(y.mean(axis=(1, 2))).max() <= 1e-6
    assert np.allclose(bn.running_mean, 0.1 * 0.9 * const.mean(axis=(1, 2)) + 0.1 * x.mean(axis=(1, 2)))


def test_batch_norm_matches_reference():
    bn = BatchNorm(3, dtype=np.float64)
    bn.gamma.data[:] = [0.5, 2.0, -1.0]
    bn.beta.data[:] = [0.1, 0.0, 0.3]
    x = np.random.default_rng(6).normal(size=(2, 3, 4, 4))
    ref = oracles.batch_norm_ref(x, bn, channel_axis=-3)
    assert rel(bn(t64(x)), ref) < 1e-13


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        ops.exp(t64([1000.0]))
    with pytest.raises(NonFiniteError):
        ops.log(t64([0.0]))


def test_forward_determinism():
    x = np.random.default_rng(9).normal(size=(3, 8, 8))
    k = np.random.default_rng(10).normal(size=(3, 3, 3))
    a = ops.depthwise_conv2d(t64(x), t64(k), stride=2).data
    b = ops.depthwise_conv2d(t64(x), t64(k), stride=2).data
    assert a.tobytes() == b.tobytes()


def test_no_grad_records_nothing():
    p = t64([1.0, 2.0], grad=True)
    with no_grad():
        y = ops.sum(p * p)
    assert y._parents == () and not y.requires_grad


def test_precision_context():
    # integer data adopts the default float width, float arrays keep theirs
    with precision("f64"):
        assert Tensor([1, 2]).dtype == np.float64
    with precision("f32"):
        assert Param([1, 2]).dtype == np.float32
        assert Tensor(np.ones(2)).dtype == np.float64


@pytest.mark.parametrize("op", [ops.exp, ops.relu, ops.gelu, ops.elu_plus_one, ops.abs,
                                lambda x: ops.softmax(x, -1), lambda x: ops.log_softmax(x, 0)])
def test_elementwise_gradients(op):
    p = t64(np.random.default_rng(0).normal(size=(3, 4)) + 0.05, grad=True)
    assert grad_check(lambda: ops.sum(op(p) * op(p)), [p]) <= 1e-6


def test_structural_op_gradients():
    r = np.random.default_rng(1)
    x = t64(r.normal(size=(2, 3, 6, 5)), grad=True)
    w = t64(r.normal(size=(4, 3, 3, 3)), grad=True)
    b = t64(r.normal(size=4), grad=True)
    k = t64(r.normal(size=(3, 3, 3)), grad=True)
    g, be = t64(r.uniform(0.5, 1.5, 3), grad=True), t64(r.normal(size=3), grad=True)
    tgt = r.normal(size=(2, 4, 3, 3))

    def f():
        y = ops.conv2d(x, w, b, stride=2)
        z = ops.depthwise_conv2d(x, k, stride=2)
        n = ops.batch_norm(z, g, be, np.zeros(3), np.ones(3), True)
        pooled = ops.avg_pool2d(ops.pad(x, [(0, 0)] * 2 + [(0, 0), (0, 1)]), 2, 2)
        up = ops.resize_bilinear(y, (5, 4))
        return (ops.sum((y - tgt) * (y - tgt)) + ops.sum(n * n * n) + ops.sum(pooled * pooled)
                + ops.mean(up * up) + ops.sum(ops.layer_norm(x, g[0:1] * 0 + 1, be[0:1] * 0) * x))

    assert grad_check(f, [x, w, b, k, g, be], n_samples=200) <= 1e-5


def test_grad_check_quadratic_and_constant():
    p = t64([0.7, -1.3, 2.2], grad=True)
    assert grad_check(lambda: ops.sum(p * p), [p]) <= 1e-9
    assert grad_check(lambda: ops.sum(p * 0.0) + 3.0, [p]) == 0.0
    assert np.array_equal(p.grad, np.zeros(3))


def test_grad_check_rejects_f32():
    p = Param(np.ones(2), dtype=np.float32)
    with pytest.raises(TypeError):
        grad_check(lambda: ops.sum(p * p), [p])


# optimizer ---------------------------------------------------------------


def test_zero_gradient_no_decay_leaves_params():
    p = t64([1.0, -2.0], grad=True)
    st_ = OptimizerState(lr=0.1, total_steps=10, weight_decay=0.0)
    optimizer_step(st_, [p])
    assert np.array_equal(p.data, [1.0, -2.0])


def test_one_step_opposes_gradient():
    p = t64([1.0], grad=True)
    p.grad[...] = 1.0
    optimizer_step(OptimizerState(lr=0.1, total_steps=10, weight_decay=0.0), [p])
    assert p.data[0] < 1.0


def test_quadratic_convergence():
    p = t64([0.0], grad=True)
    state = OptimizerState(lr=0.5, total_steps=50, weight_decay=0.0)
    for _ in range(50):
        p.grad[...] = 0
        loss = ops.sum((p - 3.0) * (p - 3.0))
        loss.backward()
        optimizer_step(state, [p])
    assert abs(p.data[0] - 3) < 0.5


def test_polynomial_schedule_and_overrun():
    state = OptimizerState(lr=1.0, total_steps=4, weight_decay=0.0)
    assert state.lr_at(0) == 1.0
    assert state.lr_at(2) == pytest.approx(0.5 ** 0.9)
    p = t64([1.0], grad=True)
    for _ in range(4):
        optimizer_step(state, [p])
    with pytest.raises(ValueError):
        optimizer_step(state, [p])
