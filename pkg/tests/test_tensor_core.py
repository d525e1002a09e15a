import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dygmamba.core import Adam, Parameter, Tensor, active_tape, backward, finite_difference_gradient
from dygmamba.core import ops, relative_error
from dygmamba.core.tensor import new_tape, precision
from dygmamba.errors import (ConfigurationError, ContractError, DimensionError, NumericError,
                             StateError)


def P(x, name="p"):
    return Parameter(np.asarray(x, dtype=np.float64), name=name)


class TestLinear:
    def test_identity(self):
        y = ops.apply_linear(Tensor([[1.0, 2.0]]), P(np.eye(2)), P([0.0, 0.0]))
        np.testing.assert_array_equal(y.data, [[1, 2]])

    def test_hand_product(self):
        y = ops.apply_linear(Tensor([[1.0, 1.0]]), P([[2.0], [3.0]]), P([1.0]))
        np.testing.assert_array_equal(y.data, [[6.0]])

    def test_bias_only(self):
        rng = np.random.default_rng(0)
        y = ops.apply_linear(Tensor(np.zeros((1, 3))), P(rng.normal(size=(3, 1))), P([5.0]))
        np.testing.assert_array_equal(y.data, [[5.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.apply_linear(Tensor(np.ones((1, 3))), P(np.ones((2, 2))), P(np.zeros(2)))


class TestActivations:
    def test_softplus_zero(self):
        assert ops.activation("softplus", Tensor([0.0])).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_silu_zero(self):
        assert ops.activation("silu", Tensor([0.0])).item() == 0.0

    def test_elu_plus_one_zero(self):
        assert ops.activation("elu_plus_one", Tensor([0.0])).item() == 1.0

    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            ops.activation("gelu", Tensor([0.0]))

    @given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
    def test_elu_plus_one_positive(self, xs):
        assert np.all(ops.elu_plus_one(Tensor(xs)).data > 0)


class TestLayerNorm:
    def test_constant_row(self):
        out = ops.layer_normalize(Tensor([[1.0, 1.0, 1.0]]), P(np.ones(3)), P(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [[0, 0, 0]])

    def test_unit_scale(self):
        out = ops.layer_normalize(Tensor([[-1.0, 1.0]]), P(np.ones(2)), P(np.zeros(2)), eps=1e-5)
        np.testing.assert_allclose(out.data, [[-1, 1]], atol=1e-3)

    def test_gain_zero(self):
        out = ops.layer_normalize(Tensor([[3.0, -8.0]]), P(np.zeros(2)), P([7.0, 7.0]))
        np.testing.assert_array_equal(out.data, [[7, 7]])

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            ops.layer_normalize(Tensor(np.ones((2, 3))), P(np.ones(2)), P(np.zeros(2)))


class TestConv:
    def test_k1_identity(self):
        x = np.random.default_rng(1).normal(size=(2, 5, 3))
        out = ops.causal_depthwise_conv1d(Tensor(x), P(np.ones((3, 1))), P(np.zeros(3)))
        np.testing.assert_allclose(out.data, x)

    def test_k2_current_step(self):
        x = np.random.default_rng(2).normal(size=(2, 5, 3))
        filt = np.tile([0.0, 1.0], (3, 1))
        out = ops.causal_depthwise_conv1d(Tensor(x), P(filt), P(np.zeros(3)))
        np.testing.assert_allclose(out.data, x)

    def test_causal_support(self):
        x = np.zeros((1, 8, 2))
        x[0, 0] = 1.0
        filt = np.random.default_rng(3).uniform(0.5, 1.0, size=(2, 4))
        out = ops.causal_depthwise_conv1d(Tensor(x), P(filt), P(np.zeros(2))).data
        assert np.all(out[0, :4] != 0)
        assert np.all(out[0, 4:] == 0)

    @given(st.integers(0, 9), st.integers(1, 5))
    @settings(max_examples=30)
    def test_perturbation_never_leaks_backwards(self, t, k):
        rng = np.random.default_rng(t * 7 + k)
        x = rng.normal(size=(1, 10, 3))
        filt, bias = P(rng.normal(size=(3, k))), P(rng.normal(size=3))
        base = ops.causal_depthwise_conv1d(Tensor(x), filt, bias).data
        x2 = x.copy()
        x2[0, t] += 5.0
        moved = ops.causal_depthwise_conv1d(Tensor(x2), filt, bias).data
        np.testing.assert_array_equal(base[0, :t], moved[0, :t])


class TestBackward:
    def test_linear_derivative(self):
        w = P([0.7])
        backward(ops.sum(w * Tensor([2.0])))
        np.testing.assert_array_equal(w.grad, [2.0])

    def test_quadratic(self):
        w = P(3.0)
        backward(w * w)
        assert w.grad == pytest.approx(6.0)

    def test_non_scalar(self):
        w = P([1.0, 2.0])
        with pytest.raises(ContractError):
            backward(w * 2.0)

    def test_repeated_backward(self):
        w = P(3.0)
        loss = w * w
        backward(loss)
        with pytest.raises(StateError):
            backward(loss)

    def test_new_forward_resets_tape(self):
        w = P(3.0)
        backward(w * w)
        backward(w * 2.0)
        assert w.grad == pytest.approx(8.0)

    def test_reverse_order(self):
        with new_tape() as tape:
            w = P([1.0, 2.0])
            loss = ops.sum(ops.exp(ops.silu(w * 2.0)))
            assert tape.ops() == ["mul", "silu", "exp", "sum"]
            order = []
            for rec in tape.records:
                fn = rec.backward_fn

                def spy(g, fn=fn, op=rec.op):
                    order.append(op)
                    return fn(g)
                rec.backward_fn = spy
            backward(loss)
            assert order == ["sum", "exp", "silu", "mul"]

    def test_random_composite_graph(self):
        rng = np.random.default_rng(4)
        W1, b1 = P(rng.normal(size=(4, 5)), "W1"), P(rng.normal(size=5), "b1")
        W2, b2 = P(rng.normal(size=(5, 1)), "W2"), P(rng.normal(size=1), "b2")
        g, be = P(rng.uniform(0.5, 1.5, size=5), "g"), P(rng.normal(size=5), "be")
        x = Tensor(rng.normal(size=(3, 4)))
        params = [W1, b1, W2, b2, g, be]

        def f():
            h = ops.layer_normalize(ops.silu(ops.apply_linear(x, W1, b1)), g, be)
            return ops.mean(ops.softplus(ops.apply_linear(ops.elu_plus_one(h), W2, b2)))

        for p in params:
            p.zero_grad()
        backward(f())
        fd = finite_difference_gradient(lambda: f().item(), params, h=1e-6)
        for p, est in zip(params, fd):
            assert relative_error(p.grad, est) < 1e-3, p.name

    def test_forward_is_finite(self):
        with pytest.raises(NumericError):
            ops.log(Tensor([0.0]))


def _gradcheck(build, params, h=1e-6):
    for p in params:
        p.zero_grad()
    backward(build())
    fd = finite_difference_gradient(lambda: build().item(), params, h=h)
    return max(relative_error(p.grad, e) for p, e in zip(params, fd))


OP_CASES = {
    "add": lambda a, b: ops.sum(ops.add(a, b) * ops.add(a, b)),
    "sub": lambda a, b: ops.sum(ops.square(ops.sub(a, b))),
    "mul": lambda a, b: ops.sum(ops.mul(a, b)),
    "div": lambda a, b: ops.sum(ops.div(a, ops.exp(b))),
    "exp_log": lambda a, b: ops.sum(ops.log(ops.exp(a) + ops.exp(b))),
    "sigmoid": lambda a, b: ops.sum(ops.sigmoid(a) * b),
    "silu": lambda a, b: ops.sum(ops.silu(a) * b),
    "softplus": lambda a, b: ops.sum(ops.softplus(a) * b),
    "relu": lambda a, b: ops.sum(ops.relu(a + 0.05) * b),
    "elu_plus_one": lambda a, b: ops.sum(ops.elu_plus_one(a) * b),
    "matmul": lambda a, b: ops.sum(ops.square(a @ ops.transpose(b))),
    "concat": lambda a, b: ops.sum(ops.square(ops.concat([a, b], axis=-1)) * 0.5),
    "flip": lambda a, b: ops.sum(ops.flip(a, 0) * b),
    "cumsum": lambda a, b: ops.sum(ops.cumsum(a, 0) * b),
    "mean": lambda a, b: ops.mean(ops.square(a), axis=0).sum() + ops.mean(b),
    "reshape": lambda a, b: ops.sum(ops.reshape(a, (-1,)) * ops.reshape(b, (-1,))),
    "getitem": lambda a, b: ops.sum(a[1:, :2] * b[:-1, 2:]),
    "broadcast": lambda a, b: ops.sum(ops.broadcast_to(a[:1], b.shape) * b),
    "clip": lambda a, b: ops.sum(ops.clip(a, -0.4, 0.4) * b),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    a = P(rng.normal(size=(3, 4)), "a")
    b = P(rng.normal(size=(3, 4)), "b")
    # keep the clip/relu kinks away from the differencing step
    a.data[np.abs(np.abs(a.data) - 0.4) < 1e-3] += 0.01
    a.data[np.abs(a.data + 0.05) < 1e-3] += 0.01
    assert _gradcheck(lambda: OP_CASES[name](a, b), [a, b]) < 1e-3


def test_layer_norm_and_conv_gradients():
    rng = np.random.default_rng(9)
    x = P(rng.normal(size=(2, 6, 3)), "x")
    filt, cb = P(rng.normal(size=(3, 4)), "filt"), P(rng.normal(size=3), "cb")
    g, be = P(rng.normal(size=3), "g"), P(rng.normal(size=3), "be")
    w = Tensor(rng.normal(size=(2, 6, 3)))

    def build():
        return ops.sum(ops.layer_normalize(ops.causal_depthwise_conv1d(x, filt, cb), g, be) * w)

    assert _gradcheck(build, [x, filt, cb, g, be]) < 1e-3


class TestAdam:
    def test_first_step_magnitude(self):
        p = P(np.zeros(4))
        opt = Adam([p], lr=1e-3)
        backward(ops.sum(p * 1.0))
        opt.step()
        np.testing.assert_allclose(np.abs(p.data), 1e-3, rtol=1e-6)

    def test_zero_gradient(self):
        p = P(np.arange(3.0))
        opt = Adam([p], lr=0.1)
        backward(ops.sum(p * 0.0))
        opt.step()
        np.testing.assert_array_equal(p.data, np.arange(3.0))

    def test_second_step_not_larger(self):
        p = P(np.zeros(2))
        opt = Adam([p], lr=1e-2)
        sizes = []
        for _ in range(2):
            before = p.data.copy()
            p.zero_grad()
            backward(ops.sum(p * 1.0))
            opt.step()
            sizes.append(np.abs(p.data - before).max())
        assert sizes[1] <= sizes[0] + 1e-12

    def test_step_before_backward(self):
        opt = Adam([P(np.zeros(2))])
        with pytest.raises(StateError):
            opt.step()


class TestFiniteDifference:
    def test_square(self):
        x = P(3.0, "x")
        (g,) = finite_difference_gradient(lambda: x.data.item() ** 2, [x], h=1e-4)
        assert g == pytest.approx(6.0, abs=1e-6)

    def test_sin(self):
        x = P(0.0, "x")
        (g,) = finite_difference_gradient(lambda: math.sin(x.data.item()), [x], h=1e-5)
        assert g == pytest.approx(1.0, abs=1e-7)

    def test_constant(self):
        x = P(np.ones(3), "x")
        (g,) = finite_difference_gradient(lambda: 4.2, [x])
        np.testing.assert_allclose(g, 0.0, atol=1e-9)

    def test_non_finite(self):
        x = P(1.0, "x")
        with pytest.raises(NumericError):
            finite_difference_gradient(lambda: float("nan"), [x])


def test_parameter_grad_invariants():
    p = P(np.ones((2, 3)))
    assert p.grad.shape == p.shape
    backward(ops.sum(p * 3.0))
    p.zero_grad()
    assert np.all(p.grad == 0)


def test_precision_switch():
    with precision("f32"):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64


def test_determinism():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6))
    W, b = P(rng.normal(size=(6, 3))), P(rng.normal(size=3))
    a = ops.silu(ops.apply_linear(Tensor(x), W, b)).data
    c = ops.silu(ops.apply_linear(Tensor(x), W, b)).data
    assert a.tobytes() == c.tobytes()
