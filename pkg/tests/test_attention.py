import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dygmamba.attention import (CrossAttention, attention_reference, attention_weights_reference, cross_attend,
                                linear_attention)
from dygmamba.core.nn import LayerNorm
from dygmamba.core.tensor import Tensor, no_grad
from dygmamba.errors import AttentionEmptyError, ConfigurationError, DimensionError
from dygmamba.tasks import readout_mean


def rand(rng, *shape):
    return rng.normal(size=shape)


def test_single_key_returns_its_value():
    rng = np.random.default_rng(0)
    Q, K, V = rand(rng, 5, 4), rand(rng, 1, 4), rand(rng, 1, 3)
    np.testing.assert_allclose(linear_attention(Q, K, V).data, np.repeat(V, 5, axis=0), atol=1e-14)


def test_identical_keys_average_values():
    rng = np.random.default_rng(1)
    Q, V = rand(rng, 3, 4), rand(rng, 6, 2)
    K = np.repeat(rand(rng, 1, 4), 6, axis=0)
    np.testing.assert_allclose(linear_attention(Q, K, V).data, np.tile(V.mean(0), (3, 1)), atol=1e-14)


@pytest.mark.parametrize("causal", [False, True])
def test_matches_quadratic_reference(causal):
    rng = np.random.default_rng(2)
    Q, K, V = rand(rng, 2, 7, 4), rand(rng, 2, 7, 4), rand(rng, 2, 7, 3)
    mask = rng.random((2, 7)) > 0.3
    mask[:, 0] = True
    got = linear_attention(Q, K, V, causal, mask).data
    np.testing.assert_allclose(got, attention_reference(Q, K, V, causal, mask), atol=1e-12)


def test_causal_first_row_sees_only_first_key():
    rng = np.random.default_rng(3)
    Q, K, V = rand(rng, 4, 3), rand(rng, 4, 3), rand(rng, 4, 2)
    np.testing.assert_allclose(linear_attention(Q, K, V, causal=True).data[0], V[0], atol=1e-14)


def test_weights_row_stochastic():
    rng = np.random.default_rng(4)
    w = attention_weights_reference(rand(rng, 6, 5), rand(rng, 8, 5))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-14)


def test_output_inside_value_hull():
    rng = np.random.default_rng(5)
    V = rand(rng, 8, 3)
    O = linear_attention(rand(rng, 10, 4), rand(rng, 8, 4), V).data
    assert np.all(O >= V.min(0) - 1e-12) and np.all(O <= V.max(0) + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 9))
def test_key_permutation_invariance(seed, n):
    rng = np.random.default_rng(seed)
    Q, K, V = rand(rng, 4, 3), rand(rng, n, 3), rand(rng, n, 2)
    p = rng.permutation(n)
    np.testing.assert_allclose(linear_attention(Q, K[p], V[p]).data, linear_attention(Q, K, V).data, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 30.0))
def test_denominators_positive(seed, scale):
    rng = np.random.default_rng(seed)
    w = attention_weights_reference(scale * rand(rng, 5, 4), scale * rand(rng, 3, 4))
    assert np.all(np.isfinite(w))
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)


def test_masked_keys_do_not_contribute():
    rng = np.random.default_rng(6)
    Q, K, V = rand(rng, 3, 4), rand(rng, 5, 4), rand(rng, 5, 2)
    mask = np.array([True, False, True, False, True])
    K2, V2 = K.copy(), V.copy()
    K2[~mask], V2[~mask] = 1e3, -1e3
    np.testing.assert_allclose(linear_attention(Q, K2, V2, key_mask=mask).data,
                               linear_attention(Q, K[mask], V[mask]).data, atol=1e-12)


def test_no_valid_key():
    rng = np.random.default_rng(7)
    Q, K, V = rand(rng, 2, 3), rand(rng, 2, 3), rand(rng, 2, 3)
    with pytest.raises(AttentionEmptyError):
        linear_attention(Q, K, V, key_mask=np.zeros(2, bool))
    out = linear_attention(Q, K, V, key_mask=np.zeros(2, bool), allow_empty=True).data
    np.testing.assert_array_equal(out, 0.0)


def test_shape_errors():
    with pytest.raises(DimensionError):
        linear_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 1)))
    with pytest.raises(DimensionError):
        linear_attention(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((3, 1)), causal=True)
    with pytest.raises(ConfigurationError):
        CrossAttention(3, np.random.default_rng(0), wiring="sideways")


class TestCross:
    D = 6

    def layer(self, **kw):
        return CrossAttention(self.D, np.random.default_rng(0), **kw)

    def test_symmetric_streams(self):
        rng = np.random.default_rng(8)
        Z = Tensor(rand(rng, 2, 5, self.D))
        m = np.ones((2, 5), bool)
        m[:, 3:] = False
        with no_grad():
            Hu, Hv = cross_attend(Z, Z, self.layer(), m, m)
        np.testing.assert_array_equal(Hu.data, Hv.data)

    def test_value_kill(self):
        rng = np.random.default_rng(9)
        att = self.layer()
        att.W_V.W.data[...] = 0.0
        att.W_V.b.data[...] = 0.0
        Zu, Zv = Tensor(rand(rng, 1, 4, self.D)), Tensor(rand(rng, 1, 4, self.D))
        m = np.ones((1, 4), bool)
        with no_grad():
            Hu, _ = att(Zu, Zv, m, m)
            want = att.norm(att.out(att.W_Q(Zu)))
        np.testing.assert_allclose(Hu.data, want.data, atol=1e-12)

    def test_empty_stream_falls_back(self):
        rng = np.random.default_rng(10)
        att = self.layer()
        Zu, Zv = Tensor(rand(rng, 1, 4, self.D)), Tensor(rand(rng, 1, 4, self.D))
        mu, mv = np.ones((1, 4), bool), np.zeros((1, 4), bool)
        with no_grad():
            Hu, _ = att(Zu, Zv, mu, mv)
            want = att.norm(att.out(att.W_Q(Zu)))
        np.testing.assert_allclose(Hu.data, want.data, atol=1e-12)

    @pytest.mark.parametrize("wiring", ["cross", "self"])
    def test_composition(self, wiring):
        rng = np.random.default_rng(11)
        att = self.layer(wiring=wiring)
        Zu, Zv = rand(rng, 2, 5, self.D), rand(rng, 2, 5, self.D)
        mu, mv = np.ones((2, 5), bool), rng.random((2, 5)) > 0.4
        mv[:, 0] = True
        with no_grad():
            Hu, Hv = att(Tensor(Zu), Tensor(Zv), mu, mv)

        def lin(layer, x):
            return x @ layer.W.data + layer.b.data

        def ln(x, layer: LayerNorm):
            mu_, var = x.mean(-1, keepdims=True), x.var(-1, keepdims=True)
            return (x - mu_) / np.sqrt(var + layer._eps) * layer.gain.data + layer.bias.data

        q = {k: lin(att.W_Q, z) for k, z in (("u", Zu), ("v", Zv))}
        k_ = {k: lin(att.W_K, z) for k, z in (("u", Zu), ("v", Zv))}
        v_ = {k: lin(att.W_V, z) for k, z in (("u", Zu), ("v", Zv))}
        masks = {"u": mu, "v": mv}
        other = {"u": "v", "v": "u"} if wiring == "cross" else {"u": "u", "v": "v"}
        for side, H in (("u", Hu), ("v", Hv)):
            o = other[side]
            O = attention_reference(q[side], k_[o], v_[o], key_mask=masks[o])
            np.testing.assert_allclose(H.data, ln(lin(att.out, O + q[side]), att.norm), atol=1e-10)

    def test_padded_queries_ignored_by_readout(self):
        rng = np.random.default_rng(12)
        att = self.layer()
        Zu, Zv = rand(rng, 1, 5, self.D), rand(rng, 1, 5, self.D)
        m = np.array([[True, True, True, False, False]])
        Zu2 = Zu.copy()
        Zu2[0, 3:] = 50.0
        with no_grad():
            a = readout_mean(att(Tensor(Zu), Tensor(Zv), m, m)[0], m).data
            b = readout_mean(att(Tensor(Zu2), Tensor(Zv), m, m)[0], m).data
        np.testing.assert_allclose(a, b, atol=1e-12)
