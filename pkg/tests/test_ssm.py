import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dygmamba.core import Tensor, backward, finite_difference_gradient, relative_error
from dygmamba.core.nn import Module
from dygmamba.core.tensor import Parameter, new_tape, no_grad
from dygmamba.errors import ConfigurationError, ContractError, DimensionError, SingularityError
from dygmamba.ssm.block import CssmBlock, CssmConfig, cssm_block, delta_pathway
from dygmamba.ssm.discretize import (discretize_simplified, discretize_zoh_exact, expand_steps, kernel_convolve,
                                     rk4_hold, ssm_kernel, time_invariant)
from dygmamba.ssm.scan import (fused_scan_forward, scan_compiled, scan_naive, scan_parallel, selective_scan,
                               selective_scan_op)


def random_scan(rng, B, L, E, N):
    u = rng.normal(size=(B, L, E))
    delta = rng.uniform(1e-3, 1.0, size=(B, L, E))
    A = -rng.uniform(0.1, 4.0, size=(E, N))
    Bm, Cm = rng.normal(size=(B, L, N)), rng.normal(size=(B, L, N))
    return u, delta, A, Bm, Cm


class TestDiscretize:
    def test_simplified_half(self):
        s = discretize_simplified(-1.0, 1.0, math.log(2))
        assert s.Abar == pytest.approx(0.5, abs=1e-15)
        assert s.Bbar == pytest.approx(math.log(2))

    def test_zero_step_freezes_state(self):
        s = discretize_simplified(np.array([-1.0, -5.0]), np.array([2.0, 3.0]), 0.0)
        np.testing.assert_array_equal(s.Abar, [1.0, 1.0])
        np.testing.assert_array_equal(s.Bbar, [0.0, 0.0])

    def test_simplified_fixed_point_large_step(self):
        # h = a h + b u with a = e^-20, b = 20: the fixed point is 20 / (1 - e^-20)
        s = discretize_simplified(-1.0, 1.0, 20.0)
        h = 0.0
        for _ in range(5):
            h = s.Abar * h + s.Bbar * 1.0
        assert h == pytest.approx(20.0 / (1.0 - math.exp(-20.0)), rel=1e-12)

    def test_negative_step_rejected(self):
        with pytest.raises(ContractError):
            discretize_simplified(-1.0, 1.0, -0.1)

    def test_zoh_half(self):
        s = discretize_zoh_exact(-1.0, 1.0, math.log(2))
        assert s.Abar == pytest.approx(0.5, abs=1e-15)
        assert s.Bbar == pytest.approx(0.5, abs=1e-15)

    def test_zoh_small_product_uses_limit(self):
        s = discretize_zoh_exact(-1e-10, 3.0, 1e-3)
        assert s.Bbar == pytest.approx(3e-3, rel=1e-12)

    def test_zoh_agrees_with_simplified_to_first_order(self):
        for d in (1e-3, 1e-4, 1e-5):
            z = discretize_zoh_exact(-2.0, 1.5, d).Bbar
            e = discretize_simplified(-2.0, 1.5, d).Bbar
            assert abs(z - e) <= 2.0 * 1.5 * d * d

    def test_zoh_singular(self):
        with pytest.raises(SingularityError):
            discretize_zoh_exact(np.array([-1.0, 0.0]), 1.0, 0.1)

    def test_zoh_needs_positive_step(self):
        with pytest.raises(ContractError):
            discretize_zoh_exact(-1.0, 1.0, 0.0)

    def test_zoh_matches_rk4(self):
        rng = np.random.default_rng(0)
        lam = -rng.uniform(0.1, 5, 6)
        Bv, h0 = rng.normal(size=6), rng.normal(size=6)
        s = discretize_zoh_exact(lam, Bv, 0.7)
        np.testing.assert_allclose(s.Abar * h0 + s.Bbar * 0.3, rk4_hold(lam, Bv, 0.3, 0.7, h0), atol=1e-6)

    @given(st.floats(1e-6, 50.0), st.floats(-10.0, -1e-3))
    def test_decay_in_unit_interval(self, d, a):
        s = discretize_simplified(a, 1.0, d)
        assert 0.0 <= s.Abar <= 1.0


class TestKernel:
    def test_geometric(self):
        np.testing.assert_allclose(ssm_kernel(np.array([0.5]), np.array([1.0]), np.array([1.0]), 3),
                                   [1.0, 0.5, 0.25])

    def test_unit_decay_constant(self):
        K = ssm_kernel(np.array([1.0, 1.0]), np.array([2.0, 3.0]), np.array([0.5, 1.0]), 4)
        np.testing.assert_allclose(K, np.full(4, 4.0))

    def test_impulse_response(self):
        rng = np.random.default_rng(1)
        Ab, Bb, C = rng.uniform(0.1, 0.9, 3), rng.normal(size=3), rng.normal(size=3)
        K = ssm_kernel(Ab, Bb, C, 6)
        u = np.zeros(6)
        u[0] = 1.0
        np.testing.assert_allclose(kernel_convolve(K, u), K, atol=1e-15)

    def test_time_varying_rejected(self):
        with pytest.raises(ContractError):
            ssm_kernel(np.array([[0.5], [0.6]]), np.array([[1.0], [1.0]]), np.array([[1.0], [1.0]]), 3,
                       time_axis=True)
        with pytest.raises(ContractError):
            time_invariant(np.array([1.0, 2.0]))

    def test_matches_recurrence(self):
        rng = np.random.default_rng(2)
        L, N = 20, 4
        s = discretize_simplified(-rng.uniform(0.1, 2, N), rng.normal(size=N), 0.3)
        C, u = rng.normal(size=N), rng.normal(size=L)
        y = scan_naive(u[None, :, None], np.broadcast_to(s.Abar, (1, L, 1, N)),
                       np.broadcast_to(s.Bbar, (1, L, 1, N)), np.broadcast_to(C, (1, L, N)))[0, :, 0]
        np.testing.assert_allclose(kernel_convolve(ssm_kernel(s.Abar, s.Bbar, C, L), u), y, atol=1e-12)


class TestScan:
    def test_single_step(self):
        rng = np.random.default_rng(3)
        u, delta, A, Bm, Cm = random_scan(rng, 2, 1, 3, 4)
        st_ = expand_steps(delta, A, Bm)
        y = scan_naive(u, st_.Abar, st_.Bbar, Cm)
        want = np.einsum("ben,bn->be", st_.Bbar[:, 0] * u[:, 0, :, None], Cm[:, 0])
        np.testing.assert_allclose(y[:, 0], want, atol=1e-14)

    def test_memoryless(self):
        rng = np.random.default_rng(4)
        u = rng.normal(size=(1, 5, 2))
        Bbar = rng.normal(size=(1, 5, 2, 3))
        C = rng.normal(size=(1, 5, 3))
        y = scan_compiled(u, np.zeros_like(Bbar), Bbar, C)
        np.testing.assert_allclose(y, np.einsum("blen,bln->ble", Bbar * u[..., None], C), atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 64), st.integers(1, 16), st.integers(1, 8), st.integers(0, 2**31))
    def test_implementations_agree(self, B, L, E, N, seed):
        rng = np.random.default_rng(seed)
        u, delta, A, Bm, Cm = random_scan(rng, B, L, E, N)
        s = expand_steps(delta, A, Bm)
        ref = scan_naive(u, s.Abar, s.Bbar, Cm)
        for method in ("compiled", "parallel"):
            np.testing.assert_allclose(selective_scan(u, s.Abar, s.Bbar, Cm, method), ref, atol=1e-10)
        np.testing.assert_allclose(fused_scan_forward(u, delta, A, Bm, Cm), ref, atol=1e-10)

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            selective_scan(np.zeros((1, 1, 1)), np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)),
                           np.zeros((1, 1, 1)), "magic")

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            scan_naive(np.zeros((1, 2, 3)), np.zeros((1, 2, 3, 4)), np.zeros((1, 2, 3, 4)), np.zeros((1, 2, 5)))

    def test_unrolled_decomposition(self):
        rng = np.random.default_rng(5)
        u, delta, A, Bm, Cm = random_scan(rng, 1, 12, 2, 3)
        s = expand_steps(delta, A, Bm)
        y = fused_scan_forward(u, delta, A, Bm, Cm)[0]
        for k in range(12):
            total = np.zeros(2)
            for j in range(k + 1):
                # prod of decays over steps j+1..k equals exp(sum of delta * A)
                decay = np.exp(np.sum(delta[0, j + 1:k + 1, :, None] * A[None], axis=0))
                total += np.sum(Cm[0, k] * decay * s.Bbar[0, j], axis=-1) * u[0, j]
            np.testing.assert_allclose(y[k], total, atol=1e-12)

    def test_fused_gradients(self):
        rng = np.random.default_rng(6)
        u, delta, A, Bm, Cm = random_scan(rng, 2, 7, 3, 2)
        params = [Parameter(v, name=n) for v, n in zip((u, delta, A, Bm, Cm), "uaABC")]
        w = rng.normal(size=u.shape)

        def loss():
            return (selective_scan_op(*params) * Tensor(w)).sum()

        with new_tape():
            backward(loss())
        fd = finite_difference_gradient(lambda: loss().item(), params)
        for p, g in zip(params, fd):
            assert relative_error(p.grad, g) < 1e-6


def small_block(**kw) -> CssmBlock:
    return CssmBlock(CssmConfig(d_model=6, d_ssm=3, expand=2, conv_width=3, delta_width=6, **kw),
                     np.random.default_rng(0))


class TestBlock:
    def test_shape_and_defaults(self):
        cfg = CssmConfig()
        assert (cfg.d_model, cfg.d_ssm, cfg.expand) == (200, 16, 2)
        blk = small_block()
        Z = np.random.default_rng(1).normal(size=(2, 5, 6))
        out = cssm_block(Z, np.zeros((2, 5, 6)), blk, np.ones((2, 5), bool))
        assert out.shape == Z.shape

    def test_A_strictly_negative(self):
        blk = small_block()
        assert np.all(blk.fwd.A().data < 0)
        np.testing.assert_allclose(-blk.fwd.A().data[0], np.arange(1, 4), rtol=1e-15)

    def test_residual_identity(self):
        blk = small_block()
        for p in blk.parameters():
            p.data[...] = 0.0
        Z = np.random.default_rng(2).normal(size=(1, 4, 6))
        np.testing.assert_array_equal(cssm_block(Z, np.ones((1, 4, 6)), blk, np.ones((1, 4), bool)).data, Z)

    def test_all_padding_unchanged(self):
        Z = np.random.default_rng(3).normal(size=(2, 4, 6))
        out = cssm_block(Z, np.zeros((2, 4, 6)), small_block(), np.zeros((2, 4), bool))
        np.testing.assert_array_equal(out.data, Z)

    def test_single_position_directions_agree(self):
        blk = small_block()
        blk.bwd.load_state_dict({k: v for k, v in blk.fwd.state_dict().items()})
        mask = np.zeros((1, 4), bool)
        mask[0, -1] = True
        Z = Tensor(np.random.default_rng(4).normal(size=(1, 4, 6)))
        with no_grad():
            from dygmamba.core import ops
            Zn = blk.norm(Z)
            m3 = mask[..., None].astype(float)
            x = blk.in_x(Zn) * m3
            feats = Tensor(np.ones((1, 4, 6)))
            y_f = blk.fwd(x, feats, m3).data
            y_b = ops.flip(blk.bwd(ops.flip(x, 1), ops.flip(feats, 1), m3[:, ::-1]), 1).data
        np.testing.assert_allclose(y_f[0, -1], y_b[0, -1], atol=1e-14)

    def test_padding_values_do_not_leak(self):
        blk = small_block()
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(1, 5, 6))
        dt = rng.normal(size=(1, 5, 6))
        mask = np.array([[False, False, True, True, True]])
        a = cssm_block(Z, dt, blk, mask).data
        Z2 = Z.copy()
        Z2[0, :2] = rng.normal(size=(2, 6)) * 100
        b = cssm_block(Z2, dt, blk, mask).data
        np.testing.assert_allclose(a[0, 2:], b[0, 2:], atol=1e-12)

    def test_delta_softplus_zero(self):
        d = delta_pathway(np.zeros((1, 2, 3)), np.zeros((3, 4)), np.zeros(4))
        np.testing.assert_allclose(d.data, math.log(2))

    def test_delta_limits(self):
        lo = delta_pathway(np.zeros((1, 1, 1)), np.zeros((1, 1)), np.array([-40.0])).data
        hi = delta_pathway(np.zeros((1, 1, 1)), np.zeros((1, 1)), np.array([40.0])).data
        assert 0 < lo.item() < 1e-15
        assert math.exp(hi.item() * -1.0) < 1e-15

    def test_delta_ignores_content(self):
        blk = small_block()
        rng = np.random.default_rng(6)
        dt = Tensor(rng.normal(size=(1, 5, 6)))
        mask = np.ones((1, 5), bool)
        d1 = blk.deltas(Tensor(rng.normal(size=(1, 5, 6))), dt, mask)
        d2 = blk.deltas(Tensor(rng.normal(size=(1, 5, 6))), dt, mask)
        for a, b in zip(d1, d2):
            assert a.tobytes() == b.tobytes()

    def test_content_delta_ablation_ignores_time(self):
        blk = small_block(delta_source="content")
        rng = np.random.default_rng(7)
        Z = Tensor(rng.normal(size=(1, 5, 6)))
        mask = np.ones((1, 5), bool)
        d1 = blk.deltas(Z, Tensor(rng.normal(size=(1, 5, 6))), mask)
        d2 = blk.deltas(Z, Tensor(rng.normal(size=(1, 5, 6))), mask)
        for a, b in zip(d1, d2):
            assert a.tobytes() == b.tobytes()

    def test_non_selective_fixed(self):
        blk = small_block(selective=False)
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(1, 4, 12)))
        d1, B1, C1 = blk.fwd.inputs(x, Tensor(rng.normal(size=(1, 4, 6))))
        d2, B2, C2 = blk.fwd.inputs(Tensor(rng.normal(size=(1, 4, 12))), Tensor(rng.normal(size=(1, 4, 6))))
        for a, b in ((d1, d2), (B1, B2), (C1, C2)):
            np.testing.assert_array_equal(a.data, b.data)

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            CssmConfig(delta_source="oracle")
        with pytest.raises(ConfigurationError):
            CssmConfig(d_ssm=0)

    def test_block_gradients(self):
        blk = CssmBlock(CssmConfig(d_model=4, d_ssm=2, expand=2, conv_width=2, delta_width=3),
                        np.random.default_rng(9))
        rng = np.random.default_rng(10)
        Z, dt, w = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 4))
        mask = np.array([[True] * 4, [False, True, True, True]])

        def loss():
            return (cssm_block(Z, dt, blk, mask) * Tensor(w)).sum()

        with new_tape():
            blk.zero_grad()
            backward(loss())
        params = blk.parameters()
        fd = finite_difference_gradient(lambda: loss().item(), params, h=1e-5)
        for p, g in zip(params, fd):
            assert relative_error(p.grad, g, floor=1e-6) < 1e-3, p.name


def test_module_is_module():
    assert isinstance(small_block(), Module)
