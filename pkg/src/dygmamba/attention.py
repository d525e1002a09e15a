"""Linear attention with the feature map ``phi(x) = elu(x) + 1`` and the cross layer built on it."""
from __future__ import annotations

import logging

import numpy as np

from .core import ops
from .core.nn import LayerNorm, Linear, Module
from .core.tensor import Tensor, as_tensor, get_dtype
from .errors import AttentionEmptyError, ConfigurationError, DimensionError

log = logging.getLogger(__name__)

WIRINGS = ("cross", "self")


def _key_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape[:-1]:
        raise DimensionError(f"key mask {mask.shape} does not match keys {shape}")
    return mask


def linear_attention(Q, K, V, causal: bool = False, key_mask=None, allow_empty: bool = False) -> Tensor:
    """``O_i = phi(Q_i) S / (phi(Q_i) . z)`` with ``S = sum phi(K_j) V_j^T`` and ``z = sum phi(K_j)``.

    Shapes are (..., n, D).  Causal mode restricts the sums to ``j <= i``
    (prefix sums, needs ``n_q == n_k``).  Masked keys contribute to neither
    sum.  A query that sees no valid key raises, unless ``allow_empty`` in
    which case its output is zero.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if K.shape != V.shape[:-1] + (K.shape[-1],) or Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"attention shapes disagree: Q{Q.shape} K{K.shape} V{V.shape}")
    m = _key_mask(key_mask, K.shape)
    mk = m[..., None].astype(get_dtype())
    fq = ops.elu_plus_one(Q)
    fk = ops.elu_plus_one(K) * mk
    if causal:
        if Q.shape[-2] != K.shape[-2]:
            raise DimensionError("causal attention needs as many queries as keys")
        # S_i, z_i as running sums over the key axis
        outer = ops.reshape(fk, fk.shape + (1,)) * ops.reshape(V, V.shape[:-1] + (1, V.shape[-1]))
        S = ops.cumsum(outer, axis=-3)
        z = ops.cumsum(fk, axis=-2)
        num = ops.sum(ops.reshape(fq, fq.shape + (1,)) * S, axis=-2)
        den = ops.sum(fq * z, axis=-1)
        seen = np.cumsum(m, axis=-1) > 0
    else:
        S = ops.matmul(ops.swapaxes(fk, -1, -2), V)
        z = ops.sum(fk, axis=-2, keepdims=True)
        num = ops.matmul(fq, S)
        den = ops.sum(fq * z, axis=-1)
        seen = np.broadcast_to(m.any(axis=-1, keepdims=True), den.shape)
    if not seen.all():
        if not allow_empty:
            raise AttentionEmptyError("attention query has no valid key")
        den = den + (~seen).astype(get_dtype())
    return num / ops.reshape(den, den.shape + (1,))


def attention_weights_reference(Q, K, causal: bool = False, key_mask=None) -> np.ndarray:
    """O(n^2) weights ``w_ij = phi(Q_i).phi(K_j) / sum_j' phi(Q_i).phi(K_j')`` for the oracle."""
    Q, K = np.asarray(Q, dtype=np.float64), np.asarray(K, dtype=np.float64)

    def phi(x):
        return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))

    m = _key_mask(key_mask, K.shape)
    nq, nk = Q.shape[-2], K.shape[-2]
    w = np.zeros(Q.shape[:-2] + (nq, nk))
    for i in range(nq):
        for j in range(nk):
            if m[..., j].any() and (not causal or j <= i):
                w[..., i, j] = np.sum(phi(Q[..., i, :]) * phi(K[..., j, :]), axis=-1) * m[..., j]
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise AttentionEmptyError("reference: query without valid key")
    return w / total


def attention_reference(Q, K, V, causal: bool = False, key_mask=None) -> np.ndarray:
    return attention_weights_reference(Q, K, causal, key_mask) @ np.asarray(V, dtype=np.float64)


def softmax_attention(Q, K, V) -> np.ndarray:
    """Plain quadratic softmax attention (benchmark contrast only)."""
    s = Q @ np.swapaxes(K, -1, -2) / np.sqrt(Q.shape[-1])
    s = np.exp(s - s.max(axis=-1, keepdims=True))
    return (s / s.sum(axis=-1, keepdims=True)) @ V


class CrossAttention(Module):
    """One single-head linear attention layer shared by both endpoint streams.

    ``H = LayerNorm(Linear(O + Q))`` where the queries of one stream attend to
    the keys and values of the other (``wiring="cross"``) or of itself.
    """

    def __init__(self, d: int, rng: np.random.Generator, wiring: str = "cross", causal: bool = False):
        if wiring not in WIRINGS:
            raise ConfigurationError(f"attention wiring must be one of {WIRINGS}, got {wiring!r}")
        self.W_Q = Linear(d, d, rng)
        self.W_K = Linear(d, d, rng)
        self.W_V = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.norm = LayerNorm(d)
        self._wiring = wiring
        self._causal = causal

    def project(self, Z) -> tuple[Tensor, Tensor, Tensor]:
        return self.W_Q(Z), self.W_K(Z), self.W_V(Z)

    def finish(self, O: Tensor, Q: Tensor) -> Tensor:
        return self.norm(self.out(O + Q))

    def __call__(self, Z_u, Z_v, mask_u, mask_v) -> tuple[Tensor, Tensor]:
        Qu, Ku, Vu = self.project(Z_u)
        Qv, Kv, Vv = self.project(Z_v)
        if self._wiring == "cross":
            src_u, src_v = (Kv, Vv, mask_v), (Ku, Vu, mask_u)
        else:
            src_u, src_v = (Ku, Vu, mask_u), (Kv, Vv, mask_v)
        empty = int((~np.asarray(mask_u, bool).any(-1)).sum() + (~np.asarray(mask_v, bool).any(-1)).sum())
        if empty:
            log.debug("cross attention: %d fully masked streams fall back to LayerNorm(Linear(Q))", empty)
        Ou = linear_attention(Qu, src_u[0], src_u[1], self._causal, src_u[2], allow_empty=True)
        Ov = linear_attention(Qv, src_v[0], src_v[1], self._causal, src_v[2], allow_empty=True)
        return self.finish(Ou, Qu), self.finish(Ov, Qv)


def cross_attend(Z_u, Z_v, params: CrossAttention, mask_u, mask_v) -> tuple[Tensor, Tensor]:
    return params(Z_u, Z_v, mask_u, mask_v)
