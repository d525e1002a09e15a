"""Differentiable operations on :class:`~dygmamba.core.tensor.Tensor`.

Operands that are not Tensors (numbers, ndarrays) are treated as constants.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor, get_dtype, record


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _const(x, like: np.ndarray | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else get_dtype()
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


# -- elementwise arithmetic ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), _const(b, getattr(a, "data", None))
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _const(a, getattr(b, "data", None))
    b = _const(b, a.data)
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), _const(b, getattr(a, "data", None))
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a = _const(a, getattr(b, "data", None))
    b = _const(b, a.data)
    ad, bd = a.data, b.data
    out = ad / bd

    def grad_fn(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return record("div", out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return record("log", np.log(ad), (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return record("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return record("clip", np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


# -- activations ------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return record("silu", x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)
    return record("softplus", out, (a,), lambda g: (g * _sigmoid(x),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    on = x > 0
    return record("relu", np.where(on, x, 0.0).astype(x.dtype, copy=False), (a,), lambda g: (g * on,))


def elu_plus_one(a: Tensor) -> Tensor:
    # elu(x) + 1: x + 1 for x > 0, exp(x) otherwise; strictly positive
    x = a.data
    pos = x > 0
    ex = np.exp(np.minimum(x, 0.0))
    out = np.where(pos, x + 1.0, ex).astype(x.dtype, copy=False)
    return record("elu_plus_one", out, (a,), lambda g: (g * np.where(pos, 1.0, ex),))


_ACTIVATIONS = {
    "silu": silu,
    "softplus": softplus,
    "relu": relu,
    "elu_plus_one": elu_plus_one,
    "sigmoid": sigmoid,
}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(as_tensor(x))


# -- reductions and shape ops ------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", np.asarray(out), (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(sum(a, axis=axis, keepdims=keepdims), float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return record("swapaxes", np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = np.broadcast_to(a.data, shape).copy()
    return record("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, old),))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def grad_fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return record("getitem", np.asarray(a.data[index]), (a,), grad_fn)


def flip(a: Tensor, axis: int) -> Tensor:
    return record("flip", np.flip(a.data, axis=axis).copy(), (a,),
                  lambda g: (np.flip(g, axis=axis).copy(),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record("concat", out, tuple(tensors),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def cumsum(a: Tensor, axis: int) -> Tensor:
    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return record("cumsum", np.cumsum(a.data, axis=axis), (a,), grad_fn)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            lead = list(range(ad.ndim - 1))
            gb = np.tensordot(ad, g, axes=(lead, lead))
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return record("matmul", ad @ bd, (a, b), grad_fn)


def apply_linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W + b over the last axis of ``x``."""
    x = as_tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} does not match weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match weight {W.shape}")
    y = matmul(x, W)
    return y if b is None else add(y, b)


def layer_normalize(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    x = as_tensor(x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_normalize: width {d} vs gain {gain.shape} / bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    lead = tuple(range(xd.ndim - 1))

    def grad_fn(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_normalize", out, (x, gain, bias), grad_fn)


def causal_depthwise_conv1d(x, filters: Tensor, bias: Tensor) -> Tensor:
    """Per-channel causal convolution over axis 1 of a (B, L, D) tensor.

    ``filters[c, k-1]`` weighs the current step and ``filters[c, 0]`` the
    step ``k-1`` positions back; the input is left-padded with zeros.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"conv1d expects (B, L, D), got {x.shape}")
    B, L, D = x.shape
    if filters.ndim != 2 or filters.shape[0] != D or filters.shape[1] < 1:
        raise DimensionError(f"conv1d filters must be ({D}, k>=1), got {filters.shape}")
    if bias.shape != (D,):
        raise DimensionError(f"conv1d bias must be ({D},), got {bias.shape}")
    k = filters.shape[1]
    xd, w = x.data, filters.data
    padded = np.concatenate([np.zeros((B, k - 1, D), dtype=xd.dtype), xd], axis=1)
    out = np.broadcast_to(bias.data, (B, L, D)).copy()
    for j in range(k):
        out += padded[:, j:j + L, :] * w[:, j]

    def grad_fn(g):
        gpad = np.zeros_like(padded)
        gw = np.empty_like(w)
        for j in range(k):
            gpad[:, j:j + L, :] += g * w[:, j]
            gw[:, j] = np.einsum("bld,bld->d", g, padded[:, j:j + L, :])
        return gpad[:, k - 1:, :], gw, g.sum(axis=(0, 1))

    return record("causal_depthwise_conv1d", out, (x, filters, bias), grad_fn)
