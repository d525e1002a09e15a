"""Selective scan ``h_k = Abar_k h_{k-1} + Bbar_k u_k``, ``y_k = C_k . h_k`` with ``h_0 = 0``.

Three interchangeable forward implementations operate on pre-discretised
(B, L, E, N) arrays: a plain Python loop (the oracle), a compiled loop, and a
Hillis-Steele parallel prefix scan.  The training path uses
:func:`selective_scan_op`, a fused compiled kernel that discretises on the
fly and recomputes the states during the backward pass instead of storing
the (B, L, E, N) tensor.
"""
from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

from ..core.tensor import Tensor, as_tensor, record
from ..errors import ConfigurationError, DimensionError

SCAN_METHODS = ("naive", "compiled", "parallel")

if numba.config.THREADING_LAYER == "default":
    # the bundled TBB is too old for numba; OpenMP avoids a warning at first use
    numba.config.THREADING_LAYER = "omp"


def _check(u, Abar, Bbar, C):
    if u.ndim != 3 or Abar.shape != Bbar.shape or Abar.shape[:3] != u.shape or C.ndim != 3 \
            or C.shape[:2] != u.shape[:2] or C.shape[2] != Abar.shape[3]:
        raise DimensionError(f"scan shapes disagree: u{u.shape} Abar{Abar.shape} Bbar{Bbar.shape} C{C.shape}")


def scan_naive(u, Abar, Bbar, C) -> np.ndarray:
    u, Abar, Bbar, C = (np.asarray(v) for v in (u, Abar, Bbar, C))
    _check(u, Abar, Bbar, C)
    Bsz, L, E, N = Abar.shape
    h = np.zeros((Bsz, E, N), dtype=np.result_type(u, Abar))
    y = np.zeros(u.shape, dtype=h.dtype)
    for k in range(L):
        h = Abar[:, k] * h + Bbar[:, k] * u[:, k, :, None]
        y[:, k] = np.einsum("ben,bn->be", h, C[:, k])
    return y


@njit(cache=True, parallel=True)
def _scan_discrete_kernel(u, Abar, Bbar, C):
    Bsz, L, E, N = Abar.shape
    y = np.zeros(u.shape, dtype=u.dtype)
    for b in prange(Bsz):
        h = np.zeros(N, dtype=u.dtype)
        for e in range(E):
            h[:] = 0.0
            for k in range(L):
                x = u[b, k, e]
                acc = 0.0
                for n in range(N):
                    h[n] = Abar[b, k, e, n] * h[n] + Bbar[b, k, e, n] * x
                    acc += C[b, k, n] * h[n]
                y[b, k, e] = acc
    return y


def scan_compiled(u, Abar, Bbar, C) -> np.ndarray:
    u, Abar, Bbar, C = (np.ascontiguousarray(v) for v in (u, Abar, Bbar, C))
    _check(u, Abar, Bbar, C)
    dt = np.result_type(u, Abar)
    return _scan_discrete_kernel(u.astype(dt), Abar.astype(dt), Bbar.astype(dt), C.astype(dt))


def scan_parallel(u, Abar, Bbar, C) -> np.ndarray:
    """Hillis-Steele inclusive scan over the affine maps ``h -> a h + b`` (log2 L sweeps)."""
    u, Abar, Bbar, C = (np.asarray(v) for v in (u, Abar, Bbar, C))
    _check(u, Abar, Bbar, C)
    a = Abar.copy()
    b = Bbar * u[..., None]
    L = a.shape[1]
    step = 1
    while step < L:
        # compose element k with element k - step: (a1, b1) then (a2, b2) -> (a1 a2, a2 b1 + b2)
        b_new = b.copy()
        b_new[:, step:] = a[:, step:] * b[:, :-step] + b[:, step:]
        a_new = a.copy()
        a_new[:, step:] = a[:, step:] * a[:, :-step]
        a, b = a_new, b_new
        step *= 2
    return np.einsum("blen,bln->ble", b, C)


_SCANS = {"naive": scan_naive, "compiled": scan_compiled, "parallel": scan_parallel}


def selective_scan(x, Abar, Bbar, C, method: str = "compiled") -> np.ndarray:
    """Forward scan over pre-discretised parameters; every method has identical semantics."""
    try:
        fn = _SCANS[method]
    except KeyError:
        raise ConfigurationError(f"unknown scan method {method!r}; expected one of {SCAN_METHODS}") from None
    return fn(x, Abar, Bbar, C)


# -- fused differentiable kernel ------------------------------------------------------

@njit(cache=True, parallel=True)
def _fused_forward(u, delta, A, Bm, Cm):
    Bsz, L, E = u.shape
    N = A.shape[1]
    y = np.zeros(u.shape, dtype=u.dtype)
    for b in prange(Bsz):
        h = np.zeros(N, dtype=u.dtype)
        for e in range(E):
            h[:] = 0.0
            for k in range(L):
                d = delta[b, k, e]
                du = d * u[b, k, e]
                acc = 0.0
                for n in range(N):
                    h[n] = np.exp(d * A[e, n]) * h[n] + du * Bm[b, k, n]
                    acc += Cm[b, k, n] * h[n]
                y[b, k, e] = acc
    return y


@njit(cache=True, parallel=True)
def _fused_backward(u, delta, A, Bm, Cm, gy):
    Bsz, L, E = u.shape
    N = A.shape[1]
    gu = np.zeros(u.shape, dtype=u.dtype)
    gdelta = np.zeros(u.shape, dtype=u.dtype)
    gA_part = np.zeros((Bsz, E, N), dtype=u.dtype)
    gB = np.zeros(Bm.shape, dtype=u.dtype)
    gC = np.zeros(Cm.shape, dtype=u.dtype)
    for b in prange(Bsz):
        H = np.zeros((L + 1, N), dtype=u.dtype)
        decay = np.zeros((L, N), dtype=u.dtype)
        dh = np.zeros(N, dtype=u.dtype)
        for e in range(E):
            # recompute the states (and decays) of this (batch, channel) row
            for k in range(L):
                d = delta[b, k, e]
                du = d * u[b, k, e]
                for n in range(N):
                    decay[k, n] = np.exp(d * A[e, n])
                    H[k + 1, n] = decay[k, n] * H[k, n] + du * Bm[b, k, n]
            dh[:] = 0.0
            for k in range(L - 1, -1, -1):
                d = delta[b, k, e]
                x = u[b, k, e]
                g = gy[b, k, e]
                gd = 0.0
                gx = 0.0
                for n in range(N):
                    dh[n] += g * Cm[b, k, n]
                    gC[b, k, n] += g * H[k + 1, n]
                    a = decay[k, n]
                    ga = dh[n] * H[k, n]
                    gd += ga * a * A[e, n] + dh[n] * Bm[b, k, n] * x
                    gA_part[b, e, n] += ga * a * d
                    gB[b, k, n] += dh[n] * d * x
                    gx += dh[n] * d * Bm[b, k, n]
                    dh[n] *= a
                gu[b, k, e] = gx
                gdelta[b, k, e] = gd
    return gu, gdelta, gA_part, gB, gC


def fused_scan_forward(u, delta, A, Bm, Cm) -> np.ndarray:
    """Scan with on-the-fly discretisation ``Abar = exp(delta A)``, ``Bbar = delta B``."""
    arrs = [np.ascontiguousarray(v) for v in (u, delta, A, Bm, Cm)]
    dt = np.result_type(*arrs)
    return _fused_forward(*(a.astype(dt, copy=False) for a in arrs))


def selective_scan_op(u, delta, A, Bm, Cm) -> Tensor:
    """Differentiable fused scan.

    u, delta: (B, L, E); A: (E, N) (negative); Bm, Cm: (B, L, N).
    """
    u, delta, A, Bm, Cm = (as_tensor(v) for v in (u, delta, A, Bm, Cm))
    Bsz, L, E = u.shape
    if delta.shape != u.shape or A.ndim != 2 or A.shape[0] != E \
            or Bm.shape != (Bsz, L, A.shape[1]) or Cm.shape != Bm.shape:
        raise DimensionError(f"fused scan shapes disagree: u{u.shape} delta{delta.shape} A{A.shape} "
                             f"B{Bm.shape} C{Cm.shape}")
    arrs = [np.ascontiguousarray(t.data) for t in (u, delta, A, Bm, Cm)]
    y = _fused_forward(*arrs)

    def grad_fn(g):
        gu, gd, gA_part, gB, gC = _fused_backward(*arrs, np.ascontiguousarray(g, dtype=arrs[0].dtype))
        return gu, gd, gA_part.sum(axis=0), gB, gC

    return record("selective_scan", y, (u, delta, A, Bm, Cm), grad_fn)
