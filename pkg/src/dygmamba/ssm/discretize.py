"""Discretisation rules for diagonal continuous-time SSMs and their oracles.

All functions here work on plain arrays and broadcast elementwise: ``A`` holds
the diagonal eigenvalues (strictly negative in the model), ``B`` the input
weights and ``delta`` the step sizes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, SingularityError

# below this |lambda * delta| the closed form is replaced by its first-order limit
ZOH_LIMIT = 1e-8


@dataclass(frozen=True)
class DiscreteStep:
    Abar: np.ndarray
    Bbar: np.ndarray


def discretize_simplified(A, B, delta) -> DiscreteStep:
    """Exact decay ``exp(delta * A)`` with the Euler input term ``delta * B``."""
    A, B, delta = (np.asarray(v, dtype=np.float64) for v in (A, B, delta))
    if np.any(delta < 0):
        raise ContractError("step sizes must be non-negative")
    return DiscreteStep(np.exp(delta * A), delta * B)


def discretize_zoh_exact(A, B, delta) -> DiscreteStep:
    """Zero-order hold: ``Abar = exp(delta*A)``, ``Bbar = A^-1 (exp(delta*A) - 1) B``."""
    A, B, delta = (np.asarray(v, dtype=np.float64) for v in (A, B, delta))
    if np.any(delta <= 0):
        raise ContractError("zero-order hold needs strictly positive step sizes")
    if np.any(A == 0):
        raise SingularityError("zero eigenvalue: A is not invertible")
    x = delta * A
    small = np.abs(x) < ZOH_LIMIT
    safe = np.where(small, 1.0, A)
    Bbar = np.where(small, delta * B, np.expm1(x) / safe * B)
    return DiscreteStep(np.exp(x), Bbar)


def rk4_hold(A, B, u, delta, h0, steps: int = 1000) -> np.ndarray:
    """Integrate ``h' = A h + B u`` over ``[0, delta]`` with ``u`` held constant (diagonal A)."""
    A, B, u, delta, h = (np.asarray(v, dtype=np.float64) for v in (A, B, u, delta, h0))
    dt = delta / steps
    drive = B * u

    def f(x):
        return A * x + drive

    for _ in range(steps):
        k1 = f(h)
        k2 = f(h + 0.5 * dt * k1)
        k3 = f(h + 0.5 * dt * k2)
        k4 = f(h + dt * k3)
        h = h + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return h


def expand_steps(delta, A, Bm, rule=discretize_simplified) -> DiscreteStep:
    """Broadcast (B,L,E) steps, (E,N) eigenvalues and (B,L,N) inputs to (B,L,E,N)."""
    delta = np.asarray(delta, dtype=np.float64)[..., None]
    return rule(np.asarray(A)[None, None], np.asarray(Bm)[:, :, None, :], delta)


def ssm_kernel(Abar, Bbar, C, L: int, time_axis: bool = False) -> np.ndarray:
    """Convolution kernel ``(C Bbar, C Abar Bbar, ..., C Abar^{L-1} Bbar)``.

    ``Abar`` and ``Bbar`` are (..., N) with ``C`` (N,), giving a kernel of
    shape (L, ...).  With ``time_axis`` the arrays carry per-step values on
    axis 0; they are accepted only if every step is identical.
    """
    if time_axis:
        Abar = time_invariant(Abar, "Abar")
        Bbar = time_invariant(Bbar, "Bbar")
        C = time_invariant(C, "C")
    Abar, Bbar, C = (np.asarray(v, dtype=np.float64) for v in (Abar, Bbar, C))
    powers = Abar[None] ** np.arange(L).reshape((L,) + (1,) * Abar.ndim)
    return np.sum(C * powers * Bbar, axis=-1)


def time_invariant(arr, name: str = "parameter") -> np.ndarray:
    """Collapse a leading time axis that must be constant; raise if it varies."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(arr == arr[:1]):
        raise ContractError(f"{name} varies over time; the kernel form needs time-invariant parameters")
    return arr[0]


def kernel_convolve(K, u) -> np.ndarray:
    """``y_k = sum_j K_j u_{k-j}`` along axis 0."""
    K, u = np.asarray(K), np.asarray(u)
    L = u.shape[0]
    y = np.zeros(np.broadcast_shapes(K.shape[1:], u.shape[1:]), dtype=np.float64)[None].repeat(L, 0)
    for k in range(L):
        y[k] = np.sum(K[:k + 1][::-1] * u[:k + 1], axis=0)
    return y
