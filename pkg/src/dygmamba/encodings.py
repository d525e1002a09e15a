"""Per-sequence input features.

Four feature families are built for every neighbor sequence: node features,
edge features, a fixed cosine time encoding of ``tau - t_j`` and a
co-occurrence encoding that counts how often each neighbor shows up in the
histories of both endpoints.  A separate pathway turns the gaps between
consecutive interactions into the control signal that drives the SSM step
sizes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ops
from .core.nn import Linear, Module
from .core.tensor import Tensor, get_dtype
from .errors import ConfigurationError, ContractError, DegenerateWindowError, DimensionError

GAP_MODES = ("backward", "forward")


@dataclass(frozen=True)
class TimeEncoderConfig:
    """Frequencies ``omega_i = alpha ** (-(i - 1) / beta)``; alpha and beta default to sqrt(d_T)."""

    d_T: int = 100
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.d_T < 1:
            raise ConfigurationError(f"d_T must be positive, got {self.d_T}")
        root = float(np.sqrt(self.d_T))
        if self.alpha is None:
            object.__setattr__(self, "alpha", root)
        if self.beta is None:
            object.__setattr__(self, "beta", root)
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("alpha and beta must be positive")
        omega = self.alpha ** (-np.arange(self.d_T, dtype=np.float64) / self.beta)
        omega.setflags(write=False)
        object.__setattr__(self, "_omega", omega)

    @property
    def omega(self) -> np.ndarray:
        return self._omega


def time_encode(cfg: TimeEncoderConfig, dt) -> np.ndarray:
    """``cos(omega * dt)`` with a trailing axis of width d_T."""
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ContractError("time intervals must be non-negative")
    return np.cos(dt[..., None] * cfg.omega).astype(get_dtype())


# -- co-occurrence ---------------------------------------------------------------

def _ids(seq) -> np.ndarray:
    return np.asarray(getattr(seq, "neighbors", seq), dtype=np.int64).reshape(-1)


def cooccurrence_counts(seq_u, seq_v) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry counts of the neighbor's appearances in (history of u, history of v).

    Both matrices use the same column order, so row j of ``C_v`` is
    (count in ``seq_u``, count in ``seq_v``) for the j-th neighbor of v.
    """
    u, v = _ids(seq_u), _ids(seq_v)
    same_u = (u[:, None] == u[None, :]).sum(axis=1)
    cross_u = (u[:, None] == v[None, :]).sum(axis=1)
    same_v = (v[:, None] == v[None, :]).sum(axis=1)
    cross_v = (v[:, None] == u[None, :]).sum(axis=1)
    return (np.stack([same_u, cross_u], axis=1).astype(np.int64),
            np.stack([cross_v, same_v], axis=1).astype(np.int64))


def cooccurrence_counts_batch(nb_u, mask_u, nb_v, mask_v) -> tuple[np.ndarray, np.ndarray]:
    """Batched counts over left-padded (B, L) id arrays; padded rows are zero."""
    mu, mv = np.asarray(mask_u, bool), np.asarray(mask_v, bool)

    def counts(a, ma, b, mb):
        eq = (a[:, :, None] == b[:, None, :]) & mb[:, None, :]
        return eq.sum(axis=2) * ma

    cu = np.stack([counts(nb_u, mu, nb_u, mu), counts(nb_u, mu, nb_v, mv)], axis=-1)
    cv = np.stack([counts(nb_v, mv, nb_u, mu), counts(nb_v, mv, nb_v, mv)], axis=-1)
    return cu, cv


class CoocEncoder(Module):
    """``(f(C[:, 0]) + f(C[:, 1])) W + b`` with ``f`` a 1 -> d_C -> d_C ReLU perceptron."""

    def __init__(self, d_C: int, rng: np.random.Generator):
        self.f1 = Linear(1, d_C, rng)
        self.f2 = Linear(d_C, d_C, rng)
        self.proj = Linear(d_C, d_C, rng)

    def f(self, x) -> Tensor:
        return self.f2(ops.relu(self.f1(x)))

    def __call__(self, counts) -> Tensor:
        c = np.asarray(counts, dtype=get_dtype())
        if c.shape[-1] != 2:
            raise DimensionError(f"count matrix needs two columns, got {c.shape}")
        # both columns go through f in one pass: (2, ..., 1)
        cols = np.moveaxis(c, -1, 0)[..., None]
        return self.proj(ops.sum(self.f(Tensor(cols)), axis=0))


def cooccurrence_encode(params: CoocEncoder, counts) -> Tensor:
    return params(counts)


# -- alignment -----------------------------------------------------------------------

class Alignment(Module):
    """Project each feature family to width d and concatenate in the order V, E, T, C."""

    def __init__(self, d_V: int, d_E: int, d_T: int | None, d_C: int | None, d: int,
                 rng: np.random.Generator):
        self.V = Linear(d_V, d, rng)
        self.E = Linear(d_E, d, rng)
        self.T = Linear(d_T, d, rng) if d_T is not None else None
        self.C = Linear(d_C, d, rng) if d_C is not None else None

    @property
    def width(self) -> int:
        return self.V.d_out * (2 + (self.T is not None) + (self.C is not None))

    def __call__(self, X_V, X_E, X_T=None, X_C=None) -> Tensor:
        parts = [(self.V, X_V), (self.E, X_E)]
        for layer, x, name in ((self.T, X_T, "time"), (self.C, X_C, "co-occurrence")):
            if layer is not None:
                if x is None:
                    raise DimensionError(f"{name} features required by this alignment")
                parts.append((layer, x))
            elif x is not None:
                raise DimensionError(f"alignment was built without a {name} projection")
        lead = {tuple(np.shape(x.data if isinstance(x, Tensor) else x)[:-1]) for _, x in parts}
        if len(lead) != 1:
            raise DimensionError(f"feature blocks disagree on leading shape: {sorted(lead)}")
        return ops.concat([layer(x) for layer, x in parts], axis=-1)


def align_concat(params: Alignment, X_V, X_E, X_T, X_C=None) -> Tensor:
    return params(X_V, X_E, X_T, X_C)


# -- time-span control signal --------------------------------------------------------

def _first_valid(mask: np.ndarray) -> np.ndarray:
    return np.argmax(mask, axis=1)


def timespan_inputs(times, mask, taus, cfg: TimeEncoderConfig, gap: str = "backward"):
    """Encoded normalised gaps plus the boundary value for each left-padded row.

    Returns ``(feats, rest, first, boundary)``: ``feats`` (B, L, d_T) holds
    ``cos(omega * gap / (tau - t_1))``, ``rest`` marks valid non-first
    positions, ``first`` marks the first valid position and ``boundary`` is
    ``1 / (tau - t_1)`` per row (0 for empty rows).
    """
    if gap not in GAP_MODES:
        raise ConfigurationError(f"gap mode must be one of {GAP_MODES}, got {gap!r}")
    times = np.asarray(times, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    taus = np.asarray(taus, dtype=np.float64)
    B, L = times.shape
    has = mask.any(axis=1)
    start = _first_valid(mask)
    t1 = times[np.arange(B), start]
    window = taus - t1
    if np.any(has & (window <= 0)):
        raise DegenerateWindowError("query time must lie strictly after the first interaction")
    window = np.where(has, window, 1.0)

    first = np.zeros_like(mask)
    first[np.arange(B)[has], start[has]] = True
    rest = mask & ~first
    if gap == "backward":
        prev = np.concatenate([times[:, :1], times[:, :-1]], axis=1)
        raw = times - prev
    else:
        nxt = np.concatenate([times[:, 1:], taus[:, None]], axis=1)
        raw = nxt - times
    raw = np.where(rest, raw, 0.0)
    feats = time_encode(cfg, raw / window[:, None]) * rest[..., None]
    boundary = np.where(has, 1.0 / window, 0.0)
    return feats, rest, first, boundary


class TimeSpanEncoder(Module):
    """SiLU(Linear(encoded gap)) for later positions, ``1 / (tau - t_1)`` at the first."""

    def __init__(self, cfg: TimeEncoderConfig, width: int, rng: np.random.Generator, gap: str = "backward"):
        if gap not in GAP_MODES:
            raise ConfigurationError(f"gap mode must be one of {GAP_MODES}, got {gap!r}")
        self.linear = Linear(cfg.d_T, width, rng)
        self._cfg = cfg
        self._gap = gap

    @property
    def width(self) -> int:
        return self.linear.d_out

    def __call__(self, times, mask, taus) -> Tensor:
        feats, rest, first, boundary = timespan_inputs(times, mask, taus, self._cfg, self._gap)
        dtype = get_dtype()
        body = ops.silu(self.linear(Tensor(feats))) * rest[..., None].astype(dtype)
        head = (first * boundary[:, None])[..., None].astype(dtype)
        return body + head


def timespan_signal(t, tau: float, cfg: TimeEncoderConfig, W, b, gap: str = "backward") -> np.ndarray:
    """Control signals for one sequence ``t_1 <= ... <= t_n < tau``; returns (n, width)."""
    t = np.asarray(t, dtype=np.float64).reshape(1, -1)
    n = t.shape[1]
    if n == 0:
        return np.zeros((0, np.shape(W)[1]))
    feats, rest, first, boundary = timespan_inputs(t, np.ones_like(t, bool), [tau], cfg, gap)
    W = np.asarray(getattr(W, "data", W))
    b = np.asarray(getattr(b, "data", b))
    pre = feats[0] @ W + b
    body = pre / (1.0 + np.exp(-pre)) * rest[0, :, None]
    return body + first[0, :, None] * boundary[0]
