"""Task heads, readout, loss, negative sampling and the EdgeBank baseline."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ops
from .core.nn import Linear, Module
from .core.tensor import Tensor, as_tensor, get_dtype
from .errors import ConfigurationError, ContractError, DimensionError, EmptySequenceError, SamplingError

STRATEGIES = ("rnd", "hist", "ind")
BCE_CLAMP = 1e-7


# -- readout and heads ----------------------------------------------------------

def readout_mean(H, mask, allow_empty: bool = False) -> Tensor:
    """Mean over the valid rows of (..., L, D); empty rows raise unless ``allow_empty`` (then zeros)."""
    H = as_tensor(H)
    m = np.asarray(mask, dtype=bool)
    if m.shape != H.shape[:-1]:
        raise DimensionError(f"mask {m.shape} does not match rows of {H.shape}")
    counts = m.sum(axis=-1, keepdims=True)
    if not allow_empty and np.any(counts == 0):
        raise EmptySequenceError("readout over a sequence with no valid rows")
    w = (m / np.maximum(counts, 1)).astype(get_dtype())
    return ops.sum(H * w[..., None], axis=-2)


class LinkHead(Module):
    """``sigmoid(Linear(ReLU(Linear(h_u || h_v))))``; a single logit stands in for a 2-way softmax."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(2 * d, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def logits(self, h_u, h_v) -> Tensor:
        x = ops.concat([as_tensor(h_u), as_tensor(h_v)], axis=-1)
        out = self.fc2(ops.relu(self.fc1(x)))
        return ops.reshape(out, out.shape[:-1])

    def __call__(self, h_u, h_v) -> Tensor:
        return ops.sigmoid(self.logits(h_u, h_v))


class NodeHead(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def logits(self, h) -> Tensor:
        out = self.fc2(ops.relu(self.fc1(h)))
        return ops.reshape(out, out.shape[:-1])

    def __call__(self, h) -> Tensor:
        return ops.sigmoid(self.logits(h))


def link_predict(h_u, h_v, params: LinkHead) -> Tensor:
    return params(h_u, h_v)


def node_classify(h, params: NodeHead) -> Tensor:
    return params(h)


def bce_loss(preds, labels) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    preds = as_tensor(preds)
    y = np.asarray(labels, dtype=preds.dtype)
    if y.shape != preds.shape:
        raise DimensionError(f"{preds.shape[0] if preds.ndim else 1} predictions vs {y.size} labels")
    p = ops.clip(preds, BCE_CLAMP, 1.0 - BCE_CLAMP)
    terms = ops.log(p) * y + ops.log(1.0 - p) * (1.0 - y)
    return -ops.mean(terms)


# -- negative sampling -----------------------------------------------------------

@dataclass(frozen=True)
class NegativeSampleSpec:
    strategy: str = "rnd"
    seed: int = 0
    fallback: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"negative sampling strategy must be one of {STRATEGIES}, "
                                     f"got {self.strategy!r}")


@dataclass
class NegativeBatch:
    src: np.ndarray
    dst: np.ndarray
    fallback: np.ndarray  # True where the pair came from the random fallback
    strategy: str

    def __len__(self) -> int:
        return len(self.src)


def _pairs(src, dst) -> set[tuple[int, int]]:
    return set(zip(np.asarray(src).tolist(), np.asarray(dst).tolist()))


class NegativeSampler:
    """One negative per positive for chronological batches of a graph.

    ``train_stop`` is the first event index after the training segment.  For a
    batch starting at event ``start``, the pools are
    hist = E_train minus E_t and ind = E_test minus E_train minus E_t, where E_t
    is the set of positive pairs of the batch and E_test the pairs observed
    after training and before ``start``.  Pools are rebuilt per batch.
    """

    def __init__(self, graph, spec: NegativeSampleSpec, train_stop: int, train_events=None):
        self.graph = graph
        self.spec = spec
        self.train_stop = int(train_stop)
        idx = np.arange(self.train_stop) if train_events is None else np.asarray(train_events)
        self.E_train = _pairs(graph.src[idx], graph.dst[idx])
        self.node_count = graph.node_count

    def pools(self, batch_events) -> dict[str, set[tuple[int, int]]]:
        ev = np.asarray(batch_events)
        start = int(ev.min()) if len(ev) else self.train_stop
        E_t = _pairs(self.graph.src[ev], self.graph.dst[ev])
        lo = min(self.train_stop, start)
        E_test = _pairs(self.graph.src[lo:start], self.graph.dst[lo:start])
        return {"hist": self.E_train - E_t, "ind": E_test - self.E_train - E_t, "E_t": E_t}

    def _random_dst(self, rng, pos_dst) -> np.ndarray:
        dst = rng.integers(0, self.node_count, size=len(pos_dst))
        if self.node_count > 1:
            clash = dst == pos_dst
            while clash.any():
                dst[clash] = rng.integers(0, self.node_count, size=int(clash.sum()))
                clash = dst == pos_dst
        return dst

    def sample(self, batch_events, batch_number: int = 0) -> NegativeBatch:
        ev = np.asarray(batch_events, dtype=np.int64)
        pos_src, pos_dst = self.graph.src[ev], self.graph.dst[ev]
        rng = np.random.default_rng([self.spec.seed & 0xFFFFFFFF, int(batch_number), len(ev)])
        n = len(ev)
        if self.spec.strategy == "rnd":
            return NegativeBatch(pos_src.copy(), self._random_dst(rng, pos_dst), np.zeros(n, bool), "rnd")
        pool = sorted(self.pools(ev)[self.spec.strategy])
        if not pool and not self.spec.fallback:
            raise SamplingError(f"{self.spec.strategy} candidate pool is empty and fallback is disabled")
        src = pos_src.copy()
        dst = self._random_dst(rng, pos_dst)
        flag = np.ones(n, dtype=bool)
        if pool:
            arr = np.asarray(pool, dtype=np.int64)
            if self.spec.fallback:
                k = min(n, len(arr))
                pick = rng.choice(len(arr), size=k, replace=False)
                slots = rng.choice(n, size=k, replace=False)
            else:
                pick = rng.integers(0, len(arr), size=n)
                slots = np.arange(n)
            src[slots] = arr[pick, 0]
            dst[slots] = arr[pick, 1]
            flag[slots] = False
        return NegativeBatch(src, dst, flag, self.spec.strategy)


def sample_negatives(spec: NegativeSampleSpec, graph, train_stop: int, batch_events,
                     batch_number: int = 0) -> NegativeBatch:
    return NegativeSampler(graph, spec, train_stop).sample(batch_events, batch_number)


def dump_negatives(path, graph, batch_events, neg: NegativeBatch, append: bool = True) -> None:
    """Audit lines ``pos_src,pos_dst,t,neg_dst,strategy,fallback_flag,neg_src``."""
    ev = np.asarray(batch_events)
    with Path(path).open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for i, e in enumerate(ev):
            w.writerow([int(graph.src[e]), int(graph.dst[e]), repr(float(graph.t[e])), int(neg.dst[i]),
                        neg.strategy, int(neg.fallback[i]), int(neg.src[i])])


# -- EdgeBank -------------------------------------------------------------------------

class EdgeBankMemory:
    """Memorisation baseline: a pair scores 1 iff it was observed (within the window)."""

    VARIANTS = ("infinity", "time_window")

    def __init__(self, variant: str = "infinity", window: float | None = None):
        if variant not in self.VARIANTS:
            raise ConfigurationError(f"EdgeBank variant must be one of {self.VARIANTS}, got {variant!r}")
        if variant == "time_window" and (window is None or window <= 0):
            raise ConfigurationError("time-window EdgeBank needs a positive window length")
        self.variant = variant
        self.window = window
        self.last_seen: dict[tuple[int, int], float] = {}
        self.frontier = -np.inf

    def update(self, src, dst, t) -> None:
        src, dst, t = np.atleast_1d(src), np.atleast_1d(dst), np.atleast_1d(np.asarray(t, dtype=np.float64))
        for s, d, ts in zip(src.tolist(), dst.tolist(), t.tolist()):
            key = (s, d)
            if ts >= self.last_seen.get(key, -np.inf):
                self.last_seen[key] = ts
            self.frontier = max(self.frontier, ts)

    def predict(self, src, dst, t) -> np.ndarray:
        src, dst = np.atleast_1d(src), np.atleast_1d(dst)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), src.shape)
        if np.any(t < self.frontier):
            raise ContractError("EdgeBank queried behind its memory frontier")
        out = np.zeros(len(src), dtype=np.float64)
        for i, key in enumerate(zip(src.tolist(), dst.tolist())):
            last = self.last_seen.get(key)
            if last is None:
                continue
            if self.variant == "infinity" or t[i] - last <= self.window:
                out[i] = 1.0
        return out


def edgebank_update(memory: EdgeBankMemory, event) -> None:
    memory.update(event.src, event.dst, event.t)


def edgebank_predict(memory: EdgeBankMemory, pair, t) -> float:
    return float(memory.predict([pair[0]], [pair[1]], t)[0])
