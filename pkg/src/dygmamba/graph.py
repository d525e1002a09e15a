"""Continuous-time interaction streams: storage, splits and first-hop sampling."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ParseError, TooSmallError, UnknownNodeError

log = logging.getLogger(__name__)

HISTORY_SCOPES = ("train_only", "all_before_tau")


@dataclass(frozen=True)
class InteractionEvent:
    src: int
    dst: int
    t: float
    edge_feat: tuple[float, ...] = ()
    label: int | None = None


@dataclass(frozen=True)
class EventSchema:
    """Column layout of an event file: ``src,dst,ts,label,f0..f{d_E-1}``."""

    edge_feat_dim: int | None = None  # None: infer from the header
    fixed_columns: tuple[str, ...] = ("src", "dst", "ts", "label")

    def check_header(self, header: list[str], path) -> int:
        head = [h.strip() for h in header]
        if tuple(head[:4]) != self.fixed_columns:
            raise ParseError(f"header must start with {','.join(self.fixed_columns)}, got {','.join(head[:4])}",
                             line=1, path=path)
        feats = head[4:]
        expected = [f"f{i}" for i in range(len(feats))]
        if feats != expected:
            raise ParseError("feature columns must be named f0..f{d_E-1} in order", line=1, path=path)
        if self.edge_feat_dim is not None and self.edge_feat_dim != len(feats):
            raise ParseError(f"expected {self.edge_feat_dim} edge features, header has {len(feats)}",
                             line=1, path=path)
        return len(feats)


class TemporalGraph:
    """Chronologically sorted event store with a per-node time index.

    Events are held column-wise (``src``, ``dst``, ``t``, ``edge_feat``,
    ``labels``).  The adjacency index keeps, for every node, the events it
    takes part in sorted by time, so "most recent ``L`` interactions before
    ``tau``" is a binary search plus a slice.
    """

    def __init__(self, src, dst, t, edge_feat=None, labels=None, node_count: int | None = None,
                 node_feat=None, id_map: Sequence[str] | None = None, node_feat_dim: int = 0):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        t = np.asarray(t, dtype=np.float64)
        n = len(t)
        if not (len(src) == len(dst) == n):
            raise ContractError("src, dst and t must have equal length")
        if n and t.min() < 0:
            raise ContractError("timestamps must be non-negative")
        if edge_feat is None:
            edge_feat = np.zeros((n, 0))
        edge_feat = np.asarray(edge_feat, dtype=np.float64)
        edge_feat = edge_feat.reshape(n, edge_feat.shape[-1] if edge_feat.ndim > 1 else (1 if n else 0))
        if labels is None:
            labels = np.full(n, np.nan)
        labels = np.asarray(labels, dtype=np.float64)

        order = np.argsort(t, kind="stable")
        if n and np.any(order != np.arange(n)):
            src, dst, t = src[order], dst[order], t[order]
            edge_feat, labels = edge_feat[order], labels[order]
        self.src, self.dst, self.t = src, dst, t
        self.edge_feat = edge_feat
        self.labels = labels
        max_id = int(max(src.max(), dst.max())) + 1 if n else 0
        self.node_count = max(node_count or 0, max_id)
        if node_feat is None:
            node_feat = np.zeros((self.node_count, node_feat_dim))
        self.node_feat = np.asarray(node_feat, dtype=np.float64)
        if self.node_feat.shape[0] != self.node_count:
            raise ContractError(f"node_feat has {self.node_feat.shape[0]} rows for {self.node_count} nodes")
        self.id_map = list(id_map) if id_map is not None else [str(i) for i in range(self.node_count)]
        self._build_index()

    def _build_index(self) -> None:
        n = len(self.t)
        idx = np.arange(n)
        loops = self.src == self.dst
        owner = np.concatenate([self.src, self.dst[~loops]])
        other = np.concatenate([self.dst, self.src[~loops]])
        ev = np.concatenate([idx, idx[~loops]])
        # stable by (owner, event index); event index order is time order
        order = np.lexsort((ev, owner)) if n else np.zeros(0, dtype=np.int64)
        self._adj_other = other[order]
        self._adj_event = ev[order]
        self._adj_t = self.t[self._adj_event]
        counts = np.bincount(owner, minlength=self.node_count) if n else np.zeros(self.node_count, np.int64)
        self._adj_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    # -- basic accessors --------------------------------------------------
    def __len__(self) -> int:
        return len(self.t)

    @property
    def edge_feat_dim(self) -> int:
        return self.edge_feat.shape[1]

    @property
    def node_feat_dim(self) -> int:
        return self.node_feat.shape[1]

    @property
    def events(self) -> list[InteractionEvent]:
        return [self.event(i) for i in range(len(self))]

    def event(self, i: int) -> InteractionEvent:
        lab = self.labels[i]
        return InteractionEvent(int(self.src[i]), int(self.dst[i]), float(self.t[i]),
                                tuple(float(v) for v in self.edge_feat[i]),
                                None if np.isnan(lab) else int(lab))

    def adjacency(self, node: int) -> list[tuple[int, int, float]]:
        """Chronological ``(other_node, event_index, t)`` triples for ``node``."""
        lo, hi = self._slice(node)
        return [(int(o), int(e), float(t)) for o, e, t in
                zip(self._adj_other[lo:hi], self._adj_event[lo:hi], self._adj_t[lo:hi])]

    def _slice(self, node: int) -> tuple[int, int]:
        if not 0 <= node < self.node_count:
            raise UnknownNodeError(node)
        return int(self._adj_ptr[node]), int(self._adj_ptr[node + 1])

    def subgraph(self, event_indices: np.ndarray) -> "TemporalGraph":
        """Same node universe, restricted to the given events (kept in time order)."""
        sel = np.sort(np.asarray(event_indices, dtype=np.int64))
        g = TemporalGraph(self.src[sel], self.dst[sel], self.t[sel], self.edge_feat[sel], self.labels[sel],
                          node_count=self.node_count, node_feat=self.node_feat, id_map=self.id_map)
        g.parent_index = sel
        return g

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.src, self.dst, self.t, self.edge_feat, np.nan_to_num(self.labels, nan=-1.0)):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def stats(self) -> dict:
        span = float(self.t[-1] - self.t[0]) if len(self) else 0.0
        return {
            "nodes": self.node_count,
            "edges": len(self),
            "edge_feat_dim": self.edge_feat_dim,
            "node_feat_dim": self.node_feat_dim,
            "unique_timestamps": int(len(np.unique(self.t))),
            "t_min": float(self.t[0]) if len(self) else 0.0,
            "t_max": float(self.t[-1]) if len(self) else 0.0,
            "time_span": span,
            "labelled_events": int(np.sum(~np.isnan(self.labels))),
        }

    @classmethod
    def from_events(cls, events: Iterable[InteractionEvent], **kw) -> "TemporalGraph":
        events = list(events)
        d = len(events[0].edge_feat) if events else 0
        return cls([e.src for e in events], [e.dst for e in events], [e.t for e in events],
                   np.array([e.edge_feat for e in events], dtype=np.float64).reshape(len(events), d),
                   [np.nan if e.label is None else e.label for e in events], **kw)


# -- file IO -------------------------------------------------------------------

def load_events(path, schema: EventSchema | None = None, node_feat_dim: int = 0,
                node_features=None) -> TemporalGraph:
    """Read an event file; ids are densely re-indexed in order of first appearance."""
    schema = schema or EventSchema()
    path = Path(path)
    src_raw, dst_raw, ts, labels, feats = [], [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return TemporalGraph([], [], [], node_feat_dim=node_feat_dim)
        d_e = schema.check_header(header, path)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4 + d_e:
                raise ParseError(f"expected {4 + d_e} columns, found {len(row)}", line=lineno, path=path)
            try:
                t = float(row[2])
                lab = row[3].strip()
                label = float(int(float(lab))) if lab else np.nan
                f = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
            if not math.isfinite(t) or t < 0:
                raise ParseError(f"timestamp must be finite and non-negative, got {row[2]!r}",
                                 line=lineno, path=path)
            src_raw.append(row[0].strip())
            dst_raw.append(row[1].strip())
            ts.append(t)
            labels.append(label)
            feats.append(f)

    ts_arr = np.asarray(ts, dtype=np.float64)
    if len(ts_arr) > 1 and np.any(np.diff(ts_arr) < 0):
        log.warning("%s: timestamps are not monotone; events were stably sorted", path)
    order = np.argsort(ts_arr, kind="stable")
    ids: dict[str, int] = {}
    src, dst = [], []
    for i in order:
        for raw, out in ((src_raw[i], src), (dst_raw[i], dst)):
            out.append(ids.setdefault(raw, len(ids)))
    id_map = list(ids)
    node_feat = None
    if node_features is not None:
        node_feat = np.asarray(node_features, dtype=np.float64)
    return TemporalGraph(src, dst, ts_arr[order],
                         np.asarray(feats, dtype=np.float64).reshape(len(ts), d_e)[order],
                         np.asarray(labels, dtype=np.float64)[order] if labels else None,
                         node_count=len(ids), node_feat=node_feat, id_map=id_map,
                         node_feat_dim=node_feat_dim)


def save_events(g: TemporalGraph, path) -> None:
    """Write ``g`` in the event-file layout using original node ids."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "ts", "label"] + [f"f{i}" for i in range(g.edge_feat_dim)])
        for i in range(len(g)):
            lab = g.labels[i]
            w.writerow([g.id_map[g.src[i]], g.id_map[g.dst[i]], repr(float(g.t[i])),
                        "" if np.isnan(lab) else str(int(lab))]
                       + [repr(float(v)) for v in g.edge_feat[i]])


def save_id_map(g: TemporalGraph, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["original_id", "dense_id"])
        for dense, original in enumerate(g.id_map):
            w.writerow([original, dense])


def load_id_map(path) -> dict[str, int]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return {orig: int(dense) for orig, dense in rows[1:]}


def convert_edgelist(src_path, dst_path) -> int:
    """Turn a whitespace ``src dst ts`` edge list (e.g. SNAP CollegeMsg) into an event file."""
    n = 0
    with Path(src_path).open(encoding="utf-8") as fin, Path(dst_path).open("w", newline="", encoding="utf-8") as fout:
        w = csv.writer(fout)
        w.writerow(["src", "dst", "ts", "label"])
        for lineno, line in enumerate(fin, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 3:
                raise ParseError("expected 'src dst ts'", line=lineno, path=src_path)
            w.writerow([parts[0], parts[1], parts[2], ""])
            n += 1
    return n


# -- splits --------------------------------------------------------------------

@dataclass(frozen=True)
class SplitView:
    graph: TemporalGraph = field(repr=False, compare=False)
    role: str
    start: int
    stop: int
    unseen_node_set: frozenset = frozenset()
    noise_ratio: float = 0.0
    noise_seed: int = 0

    def __len__(self) -> int:
        return len(self.event_indices())

    def event_indices(self) -> np.ndarray:
        idx = np.arange(self.start, self.stop)
        if self.role == "train" and self.unseen_node_set:
            hidden = np.fromiter(self.unseen_node_set, dtype=np.int64)
            keep = ~(np.isin(self.graph.src[idx], hidden) | np.isin(self.graph.dst[idx], hidden))
            idx = idx[keep]
        return idx

    def nodes(self) -> set[int]:
        idx = self.event_indices()
        return set(self.graph.src[idx].tolist()) | set(self.graph.dst[idx].tolist())


def _floor(x: float) -> int:
    return int(math.floor(x + 1e-9))


def chronological_split(g: TemporalGraph, ratios=(0.70, 0.15, 0.15), inductive_fraction: float = 0.0,
                        seed: int = 0) -> tuple[SplitView, SplitView, SplitView]:
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ContractError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(g)
    if n < 3:
        raise TooSmallError(f"need at least 3 events to split, got {n}")
    b1 = _floor(ratios[0] * n)
    b2 = _floor((ratios[0] + ratios[1]) * n)
    unseen: frozenset = frozenset()
    if inductive_fraction > 0:
        later = np.unique(np.concatenate([g.src[b1:], g.dst[b1:]]))
        k = min(len(later), int(inductive_fraction * g.node_count))
        rng = np.random.default_rng(seed)
        unseen = frozenset(int(v) for v in rng.choice(later, size=k, replace=False))
    return (SplitView(g, "train", 0, b1, unseen),
            SplitView(g, "val", b1, b2, unseen),
            SplitView(g, "test", b2, n, unseen))


# -- neighbor sampling -------------------------------------------------------------

@dataclass
class NeighborSequence:
    anchor: int
    tau: float
    neighbors: np.ndarray
    event_idx: np.ndarray
    times: np.ndarray
    edge_feat: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def entries(self) -> list[tuple[int, tuple[float, ...], float]]:
        return [(int(n), tuple(f.tolist()), float(t))
                for n, f, t in zip(self.neighbors, self.edge_feat, self.times)]


def recent_neighbors(g: TemporalGraph, node: int, tau: float, L: int) -> NeighborSequence:
    """The (at most) ``L`` most recent interactions of ``node`` strictly before ``tau``."""
    if L < 1:
        raise ContractError(f"sequence length must be >= 1, got {L}")
    lo, hi = g._slice(node)
    cut = lo + int(np.searchsorted(g._adj_t[lo:hi], tau, side="left"))
    first = max(lo, cut - L)
    ev = g._adj_event[first:cut]
    return NeighborSequence(node, float(tau), g._adj_other[first:cut].copy(), ev.copy(),
                            g._adj_t[first:cut].copy(), g.edge_feat[ev])


def _noise_rng(seed: int, node: int, tau: float) -> np.random.Generator:
    bits = int(np.float64(tau).view(np.uint64))
    return np.random.default_rng([seed & 0xFFFFFFFF, node, bits & 0xFFFFFFFF, bits >> 32])


def perturb_sequence(seq: NeighborSequence, ratio: float, seed: int, node_count: int) -> NeighborSequence:
    """Replace ceil(ratio * n) entries with random nodes at random in-window times."""
    n = len(seq)
    k = min(n, math.ceil(ratio * n - 1e-12)) if ratio > 0 else 0
    if k == 0:
        return seq
    rng = _noise_rng(seed, seq.anchor, seq.tau)
    pos = np.sort(rng.choice(n, size=k, replace=False))
    neighbors = seq.neighbors.copy()
    times = seq.times.copy()
    neighbors[pos] = rng.integers(0, node_count, size=k)
    times[pos] = rng.uniform(seq.times.min(), seq.times.max(), size=k)
    order = np.argsort(times, kind="stable")
    out = NeighborSequence(seq.anchor, seq.tau, neighbors[order], seq.event_idx[order], times[order],
                           seq.edge_feat[order])
    out.noise_positions = pos
    return out


def inject_noise(view: SplitView, ratio: float, seed: int) -> SplitView:
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"noise ratio must lie in [0, 1], got {ratio}")
    return dataclasses.replace(view, noise_ratio=float(ratio), noise_seed=int(seed))


@dataclass
class SequenceBatch:
    """Left-padded neighbor sequences for a batch of (node, tau) queries."""

    anchors: np.ndarray   # (B,)
    taus: np.ndarray      # (B,)
    neighbors: np.ndarray  # (B, L) int, 0 where padded
    event_idx: np.ndarray  # (B, L) int, -1 where padded
    times: np.ndarray      # (B, L) float, 0 where padded
    mask: np.ndarray       # (B, L) bool
    edge_feat: np.ndarray  # (B, L, d_E), zeros where padded

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def gather_sequences(g: TemporalGraph, nodes, taus, L: int, noise_ratio: float = 0.0,
                     noise_seed: int = 0) -> SequenceBatch:
    nodes = np.asarray(nodes, dtype=np.int64)
    taus = np.asarray(taus, dtype=np.float64)
    B = len(nodes)
    nb = np.zeros((B, L), dtype=np.int64)
    ev = np.full((B, L), -1, dtype=np.int64)
    ts = np.zeros((B, L), dtype=np.float64)
    mask = np.zeros((B, L), dtype=bool)
    feat = np.zeros((B, L, g.edge_feat_dim), dtype=np.float64)
    for b in range(B):
        seq = recent_neighbors(g, int(nodes[b]), float(taus[b]), L)
        if noise_ratio > 0:
            seq = perturb_sequence(seq, noise_ratio, noise_seed, g.node_count)
        n = len(seq)
        if n:
            nb[b, L - n:] = seq.neighbors
            ev[b, L - n:] = seq.event_idx
            ts[b, L - n:] = seq.times
            mask[b, L - n:] = True
            feat[b, L - n:] = seq.edge_feat
    return SequenceBatch(nodes, taus, nb, ev, ts, mask, feat)


def synthetic_graph(n_nodes: int = 50, n_events: int = 500, d_E: int = 4, seed: int = 0,
                    repeat: float = 0.6, labels: bool = False, d_V: int = 0) -> TemporalGraph:
    """Bipartite-ish event stream where a share ``repeat`` of events revisit an earlier pair.

    Repeated pairs make future links predictable from history, which gives
    smoke tests and benchmarks a non-trivial signal.
    """
    if n_nodes < 2 or n_events < 1:
        raise ContractError("synthetic graph needs >= 2 nodes and >= 1 event")
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.exponential(1.0, n_events))
    src = np.empty(n_events, dtype=np.int64)
    dst = np.empty(n_events, dtype=np.int64)
    half = max(1, n_nodes // 2)
    for i in range(n_events):
        if i and rng.random() < repeat:
            j = rng.integers(0, i)
            src[i], dst[i] = src[j], dst[j]
        else:
            src[i] = rng.integers(0, half)
            dst[i] = rng.integers(half, n_nodes) if n_nodes > half else rng.integers(0, n_nodes)
    feat = rng.normal(size=(n_events, d_E))
    lab = (rng.random(n_events) < 0.3).astype(np.float64) if labels else None
    node_feat = rng.normal(size=(n_nodes, d_V))
    return TemporalGraph(src, dst, t, feat, lab, node_count=n_nodes, node_feat=node_feat)


def load_edgelist(path) -> TemporalGraph:
    """Whitespace ``src dst ts`` rows (``#`` comments allowed), no features or labels."""
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 3:
                raise ParseError("expected 'src dst ts'", line=lineno, path=path)
            try:
                t = float(parts[2])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
            if not math.isfinite(t) or t < 0:
                raise ParseError(f"timestamp must be finite and non-negative, got {parts[2]!r}",
                                 line=lineno, path=path)
            rows.append((parts[0], parts[1], t))
    order = sorted(range(len(rows)), key=lambda i: rows[i][2])
    ids: dict[str, int] = {}
    src, dst = [], []
    for i in order:
        src.append(ids.setdefault(rows[i][0], len(ids)))
        dst.append(ids.setdefault(rows[i][1], len(ids)))
    return TemporalGraph(src, dst, [rows[i][2] for i in order], node_count=len(ids), id_map=list(ids))


def load_dataset(path) -> TemporalGraph:
    """Event file (comma separated with a header) or whitespace edge list, detected from the first line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with path.open(encoding="utf-8") as fh:
        first = next((line for line in fh if line.strip() and not line.startswith("#")), "")
    return load_events(path) if "," in first else load_edgelist(path)
