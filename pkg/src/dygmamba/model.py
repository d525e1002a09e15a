"""Full link-prediction and node-classification models."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import CrossAttention
from .core import ops
from .core.nn import Linear, Module
from .core.tensor import Tensor, get_dtype, no_grad
from .encodings import (Alignment, CoocEncoder, TimeEncoderConfig, TimeSpanEncoder,
                        cooccurrence_counts_batch, time_encode)
from .errors import ConfigurationError
from .graph import SequenceBatch, TemporalGraph, gather_sequences
from .ssm.block import CssmBlock, CssmConfig
from .tasks import LinkHead, NodeHead, readout_mean

ABLATIONS = ("no_time_span", "no_selective", "no_cross_attn", "all_time_dependent", "no_time_encoding")


@dataclass(frozen=True)
class ModelConfig:
    d_T: int = 100
    d_C: int = 50
    d: int = 50
    d_out: int = 172
    head_hidden: int = 172
    d_ssm: int = 16
    expand: int = 2
    blocks: int = 2
    conv_width: int = 4
    seq_len: int = 32
    gap: str = "backward"
    attn_wiring: str = "cross"
    attn_causal: bool = False
    shared_delta_bias: bool = False
    ablations: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "ablations", tuple(sorted(set(self.ablations))))
        bad = [a for a in self.ablations if a not in ABLATIONS]
        if bad:
            raise ConfigurationError(f"unknown ablation flags {bad}; expected a subset of {ABLATIONS}")

    def has(self, flag: str) -> bool:
        return flag in self.ablations

    def as_dict(self) -> dict:
        out = asdict(self)
        out["ablations"] = list(self.ablations)
        return out


def _ssm_config(cfg: ModelConfig, width: int) -> CssmConfig:
    return CssmConfig(d_model=width, d_ssm=cfg.d_ssm, expand=cfg.expand, conv_width=cfg.conv_width,
                      delta_width=width, selective=not cfg.has("no_selective"),
                      bc_from_time=cfg.has("all_time_dependent"),
                      delta_source="content" if cfg.has("no_time_span") else "time_span",
                      shared_delta_bias=cfg.shared_delta_bias)


@dataclass
class EncodedInputs:
    Z: Tensor          # (B, L, D) aligned features
    dt: Tensor         # (B, L, D) time-span control features
    mask: np.ndarray   # (B, L)


class _SequenceEncoder(Module):
    """Feature construction plus the stacked SSM blocks, shared by both tasks."""

    def __init__(self, cfg: ModelConfig, d_V: int, d_E: int, rng: np.random.Generator, with_cooc: bool):
        self._cfg = cfg
        self._time = TimeEncoderConfig(cfg.d_T)
        d_T = None if cfg.has("no_time_encoding") else cfg.d_T
        self.cooc = CoocEncoder(cfg.d_C, rng) if with_cooc else None
        self.align = Alignment(d_V, d_E, d_T, cfg.d_C if with_cooc else None, cfg.d, rng)
        width = self.align.width
        self.timespan = TimeSpanEncoder(self._time, width, rng, cfg.gap)
        ssm = _ssm_config(cfg, width)
        self.blocks = [CssmBlock(ssm, rng) for _ in range(cfg.blocks)]

    @property
    def width(self) -> int:
        return self.align.width

    def features(self, g: TemporalGraph, seq: SequenceBatch, counts=None) -> EncodedInputs:
        dtype = get_dtype()
        m = seq.mask
        X_V = g.node_feat[seq.neighbors].astype(dtype) * m[..., None]
        X_E = seq.edge_feat.astype(dtype)
        X_T = None
        if self.align.T is not None:
            rel = np.where(m, seq.taus[:, None] - seq.times, 0.0)
            X_T = time_encode(self._time, rel) * m[..., None]
        X_C = self.cooc(counts) if self.cooc is not None else None
        Z = self.align(X_V, X_E, X_T, X_C)
        return EncodedInputs(Z, self.timespan(seq.times, m, seq.taus), m)

    def encode(self, inputs: EncodedInputs) -> Tensor:
        Z = inputs.Z
        for block in self.blocks:
            Z = block(Z, inputs.dt, inputs.mask)
        return Z


def _stack(a: SequenceBatch, b: SequenceBatch) -> SequenceBatch:
    return SequenceBatch(*(np.concatenate([getattr(a, f), getattr(b, f)], axis=0)
                           for f in ("anchors", "taus", "neighbors", "event_idx", "times", "mask", "edge_feat")))


class DyGMamba(Module):
    """Link predictor: encode both endpoint histories, cross-attend, pool, score."""

    def __init__(self, cfg: ModelConfig, d_V: int, d_E: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self._cfg = cfg
        self.encoder = _SequenceEncoder(cfg, d_V, d_E, rng, with_cooc=True)
        D = self.encoder.width
        self.cross = None if cfg.has("no_cross_attn") else \
            CrossAttention(D, rng, cfg.attn_wiring, cfg.attn_causal)
        self.out_proj = Linear(D, cfg.d_out, rng)
        self.head = LinkHead(cfg.d_out, cfg.head_hidden, rng)

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    def sequences(self, g: TemporalGraph, src, dst, t, noise_ratio: float = 0.0, noise_seed: int = 0):
        L = self._cfg.seq_len
        su = gather_sequences(g, src, t, L, noise_ratio, noise_seed)
        sv = gather_sequences(g, dst, t, L, noise_ratio, noise_seed)
        return su, sv

    def inputs(self, g: TemporalGraph, su: SequenceBatch, sv: SequenceBatch) -> EncodedInputs:
        cu, cv = cooccurrence_counts_batch(su.neighbors, su.mask, sv.neighbors, sv.mask)
        both = _stack(su, sv)
        return self.encoder.features(g, both, np.concatenate([cu, cv], axis=0))

    def embed(self, g: TemporalGraph, src, dst, t, noise_ratio: float = 0.0, noise_seed: int = 0):
        """(h_src, h_dst), each (B, d_out)."""
        su, sv = self.sequences(g, src, dst, t, noise_ratio, noise_seed)
        inputs = self.inputs(g, su, sv)
        H = self.encoder.encode(inputs)
        n = len(su.anchors)
        Hu, Hv = H[:n], H[n:]
        if self.cross is not None:
            Hu, Hv = self.cross(Hu, Hv, su.mask, sv.mask)
        hu = self.out_proj(readout_mean(Hu, su.mask, allow_empty=True))
        hv = self.out_proj(readout_mean(Hv, sv.mask, allow_empty=True))
        return hu, hv

    def logits(self, g: TemporalGraph, src, dst, t, **kw) -> Tensor:
        hu, hv = self.embed(g, src, dst, t, **kw)
        return self.head.logits(hu, hv)

    def __call__(self, g: TemporalGraph, src, dst, t, **kw) -> Tensor:
        return ops.sigmoid(self.logits(g, src, dst, t, **kw))

    def predict(self, g: TemporalGraph, src, dst, t, **kw) -> np.ndarray:
        with no_grad():
            return self(g, src, dst, t, **kw).data.astype(np.float64)

    def block_deltas(self, g: TemporalGraph, src, dst, t) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-block (forward, backward) step sizes for a batch of queries."""
        with no_grad():
            su, sv = self.sequences(g, src, dst, t)
            inputs = self.inputs(g, su, sv)
            Z, out = inputs.Z, []
            for block in self.encoder.blocks:
                out.append(block.deltas(Z, inputs.dt, inputs.mask))
                Z = block(Z, inputs.dt, inputs.mask)
            return out


class DyGMambaNodeClassifier(Module):
    """Node-state classifier: node, edge and time encodings only, no cross layer."""

    def __init__(self, cfg: ModelConfig, d_V: int, d_E: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self._cfg = cfg
        self.encoder = _SequenceEncoder(cfg, d_V, d_E, rng, with_cooc=False)
        self.out_proj = Linear(self.encoder.width, cfg.d_out, rng)
        self.head = NodeHead(cfg.d_out, cfg.head_hidden, rng)

    def logits(self, g: TemporalGraph, nodes, t, noise_ratio: float = 0.0, noise_seed: int = 0) -> Tensor:
        seq = gather_sequences(g, nodes, t, self._cfg.seq_len, noise_ratio, noise_seed)
        H = self.encoder.encode(self.encoder.features(g, seq))
        return self.head.logits(self.out_proj(readout_mean(H, seq.mask, allow_empty=True)))

    def __call__(self, g: TemporalGraph, nodes, t, **kw) -> Tensor:
        return ops.sigmoid(self.logits(g, nodes, t, **kw))
