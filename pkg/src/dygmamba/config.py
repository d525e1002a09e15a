"""Run configuration: an INI file with ``[run]``, ``[train]``, ``[model]``, ``[baseline]``, ``[bench]``.

Every key is optional and falls back to the defaults below.  Validation
collects every bad field before raising, so one run reports all problems.
Environment variables are never consulted.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .graph import HISTORY_SCOPES
from .model import ABLATIONS, ModelConfig
from .tasks import STRATEGIES

TASKS = ("link_prediction", "node_classification")
PRECISIONS = ("f64", "f32")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    patience: int = 20
    batch_size: int = 200
    eval_batch_size: int = 200
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    inductive_fraction: float = 0.0
    history_scope: str = "all_before_tau"
    strategies: tuple[str, ...] = ("rnd", "hist", "ind")
    noise_levels: tuple[float, ...] = ()
    max_train_batches: int = 0   # 0 = no cap; a cap shortens desk-scale smoke runs


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "edgebank"
    variants: tuple[str, ...] = ("infinity",)


@dataclass(frozen=True)
class BenchConfig:
    lengths: tuple[int, ...] = (1, 512, 1024, 2048)
    batch: int = 8
    channels: int = 64
    d_ssm: int = 16
    repeats: int = 5


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    task: str = "link_prediction"
    seed: int = 0
    output: str = "out"
    precision: str = "f64"
    threads: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


# -- parsing ---------------------------------------------------------------------------

def _convert(kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind in (int, float, str):
        return kind(raw)
    raise TypeError(kind)


def _field_types(cls) -> dict[str, tuple]:
    """Map field name -> (scalar type, is_tuple); nested dataclass fields are skipped."""
    out = {}
    for name, t in typing.get_type_hints(cls).items():
        if t in (int, float, str, bool):
            out[name] = (t, False)
        elif typing.get_origin(t) is tuple:
            out[name] = (typing.get_args(t)[0], True)
    return out


def _section(parser: configparser.ConfigParser, name: str, cls, errors: list[str], base):
    if not parser.has_section(name):
        return base
    types = _field_types(cls)
    values = {}
    for key, raw in parser.items(name):
        if key not in types:
            errors.append(f"[{name}] {key}: unknown key")
            continue
        kind, is_tuple = types[key]
        try:
            if is_tuple:
                parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
                values[key] = tuple(_convert(kind, p) for p in parts)
            else:
                values[key] = _convert(kind, raw)
        except (ValueError, TypeError) as exc:
            errors.append(f"[{name}] {key}: {exc}")
    try:
        return dataclasses.replace(base, **values)
    except ConfigurationError as exc:
        errors.append(f"[{name}] {exc}")
        return base


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive (d_T, d_C)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    errors: list[str] = []
    known = {"run", "train", "model", "baseline", "bench"}
    for sec in parser.sections():
        if sec not in known:
            errors.append(f"[{sec}]: unknown section")
    base = RunConfig()
    run_types = _field_types(RunConfig)
    run_values = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in run_types:
                errors.append(f"[run] {key}: unknown key")
                continue
            try:
                run_values[key] = _convert(run_types[key][0], raw)
            except ValueError as exc:
                errors.append(f"[run] {key}: {exc}")
    cfg = dataclasses.replace(
        base, **run_values,
        train=_section(parser, "train", TrainConfig, errors, base.train),
        model=_section(parser, "model", ModelConfig, errors, base.model),
        baseline=_section(parser, "baseline", BaselineConfig, errors, base.baseline),
        bench=_section(parser, "bench", BenchConfig, errors, base.bench),
    )
    errors.extend(validate(cfg))
    if errors:
        raise ConfigurationError(f"{source}: invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def validate(cfg: RunConfig) -> list[str]:
    errs = []
    if cfg.task not in TASKS:
        errs.append(f"[run] task: must be one of {TASKS}")
    if cfg.precision not in PRECISIONS:
        errs.append(f"[run] precision: must be one of {PRECISIONS}")
    if cfg.threads < 1:
        errs.append("[run] threads: must be >= 1")
    if cfg.seed < 0:
        errs.append("[run] seed: must be >= 0")
    t = cfg.train
    for name in ("epochs", "patience", "batch_size", "eval_batch_size"):
        if getattr(t, name) < 1:
            errs.append(f"[train] {name}: must be positive")
    if t.lr < 0:
        errs.append("[train] lr: must be non-negative")
    if t.max_train_batches < 0:
        errs.append("[train] max_train_batches: must be >= 0")
    if len(t.ratios) != 3 or abs(sum(t.ratios) - 1) > 1e-9 or min(t.ratios, default=0) < 0:
        errs.append("[train] ratios: need three non-negative values summing to 1")
    if not 0 <= t.inductive_fraction < 1:
        errs.append("[train] inductive_fraction: must lie in [0, 1)")
    if t.history_scope not in HISTORY_SCOPES:
        errs.append(f"[train] history_scope: must be one of {HISTORY_SCOPES}")
    bad = [s for s in t.strategies if s not in STRATEGIES]
    if bad or not t.strategies:
        errs.append(f"[train] strategies: must be a non-empty subset of {STRATEGIES}")
    if any(not 0 <= s <= 1 for s in t.noise_levels):
        errs.append("[train] noise_levels: each level must lie in [0, 1]")
    m = cfg.model
    for name in ("d_T", "d_C", "d", "d_out", "head_hidden", "d_ssm", "expand", "blocks", "conv_width", "seq_len"):
        if getattr(m, name) < 1:
            errs.append(f"[model] {name}: must be positive")
    if m.gap not in ("backward", "forward"):
        errs.append("[model] gap: must be backward or forward")
    if m.attn_wiring not in ("cross", "self"):
        errs.append("[model] attn_wiring: must be cross or self")
    bad = [a for a in m.ablations if a not in ABLATIONS]
    if bad:
        errs.append(f"[model] ablations: unknown flags {bad}")
    if cfg.baseline.kind != "edgebank":
        errs.append("[baseline] kind: only edgebank is available")
    bad = [v for v in cfg.baseline.variants if v not in ("infinity", "time_window")]
    if bad:
        errs.append(f"[baseline] variants: unknown {bad}")
    b = cfg.bench
    if b.repeats < 1 or b.batch < 1 or b.channels < 1 or b.d_ssm < 1 or any(L < 1 for L in b.lengths):
        errs.append("[bench] all sizes must be positive")
    return errs


# -- snapshot and hashing -------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Canonical INI text; parsing it back yields an equal RunConfig."""
    lines = ["[run]"]
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if not dataclasses.is_dataclass(v):
            lines.append(f"{f.name} = {_fmt(v)}")
    for name in ("train", "model", "baseline", "bench"):
        lines.append("")
        lines.append(f"[{name}]")
        sub = getattr(cfg, name)
        for f in dataclasses.fields(sub):
            lines.append(f"{f.name} = {_fmt(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def run_id(cfg: RunConfig, seed: int, dataset_digest: str) -> str:
    h = hashlib.sha256()
    h.update(dump_config(cfg).encode())
    h.update(json.dumps({"seed": int(seed), "data": dataset_digest}).encode())
    return h.hexdigest()[:16]
