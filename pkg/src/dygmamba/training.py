"""Training loop, evaluation under the three negative-sampling protocols, ablations and robustness runs."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, dump_config
from .core.optim import Adam
from .core.tensor import backward, new_tape, no_grad
from .errors import ContractError, MetricUndefinedError, NumericError
from .graph import SplitView, TemporalGraph, chronological_split, inject_noise, recent_neighbors
from .metrics import auc_roc, average_precision
from .model import DyGMamba, DyGMambaNodeClassifier, ModelConfig
from .tasks import EdgeBankMemory, NegativeSampler, NegativeSampleSpec, bce_loss

log = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ap: float
    val_auc: float
    seconds: float


@dataclass
class EvalReport:
    ap: float
    auc: float
    strategy: str
    split: str
    seed: int
    epoch_of_best: int
    seconds: float
    peak_len: int
    positives: int = 0
    negatives: int = 0
    fallback: int = 0          # negatives that came from the random fallback
    model: str = "dygmamba"
    variant: str = "full"
    setting: str = "transductive"
    noise: float = 0.0

    def __post_init__(self):
        for name in ("ap", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name}={v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "EvalReport":
        return EvalReport(**json.loads(line))


_TABLE_COLS = ("model", "variant", "setting", "split", "strategy", "noise", "ap", "auc",
               "positives", "fallback", "epoch_of_best", "peak_len", "seconds")


def format_table(reports: list[EvalReport]) -> str:
    """Aligned plain-text table, one row per report."""
    rows = [list(_TABLE_COLS)]
    for r in reports:
        row = []
        for c in _TABLE_COLS:
            v = getattr(r, c)
            row.append(f"{v:.4f}" if c in ("ap", "auc") else f"{v:.1f}" if c == "seconds"
                       else f"{v:g}" if c == "noise" else str(v))
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(_TABLE_COLS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_reports(path, reports: list[EvalReport]) -> None:
    """JSON lines, one per report, followed by nothing else; the table goes to a sibling ``.txt``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")
    path.with_suffix(".txt").write_text(format_table(reports), encoding="utf-8")


def read_reports(path) -> list[EvalReport]:
    return [EvalReport.from_json(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


# -- splits and histories ----------------------------------------------------------------

@dataclass
class Splits:
    train: SplitView
    val: SplitView
    test: SplitView

    @property
    def unseen(self) -> frozenset:
        return self.train.unseen_node_set


def make_splits(graph: TemporalGraph, cfg: RunConfig) -> Splits:
    t = cfg.train
    return Splits(*chronological_split(graph, t.ratios, t.inductive_fraction, cfg.seed))


def training_history(graph: TemporalGraph, splits: Splits) -> TemporalGraph:
    """Graph visible during training: every event touching an unseen node is removed."""
    if not splits.unseen:
        return graph
    hidden = np.fromiter(splits.unseen, dtype=np.int64)
    keep = ~(np.isin(graph.src, hidden) | np.isin(graph.dst, hidden))
    return graph.subgraph(np.nonzero(keep)[0])


def evaluation_history(graph: TemporalGraph, splits: Splits, scope: str) -> TemporalGraph:
    """Graph from which evaluation neighbour sequences are drawn.

    ``all_before_tau`` uses every event strictly before each query time;
    ``train_only`` restricts sequences to the training events.
    """
    if scope == "train_only":
        return graph.subgraph(splits.train.event_indices())
    return graph


def _chunks(idx: np.ndarray, size: int):
    for i in range(0, len(idx), size):
        yield i // size, idx[i:i + size]


def _peak_len(g: TemporalGraph, nodes, taus, L: int) -> int:
    return max((len(recent_neighbors(g, int(n), float(t), L)) for n, t in zip(nodes, taus)), default=0)


# -- evaluation ----------------------------------------------------------------------------

def evaluate_scorer(scorer: Scorer, graph: TemporalGraph, view: SplitView, strategy: str, seed: int,
                    train_stop: int, train_events: np.ndarray, batch_size: int = 200, inductive: bool = False,
                    after_batch: Callable[[np.ndarray], None] | None = None) -> dict:
    """Score every positive in ``view`` and one sampled negative per positive.

    Batches are chronological; ``after_batch`` sees each batch's event indices
    once it has been scored (memory-based scorers update there).
    """
    idx = view.event_indices()
    if inductive:
        hidden = np.fromiter(view.unseen_node_set, dtype=np.int64)
        if not len(hidden):
            raise ContractError("inductive evaluation needs a split with unseen nodes")
        idx = idx[np.isin(graph.src[idx], hidden) | np.isin(graph.dst[idx], hidden)]
    if not len(idx):
        raise MetricUndefinedError(f"no positive events in the {view.role} view")
    sampler = NegativeSampler(graph, NegativeSampleSpec(strategy, seed), train_stop, train_events)
    scores, labels, fallback = [], [], 0
    for b, ev in _chunks(idx, batch_size):
        neg = sampler.sample(ev, b)
        t = graph.t[ev]
        s = scorer(np.r_[graph.src[ev], neg.src], np.r_[graph.dst[ev], neg.dst], np.r_[t, t])
        scores.append(s)
        labels.append(np.r_[np.ones(len(ev)), np.zeros(len(ev))])
        fallback += int(neg.fallback.sum())
        if after_batch is not None:
            after_batch(ev)
    s, y = np.concatenate(scores), np.concatenate(labels)
    return {"ap": average_precision(s, y), "auc": auc_roc(s, y), "positives": len(idx),
            "negatives": len(idx), "fallback": fallback}


def model_scorer(model: DyGMamba, history: TemporalGraph, noise_ratio: float = 0.0, noise_seed: int = 0,
                 chunk: int = 400) -> Scorer:
    def score(src, dst, t):
        out = [model.predict(history, src[i:i + chunk], dst[i:i + chunk], t[i:i + chunk],
                             noise_ratio=noise_ratio, noise_seed=noise_seed)
               for i in range(0, len(src), chunk)]
        return np.concatenate(out)
    return score


def evaluate(model: DyGMamba, graph: TemporalGraph, splits: Splits, view: SplitView, strategy: str,
             seed: int = 0, batch_size: int = 200, inductive: bool = False, history_scope: str = "all_before_tau",
             epoch_of_best: int = 0, variant: str = "full") -> EvalReport:
    start = time.perf_counter()
    history = evaluation_history(graph, splits, history_scope)
    scorer = model_scorer(model, history, view.noise_ratio, view.noise_seed)
    res = evaluate_scorer(scorer, graph, view, strategy, seed, splits.train.stop,
                          splits.train.event_indices(), batch_size, inductive)
    idx = view.event_indices()
    peak = _peak_len(history, np.r_[graph.src[idx], graph.dst[idx]], np.r_[graph.t[idx], graph.t[idx]],
                     model.config.seq_len)
    return EvalReport(res["ap"], res["auc"], strategy, view.role, seed, epoch_of_best,
                      time.perf_counter() - start, peak, res["positives"], res["negatives"], res["fallback"],
                      variant=variant, setting="inductive" if inductive else "transductive",
                      noise=view.noise_ratio)


def evaluate_edgebank(graph: TemporalGraph, splits: Splits, view: SplitView, strategy: str, seed: int = 0,
                      variant: str = "infinity", batch_size: int = 200, inductive: bool = False) -> EvalReport:
    """EdgeBank: memory primed with every event before the view, updated batch by batch."""
    start = time.perf_counter()
    window = None
    if variant == "time_window":
        idx = view.event_indices()
        window = float(graph.t[idx[-1]] - graph.t[idx[0]]) or 1.0
    mem = EdgeBankMemory(variant, window)
    mem.update(graph.src[:view.start], graph.dst[:view.start], graph.t[:view.start])
    res = evaluate_scorer(mem.predict, graph, view, strategy, seed, splits.train.stop,
                          splits.train.event_indices(), batch_size, inductive,
                          after_batch=lambda ev: mem.update(graph.src[ev], graph.dst[ev], graph.t[ev]))
    return EvalReport(res["ap"], res["auc"], strategy, view.role, seed, 0, time.perf_counter() - start, 0,
                      res["positives"], res["negatives"], res["fallback"], model=f"edgebank_{variant}",
                      variant=variant, setting="inductive" if inductive else "transductive")


# -- training ------------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    history: list[EpochRecord]
    best_epoch: int
    best_val_ap: float
    stopped_early: bool
    seconds: float
    best_state: dict = field(repr=False, default_factory=dict)


def build_model(cfg: RunConfig, graph: TemporalGraph, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    cls = DyGMambaNodeClassifier if cfg.task == "node_classification" else DyGMamba
    return cls(cfg.model, graph.node_feat_dim, graph.edge_feat_dim, seed=seed)


def _dump_divergence(out_dir, payload: dict) -> Path:
    d = Path(out_dir) if out_dir else Path.cwd()
    d.mkdir(parents=True, exist_ok=True)
    path = d / "divergence.json"
    path.write_text(json.dumps(payload, indent=2, default=float), encoding="utf-8")
    return path


def _step(model, opt: Adam, history: TemporalGraph, src, dst, t, labels) -> float:
    with new_tape():
        opt.zero_grad()
        loss = bce_loss(model(history, src, dst, t), labels)
        value = float(loss.item())
        if not np.isfinite(value):
            raise NumericError(f"non-finite training loss {value}")
        backward(loss)
    opt.step()
    return value


def train(cfg: RunConfig, graph: TemporalGraph, out_dir=None, model: DyGMamba | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Fit a link predictor with early stopping on validation AP under rnd negatives.

    The best-validation parameters are restored into the returned model and,
    when ``out_dir`` is given, saved under ``out_dir/checkpoint`` alongside a
    ``history.jsonl`` with one record per epoch.
    """
    if cfg.task != "link_prediction":
        return train_node_classifier(cfg, graph, out_dir, model, on_epoch)
    tc = cfg.train
    splits = make_splits(graph, cfg)
    history = training_history(graph, splits)
    model = model if model is not None else build_model(cfg, graph)
    opt = Adam(model.parameters(), lr=tc.lr)
    train_idx = splits.train.event_indices()
    if splits.unseen:
        # event indices of the training history differ from the full graph's
        train_idx = np.searchsorted(history.parent_index, train_idx)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.jsonl").write_text("", encoding="utf-8")
    records: list[EpochRecord] = []
    best_ap, best_epoch, best_state, waited = -np.inf, 0, model.state_dict(), 0
    stopped, t_all = False, time.perf_counter()
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        sampler = NegativeSampler(history, NegativeSampleSpec("rnd", cfg.seed * 1_000_003 + epoch), len(history))
        losses = []
        for b, ev in _chunks(train_idx, tc.batch_size):
            if tc.max_train_batches and b >= tc.max_train_batches:
                break
            neg = sampler.sample(ev, b)
            src = np.r_[history.src[ev], neg.src]
            dst = np.r_[history.dst[ev], neg.dst]
            t = np.r_[history.t[ev], history.t[ev]]
            y = np.r_[np.ones(len(ev)), np.zeros(len(ev))]
            try:
                losses.append(_step(model, opt, history, src, dst, t, y))
            except NumericError as exc:
                path = _dump_divergence(out, {"epoch": epoch, "batch": b, "error": str(exc),
                                              "recent_losses": losses[-10:],
                                              "param_norms": {k: float(np.linalg.norm(v))
                                                              for k, v in model.state_dict().items()}})
                raise NumericError(f"training diverged at epoch {epoch}, batch {b}: {exc} "
                                   f"(diagnostics in {path})") from exc
        val = evaluate(model, graph, splits, splits.val, "rnd", seed=cfg.seed, batch_size=tc.eval_batch_size,
                       history_scope=tc.history_scope)
        rec = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), val.ap, val.auc,
                          time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d loss %.4f val AP %.4f AUC %.4f (%.1fs)", epoch, rec.train_loss, rec.val_ap,
                 rec.val_auc, rec.seconds)
        if out:
            with (out / "history.jsonl").open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(rec)) + "\n")
        if on_epoch:
            on_epoch(rec)
        if val.ap > best_ap:
            best_ap, best_epoch, best_state, waited = val.ap, epoch, model.state_dict(), 0
        else:
            waited += 1
            if waited >= tc.patience:
                stopped = True
                break
    model.load_state_dict(best_state)
    if out:
        save_checkpoint(out / "checkpoint", model, dump_config(cfg),
                        {"best_epoch": best_epoch, "best_val_ap": best_ap})
    return TrainResult(model, records, best_epoch, float(best_ap), stopped, time.perf_counter() - t_all, best_state)


# -- node classification -------------------------------------------------------------------

def _labelled(graph: TemporalGraph, view: SplitView) -> np.ndarray:
    idx = view.event_indices()
    return idx[~np.isnan(graph.labels[idx])]


def evaluate_node_classifier(model: DyGMambaNodeClassifier, graph: TemporalGraph, view: SplitView,
                             batch_size: int = 200) -> dict:
    idx = _labelled(graph, view)
    if not len(idx):
        raise MetricUndefinedError(f"no labelled events in the {view.role} view")
    scores = []
    for _, ev in _chunks(idx, batch_size):
        with no_grad():
            scores.append(model(graph, graph.src[ev], graph.t[ev]).data.astype(np.float64))
    s, y = np.concatenate(scores), graph.labels[idx].astype(int)
    return {"ap": average_precision(s, y), "auc": auc_roc(s, y)}


def train_node_classifier(cfg: RunConfig, graph: TemporalGraph, out_dir=None, model=None,
                          on_epoch=None) -> TrainResult:
    """Binary node-state classification from the source node's history; selects on validation AUC."""
    if not np.any(~np.isnan(graph.labels)):
        raise ContractError("node classification needs labelled events")
    tc = cfg.train
    splits = make_splits(graph, cfg)
    model = model if model is not None else DyGMambaNodeClassifier(cfg.model, graph.node_feat_dim,
                                                                   graph.edge_feat_dim, cfg.seed)
    opt = Adam(model.parameters(), lr=tc.lr)
    idx = _labelled(graph, splits.train)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.jsonl").write_text("", encoding="utf-8")
    records, best, best_epoch, best_state, waited, stopped = [], -np.inf, 0, model.state_dict(), 0, False
    t_all = time.perf_counter()
    for epoch in range(1, tc.epochs + 1):
        t0, losses = time.perf_counter(), []
        for b, ev in _chunks(idx, tc.batch_size):
            if tc.max_train_batches and b >= tc.max_train_batches:
                break
            with new_tape():
                opt.zero_grad()
                loss = bce_loss(model(graph, graph.src[ev], graph.t[ev]), graph.labels[ev])
                backward(loss)
            opt.step()
            losses.append(float(loss.item()))
        try:
            val = evaluate_node_classifier(model, graph, splits.val, tc.eval_batch_size)
        except MetricUndefinedError:
            val = {"ap": 0.0, "auc": 0.5}
        rec = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), val["ap"], val["auc"],
                          time.perf_counter() - t0)
        records.append(rec)
        if out:
            with (out / "history.jsonl").open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(rec)) + "\n")
        if on_epoch:
            on_epoch(rec)
        if rec.val_auc > best:
            best, best_epoch, best_state, waited = rec.val_auc, epoch, model.state_dict(), 0
        else:
            waited += 1
            if waited >= tc.patience:
                stopped = True
                break
    model.load_state_dict(best_state)
    if out:
        save_checkpoint(out / "checkpoint", model, dump_config(cfg), {"best_epoch": best_epoch})
    return TrainResult(model, records, best_epoch, float(best), stopped, time.perf_counter() - t_all, best_state)


# -- ablations and robustness --------------------------------------------------------------

def variant_config(cfg: RunConfig, flags) -> RunConfig:
    m = cfg.model
    return cfg.replace(model=ModelConfig(**{**m.as_dict(), "ablations": tuple(flags)}))


def run_ablation(cfg: RunConfig, graph: TemporalGraph, variants: dict[str, tuple[str, ...]] | None = None,
                 strategy: str = "rnd", out_dir=None) -> list[EvalReport]:
    """Train and test one model per variant; each report is tagged with its variant name."""
    if variants is None:
        variants = {"full": ()}
        variants.update({flag: (flag,) for flag in ("no_time_span", "no_selective", "no_cross_attn",
                                                    "all_time_dependent", "no_time_encoding")})
    reports = []
    for name, flags in variants.items():
        vcfg = variant_config(cfg, flags)
        sub = Path(out_dir) / name if out_dir else None
        res = train(vcfg, graph, sub)
        splits = make_splits(graph, vcfg)
        reports.append(evaluate(res.model, graph, splits, splits.test, strategy, cfg.seed,
                                vcfg.train.eval_batch_size, history_scope=vcfg.train.history_scope,
                                epoch_of_best=res.best_epoch, variant=name))
    return reports


def robustness_sweep(model: DyGMamba, graph: TemporalGraph, splits: Splits, levels, seed: int = 0,
                     strategy: str = "rnd", batch_size: int = 200, history_scope: str = "all_before_tau",
                     epoch_of_best: int = 0) -> list[EvalReport]:
    """Test-time evaluation with a fraction of every neighbour sequence replaced by noise."""
    return [evaluate(model, graph, splits, inject_noise(splits.test, float(s), seed), strategy, seed,
                     batch_size, history_scope=history_scope, epoch_of_best=epoch_of_best)
            for s in levels]
