"""Command-line entry point: ``dygmamba {ingest,train,eval,baseline,verify,bench}``.

Exit codes: 0 success, 1 user error (bad config, missing or malformed input),
2 numeric failure or a failing oracle.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import bench_scan, format_bench
from .checkpoint import load_checkpoint
from .config import RunConfig, dump_config, load_config, run_id
from .core.tensor import set_precision
from .errors import DyGMambaError, NumericError
from .graph import TemporalGraph, load_dataset, save_events, save_id_map
from .plotting import plot_bench, plot_history, plot_robustness
from .training import (EpochRecord, build_model, evaluate, evaluate_edgebank, format_table, make_splits,
                       robustness_sweep, train, write_reports)
from .verify import run_verification

log = logging.getLogger("dygmamba")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


# -- helpers ----------------------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out", None):
        over["output"] = args.out
    if getattr(args, "precision", None):
        over["precision"] = args.precision
    if getattr(args, "threads", None):
        over["threads"] = args.threads
    return cfg.replace(**over) if over else cfg


def _apply_runtime(cfg: RunConfig) -> None:
    set_precision(cfg.precision)
    import numba
    numba.set_num_threads(max(1, min(cfg.threads, numba.config.NUMBA_NUM_THREADS)))


def _dataset(cfg: RunConfig) -> TemporalGraph:
    if not cfg.dataset:
        raise FileNotFoundError("no dataset configured ([run] dataset = <path>)")
    return load_dataset(cfg.dataset)


def _run_dir(cfg: RunConfig, graph: TemporalGraph) -> Path:
    rid = run_id(cfg.replace(output="", threads=1), cfg.seed, graph.digest())
    return Path(cfg.output) / rid


def _emit(reports, path: Path) -> None:
    write_reports(path, reports)
    for r in reports:
        print(r.to_json())
    print(format_table(reports), end="")


# -- commands ------------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    graph = load_dataset(args.path)
    stats = graph.stats()
    stats["digest"] = graph.digest()
    print(json.dumps(stats, sort_keys=True))
    width = max(len(k) for k in stats)
    for k, v in stats.items():
        print(f"{k.ljust(width)}  {v}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_events(graph, out / "events.csv")
        save_id_map(graph, out / "id_map.csv")
        (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True), encoding="utf-8")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    _apply_runtime(cfg)
    graph = _dataset(cfg)
    run = _run_dir(cfg, graph)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.snapshot").write_text(dump_config(cfg), encoding="utf-8")

    def progress(rec: EpochRecord):
        print(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  val AP {rec.val_ap:.4f}  "
              f"val AUC {rec.val_auc:.4f}  {rec.seconds:.1f}s", flush=True)

    res = train(cfg, graph, run, on_epoch=progress)
    plot_history(res.history, run / "figures" / "training.png")
    print(f"best epoch {res.best_epoch} (val {res.best_val_ap:.4f}); run directory {run}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    _apply_runtime(cfg)
    graph = _dataset(cfg)
    run = _run_dir(cfg, graph)
    ckpt = Path(args.checkpoint) if args.checkpoint else run / "checkpoint"
    state, manifest = load_checkpoint(ckpt)
    model = build_model(cfg, graph)
    model.load_state_dict(state)
    best = int(manifest.get("extra", {}).get("best_epoch", 0))
    splits = make_splits(graph, cfg)
    view = getattr(splits, args.split)
    settings = [False]
    if splits.unseen:
        settings.append(True)
    reports = []
    for inductive in settings:
        for strategy in cfg.train.strategies:
            rep = evaluate(model, graph, splits, view, strategy, cfg.seed, cfg.train.eval_batch_size,
                           inductive=inductive, history_scope=cfg.train.history_scope, epoch_of_best=best)
            setting = "inductive" if inductive else "transductive"
            _emit([rep], run / "eval" / f"{args.split}_{setting}_{strategy}.report")
            reports.append(rep)
    if cfg.train.noise_levels:
        sweep = robustness_sweep(model, graph, splits, cfg.train.noise_levels, cfg.seed,
                                 batch_size=cfg.train.eval_batch_size, history_scope=cfg.train.history_scope,
                                 epoch_of_best=best)
        _emit(sweep, run / "eval" / "robustness.report")
        plot_robustness(sweep, run / "figures" / "robustness.png")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _config(args)
    graph = _dataset(cfg)
    run = _run_dir(cfg, graph)
    splits = make_splits(graph, cfg)
    view = getattr(splits, args.split)
    for variant in cfg.baseline.variants:
        for strategy in cfg.train.strategies:
            rep = evaluate_edgebank(graph, splits, view, strategy, cfg.seed, variant, cfg.train.eval_batch_size)
            _emit([rep], run / "eval" / f"edgebank_{variant}_{args.split}_{strategy}.report")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_verification(args.precision or "f64", seed=args.seed or 0)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    _apply_runtime(cfg)
    b = cfg.bench
    lengths = tuple(args.lengths) if args.lengths else b.lengths
    rows = bench_scan(lengths, b.batch, b.channels, b.d_ssm, b.repeats)
    out = Path(cfg.output) / "bench"
    out.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.as_dict()) for r in rows]
    (out / "bench.report").write_text("\n".join(lines) + "\n", encoding="utf-8")
    table = format_bench(rows)
    (out / "bench.txt").write_text(table, encoding="utf-8")
    plot_bench(rows, out / "bench.png")
    print("\n".join(lines))
    print(table, end="")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", required=config_required, help="INI run configuration")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--out", help="override [run] output directory")
    p.add_argument("--precision", choices=("f32", "f64"), help="floating point width")
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dygmamba", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, validate and summarise an event file")
    p.add_argument("path")
    p.add_argument("--out", help="write the normalised events, id map and stats here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model; writes out/<run-id>/")
    _common(p, True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under every configured negative sampler")
    _common(p, True)
    p.add_argument("--checkpoint", help="checkpoint directory (default: the run's own)")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="EdgeBank memorisation baseline")
    _common(p, True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("verify", help="run the oracle suite")
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="scan vs attention scaling benchmark")
    _common(p)
    p.add_argument("--lengths", type=int, nargs="+", help="sequence lengths to time")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DyGMambaError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
