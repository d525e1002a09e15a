"""Wall-clock scaling of the scan path against quadratic softmax attention."""
from __future__ import annotations

import statistics
import timeit
from dataclasses import asdict, dataclass

import numpy as np

from .attention import softmax_attention
from .ssm.scan import fused_scan_forward


@dataclass
class BenchRow:
    L: int
    scan_seconds: float
    attention_seconds: float | None
    scan_ratio: float | None = None       # t(L) / t(previous L), None for the first row or L == 1
    attention_ratio: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _interleaved_medians(fns: list, repeats: int, min_sample: float = 0.2) -> list[float]:
    """Median per-call time of every ``fn`` over ``repeats`` rounds.

    Each sample loops its ``fn`` for about ``min_sample`` seconds (sized once,
    as ``timeit`` does).  Rounds visit every ``fn`` in turn, so a slow spell
    on a shared machine lands on all of them rather than on one length.
    """
    timers, numbers = [], []
    for fn in fns:
        timer = timeit.Timer(fn)
        n, total = timer.autorange()
        timers.append(timer)
        numbers.append(max(1, int(min_sample / max(total / n, 1e-9))))
    samples: list[list[float]] = [[] for _ in fns]
    for _ in range(repeats):
        for i, (timer, n) in enumerate(zip(timers, numbers)):
            samples[i].append(timer.timeit(n) / n)
    return [statistics.median(s) for s in samples]


def _scan_inputs(rng, batch, L, channels, d_ssm):
    u = rng.normal(size=(batch, L, channels))
    delta = rng.uniform(1e-3, 1e-1, size=(batch, L, channels))
    A = -np.tile(np.arange(1, d_ssm + 1, dtype=np.float64), (channels, 1))
    Bm = rng.normal(size=(batch, L, d_ssm))
    Cm = rng.normal(size=(batch, L, d_ssm))
    return u, delta, A, Bm, Cm


def bench_scan(lengths=(1, 512, 1024, 2048), batch: int = 8, channels: int = 64, d_ssm: int = 16,
               repeats: int = 5, attention: bool = True, seed: int = 0) -> list[BenchRow]:
    """Median-of-``repeats`` times per length, sampled round-robin across lengths.

    Ratios compare each length with the previous one in ``lengths``; the L=1
    row only records the fixed overhead and is left out of the ratios.
    """
    rng = np.random.default_rng(seed)
    # warm up the compiled kernel outside the timed region
    fused_scan_forward(*_scan_inputs(rng, 1, 4, channels, d_ssm))
    scan_fns, att_fns = [], []
    for L in lengths:
        args = _scan_inputs(rng, batch, L, channels, d_ssm)
        scan_fns.append(lambda args=args: fused_scan_forward(*args))
        x = rng.normal(size=(batch, L, channels))
        att_fns.append(lambda x=x: softmax_attention(x, x, x))
    t_scan = _interleaved_medians(scan_fns, repeats)
    t_att = _interleaved_medians(att_fns, repeats) if attention else [None] * len(lengths)
    rows = [BenchRow(int(L), s, a) for L, s, a in zip(lengths, t_scan, t_att)]
    prev = None
    for row in rows:
        if row.L == 1:
            continue
        if prev is not None:
            row.scan_ratio = row.scan_seconds / prev.scan_seconds
            if row.attention_seconds is not None and prev.attention_seconds:
                row.attention_ratio = row.attention_seconds / prev.attention_seconds
        prev = row
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    head = ["L", "scan_s", "scan_ratio", "attention_s", "attention_ratio"]
    body = [[str(r.L), f"{r.scan_seconds:.5f}", "-" if r.scan_ratio is None else f"{r.scan_ratio:.2f}",
             "-" if r.attention_seconds is None else f"{r.attention_seconds:.5f}",
             "-" if r.attention_ratio is None else f"{r.attention_ratio:.2f}"] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in [head, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
