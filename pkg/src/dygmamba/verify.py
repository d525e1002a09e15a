"""Oracle suite: every derived check, with its worst observed error and tolerance.

Each check compares an implementation against an independent reference.
Tolerances come in pairs: the first applies in 64-bit mode, the second in
32-bit mode, where implementation outputs are rounded to float32 before
comparison.  The zero-order-hold rule under test can be swapped out, so a
broken rule shows up exactly in the checks tagged ``zoh``.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import attention_reference, linear_attention
from .core.gradcheck import finite_difference_gradient, relative_error
from .core.tensor import backward, get_precision, new_tape, precision
from .encodings import cooccurrence_counts
from .graph import gather_sequences, synthetic_graph
from .metrics import auc_roc, auc_roc_reference, average_precision, average_precision_reference
from .ssm.discretize import (discretize_simplified, discretize_zoh_exact, expand_steps, kernel_convolve,
                             rk4_hold, ssm_kernel)
from .ssm.scan import fused_scan_forward, scan_compiled, scan_naive, scan_parallel
from .tasks import NegativeSampler, NegativeSampleSpec, bce_loss


@dataclass
class CheckResult:
    name: str
    tags: tuple[str, ...]
    passed: bool
    max_error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28} max_err={self.max_error:.3e}  tol={self.tolerance:.1e}  "
                f"[{','.join(self.tags)}]  {self.seconds:.2f}s{('  ' + self.detail) if self.detail else ''}")


@dataclass
class Context:
    zoh: Callable = discretize_zoh_exact
    seed: int = 0
    f32: bool = False
    extra: dict = field(default_factory=dict)

    def rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])

    def cast(self, x):
        """Round to the working precision (implementation outputs only)."""
        x = np.asarray(x, dtype=np.float64)
        return x.astype(np.float32).astype(np.float64) if self.f32 else x


def _scaled(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max(initial=0.0) / max(1.0, np.abs(b).max(initial=0.0)))


# -- individual checks ------------------------------------------------------------------
# each returns (max_error, detail); the runner compares against the tolerance

def check_scan_equivalence(ctx: Context, trials: int = 200):
    rng, worst = ctx.rng(1), 0.0
    dt = np.float32 if ctx.f32 else np.float64
    for _ in range(trials):
        B, L, E, N = rng.integers(1, 5), rng.integers(1, 65), rng.integers(1, 17), rng.integers(1, 9)
        u = rng.normal(size=(B, L, E))
        delta = rng.uniform(1e-3, 1.0, size=(B, L, E))
        A = -rng.uniform(0.1, 5.0, size=(E, N))
        Bm, Cm = rng.normal(size=(B, L, N)), rng.normal(size=(B, L, N))
        step = expand_steps(delta, A, Bm)
        ref = scan_naive(u, step.Abar, step.Bbar, Cm)
        args = [a.astype(dt) for a in (u, step.Abar, step.Bbar, Cm)]
        for out in (scan_compiled(*args), scan_parallel(*args),
                    fused_scan_forward(*(a.astype(dt) for a in (u, delta, A, Bm, Cm)))):
            worst = max(worst, _scaled(out, ref))
    return worst, f"{trials} instances x 3 implementations"


def check_kernel_equivalence(ctx: Context, trials: int = 100):
    rng, worst = ctx.rng(2), 0.0
    for _ in range(trials):
        L, N = rng.integers(1, 65), rng.integers(1, 9)
        lam = -rng.uniform(0.1, 3.0, N)
        delta = rng.uniform(1e-3, 0.5)
        Bv, Cv = rng.normal(size=N), rng.normal(size=N)
        step = discretize_simplified(lam, Bv, delta)
        u = rng.normal(size=L)
        K = ssm_kernel(step.Abar, step.Bbar, Cv, L)
        conv = kernel_convolve(K, u)
        rec = scan_naive(u[None, :, None], np.broadcast_to(step.Abar, (1, L, 1, N)),
                         np.broadcast_to(step.Bbar, (1, L, 1, N)), np.broadcast_to(Cv, (1, L, N)))[0, :, 0]
        worst = max(worst, _scaled(ctx.cast(conv), rec))
    return worst, f"{trials} instances"


def check_zoh_rk4(ctx: Context, trials: int = 100):
    rng, worst = ctx.rng(3), 0.0
    for _ in range(trials):
        N = rng.integers(1, 9)
        lam = -rng.uniform(0.05, 5.0, N)
        Bv, h0 = rng.normal(size=N), rng.normal(size=N)
        u, delta = rng.normal(), rng.uniform(0.01, 1.0)
        step = ctx.zoh(lam, Bv, delta)
        h1 = ctx.cast(step.Abar) * h0 + ctx.cast(step.Bbar) * u
        worst = max(worst, float(np.abs(h1 - rk4_hold(lam, Bv, u, delta, h0, 1000)).max()))
    return worst, f"{trials} systems, RK4 with 1000 substeps"


def check_zoh_small_step(ctx: Context, trials: int = 100):
    """As the step shrinks the state stops moving, at the rate set by the continuous dynamics.

    Reports the worst first-order remainder ``|(h_k - h_{k-1})/delta - (lambda h + B u)|``
    at the smallest step, normalised by ``delta |h''|`` (twice its leading term); monotonicity
    failures report infinity.
    """
    rng, worst = ctx.rng(4), 0.0
    deltas = (1e-2, 1e-3, 1e-4)
    for _ in range(trials):
        N = rng.integers(1, 9)
        lam = -rng.uniform(0.05, 5.0, N)
        Bv, h0, u = rng.normal(size=N), rng.normal(size=N), rng.normal()
        moves = []
        for d in deltas:
            s = ctx.zoh(lam, Bv, d)
            moves.append(np.linalg.norm(ctx.cast(s.Abar * h0 + s.Bbar * u) - ctx.cast(h0)))
        if not all(a > b for a, b in zip(moves, moves[1:])):
            return float("inf"), "step movement not monotone in delta"
        d = deltas[-1]
        s = ctx.zoh(lam, Bv, d)
        rate = (s.Abar * h0 + s.Bbar * u - h0) / d
        exact = lam * h0 + Bv * u
        bound = d * np.abs(lam * exact) + 1e-10 / d
        worst = max(worst, float(np.max(np.abs(rate - exact) / bound)))
    return worst, "normalised first-order remainder at delta=1e-4 (<= 1 means consistent)"


def check_zoh_large_step(ctx: Context, trials: int = 100):
    """With delta=20 the update must equal the closed form ``lambda^-1 (e^{lambda delta} - 1) u + e^{lambda delta} h``."""
    rng, worst = ctx.rng(5), 0.0
    delta = 20.0
    for _ in range(trials):
        N = rng.integers(1, 9)
        lam = -rng.uniform(0.05, 5.0, N)
        h0, u = rng.normal(size=N), rng.normal(size=N)
        s = ctx.zoh(lam, np.ones(N), delta)
        h1 = ctx.cast(s.Abar) * h0 + ctx.cast(s.Bbar) * u
        formula = (np.exp(lam * delta) - 1.0) / lam * u + np.exp(lam * delta) * h0
        worst = max(worst, _scaled(h1, formula))
    return worst, f"{trials} systems at delta=20"


def check_selective_copy(ctx: Context, trials: int = 50):
    """Unrolled sum ``z_k = sum_j C_k (prod_{i=j+1..k} Abar_i) Bbar_j u_j`` against the scan."""
    rng, worst = ctx.rng(6), 0.0
    for _ in range(trials):
        L, E, N = rng.integers(1, 33), rng.integers(1, 5), rng.integers(1, 6)
        u = rng.normal(size=(1, L, E))
        delta = rng.uniform(1e-3, 1.0, size=(1, L, E))
        A = -rng.uniform(0.1, 3.0, size=(E, N))
        Bm, Cm = rng.normal(size=(1, L, N)), rng.normal(size=(1, L, N))
        step = expand_steps(delta, A, Bm)
        Ab, Bb = step.Abar[0], step.Bbar[0]
        z = np.zeros((L, E))
        for k in range(L):
            for j in range(k + 1):
                decay = np.prod(Ab[j + 1:k + 1], axis=0) if j < k else np.ones((E, N))
                z[k] += np.sum(Cm[0, k] * decay * Bb[j], axis=-1) * u[0, j]
        out = fused_scan_forward(*(ctx.cast(a) for a in (u, delta, A, Bm, Cm)))[0]
        worst = max(worst, _scaled(ctx.cast(out), z))
    return worst, f"{trials} sequences, L <= 32"


def check_linear_attention(ctx: Context, trials: int = 50):
    rng, worst = ctx.rng(7), 0.0
    for _ in range(trials):
        n, d = rng.integers(1, 17), rng.integers(1, 9)
        Q, K, V = (rng.normal(size=(2, n, d)) for _ in range(3))
        for causal in (False, True):
            out = linear_attention(Q, K, V, causal=causal).data
            worst = max(worst, _scaled(ctx.cast(out), attention_reference(Q, K, V, causal=causal)))
    return worst, f"{trials} instances, causal and non-causal"


def check_attention_denominator(ctx: Context, rows: int = 100_000):
    rng = ctx.rng(8)
    d = 16
    q = rng.normal(scale=5.0, size=(rows, d))
    k = rng.normal(scale=5.0, size=(rows, 4, d))
    phi = lambda x: np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))  # noqa: E731
    den = np.einsum("rd,rd->r", ctx.cast(phi(q)), ctx.cast(phi(k).sum(axis=1)))
    # reported error: how far the smallest denominator is from being positive
    return (0.0 if den.min() > 0 else float(-den.min()) + 1.0), f"min denominator {den.min():.3e} over {rows} rows"


def toy_gradcheck(seed: int = 0, samples: int = 4, h: float = 1e-6, f32_analytic: bool = False,
                  L: int = 8, d: int = 8, d_ssm: int = 4) -> dict[str, float]:
    """Autodiff against central differences for every parameter group of a toy link predictor.

    Per group the ``samples`` largest analytic coordinates plus ``samples``
    random ones are differenced.  Returns the relative error per group.
    """
    from .model import DyGMamba, ModelConfig
    g = synthetic_graph(12, 60, d_E=3, seed=seed, d_V=2)
    cfg = ModelConfig(d_T=d, d_C=d, d=d, d_out=d, head_hidden=d, d_ssm=d_ssm, seq_len=L)
    rng = np.random.default_rng(seed)
    q = rng.choice(np.arange(30, 60), size=4, replace=False)
    src = np.r_[g.src[q], g.src[q]]
    dst = np.r_[g.dst[q], rng.integers(0, g.node_count, size=4)]
    t = np.r_[g.t[q], g.t[q]]
    y = np.r_[np.ones(4), np.zeros(4)]

    with precision("f64"):
        model = DyGMamba(cfg, g.node_feat_dim, g.edge_feat_dim, seed=seed)
        state = model.state_dict()

    def analytic(m):
        with new_tape():
            m.zero_grad()
            backward(bce_loss(m(g, src, dst, t), y))
        return {k: p.grad.astype(np.float64).reshape(-1) for k, p in m.named_parameters()}

    if f32_analytic:
        with precision("f32"):
            m32 = DyGMamba(cfg, g.node_feat_dim, g.edge_feat_dim, seed=seed)
            m32.load_state_dict(state)
            grads = analytic(m32)
    else:
        with precision("f64"):
            grads = analytic(model)

    names = [k for k, _ in model.named_parameters()]
    params = [p for _, p in model.named_parameters()]
    picks = []
    for k, p in zip(names, params):
        ga = grads[k]
        top = np.argsort(-np.abs(ga))[:samples]
        rnd = rng.choice(ga.size, size=min(samples, ga.size), replace=False)
        picks.append(np.unique(np.r_[top, rnd]))
    with precision("f64"):
        fd = finite_difference_gradient(lambda: bce_loss(model(g, src, dst, t), y).item(), params, h, picks)
    return {k: relative_error(grads[k][idx], est, floor=1e-6) for k, idx, est in zip(names, picks, fd)}


def check_gradients(ctx: Context):
    errs = toy_gradcheck(ctx.seed, samples=2, f32_analytic=ctx.f32)
    worst = max(errs, key=errs.get)
    return errs[worst], f"{len(errs)} parameter groups, worst {worst}"


def _tie_vectors(n: int):
    """All score/label vectors of length n up to relabelling of score values.

    A vector is a sequence of tie groups in descending score order, each
    with a (positives, negatives) count.  Element order inside the vector is
    irrelevant to both metrics, so every ordering with ties is covered.
    """
    def comps(m):
        if m == 0:
            yield ()
            return
        for first in range(1, m + 1):
            for rest in comps(m - first):
                yield (first,) + rest
    for sizes in comps(n):
        for split in itertools.product(*[range(s + 1) for s in sizes]):
            scores, labels = [], []
            for g, (s, p) in enumerate(zip(sizes, split)):
                scores += [float(len(sizes) - g)] * s
                labels += [1] * p + [0] * (s - p)
            if 0 < sum(labels) < n:
                yield np.array(scores), np.array(labels)


def check_metric_oracles(ctx: Context, max_len: int = 6):
    worst, count = 0.0, 0
    rng = ctx.rng(9)
    for n in range(2, max_len + 1):
        for s, y in _tie_vectors(n):
            perm = rng.permutation(n)
            s, y = s[perm], y[perm]
            worst = max(worst, abs(average_precision(s, y) - average_precision_reference(s, y)),
                        abs(auc_roc(s, y) - auc_roc_reference(s, y)))
            count += 1
    return worst, f"{count} labelled score vectors, length <= {max_len}"


def check_negative_pools(ctx: Context, trials: int = 10):
    mismatches = 0
    for trial in range(trials):
        g = synthetic_graph(30 + trial, 300, d_E=0, seed=ctx.seed + trial)
        stop = 200
        sampler = NegativeSampler(g, NegativeSampleSpec("hist"), stop)
        for start in range(stop, len(g), 25):
            ev = np.arange(start, min(start + 25, len(g)))
            pools = sampler.pools(ev)
            E_train = {(int(g.src[i]), int(g.dst[i])) for i in range(stop)}
            E_t = {(int(g.src[i]), int(g.dst[i])) for i in ev}
            E_test = {(int(g.src[i]), int(g.dst[i])) for i in range(stop, start)}
            mismatches += len(pools["hist"] ^ (E_train - E_t)) + len(pools["ind"] ^ (E_test - E_train - E_t))
    return float(mismatches), "symmetric-difference size against brute-force sets"


def check_cooccurrence(ctx: Context, trials: int = 200):
    rng, bad = ctx.rng(10), 0
    for _ in range(trials):
        u = rng.integers(0, 6, size=rng.integers(0, 10))
        v = rng.integers(0, 6, size=rng.integers(0, 10))
        cu, cv = cooccurrence_counts(u, v)
        for seq, mat in ((u, cu), (v, cv)):
            for j, node in enumerate(seq):
                want = (sum(1 for x in u if x == node), sum(1 for x in v if x == node))
                bad += int(tuple(mat[j]) != want)
    return float(bad), "mismatched rows against direct counting"


def check_neighbor_sampling(ctx: Context, trials: int = 50):
    rng, bad = ctx.rng(11), 0
    g = synthetic_graph(20, 400, d_E=2, seed=ctx.seed)
    for _ in range(trials):
        nodes = rng.integers(0, g.node_count, size=8)
        taus = rng.uniform(0, g.t[-1] + 1, size=8)
        L = int(rng.integers(1, 12))
        batch = gather_sequences(g, nodes, taus, L)
        for b, (n, tau) in enumerate(zip(nodes, taus)):
            hits = [i for i in range(len(g)) if (g.src[i] == n or g.dst[i] == n) and g.t[i] < tau][-L:]
            got = batch.event_idx[b][batch.mask[b]].tolist()
            bad += int(got != hits)
    return float(bad), "sequences differing from a linear scan"


# (name, tags, function, tolerance f64, tolerance f32)
CHECKS: list[tuple[str, tuple[str, ...], Callable, float, float]] = [
    ("scan_equivalence", ("scan",), check_scan_equivalence, 1e-5, 1e-3),
    ("kernel_equivalence", ("kernel",), check_kernel_equivalence, 1e-5, 1e-4),
    ("zoh_matches_rk4", ("zoh",), check_zoh_rk4, 1e-6, 1e-5),
    ("zoh_small_step_limit", ("zoh",), check_zoh_small_step, 1.0, 1.0),
    ("zoh_large_step_formula", ("zoh",), check_zoh_large_step, 1e-12, 1e-6),
    ("selective_copy_unrolled", ("scan", "decomposition"), check_selective_copy, 1e-6, 1e-4),
    ("linear_attention_reference", ("attention",), check_linear_attention, 1e-5, 1e-4),
    ("attention_denominator", ("attention",), check_attention_denominator, 0.5, 0.5),
    ("gradients_toy_model", ("autodiff",), check_gradients, 1e-3, 1e-2),
    ("metric_oracles", ("metrics",), check_metric_oracles, 1e-12, 1e-12),
    ("negative_pools", ("sampling",), check_negative_pools, 0.5, 0.5),
    ("cooccurrence_counts", ("encodings",), check_cooccurrence, 0.5, 0.5),
    ("neighbor_sampling", ("graph",), check_neighbor_sampling, 0.5, 0.5),
]


def run_verification(precision_name: str | None = None, zoh: Callable = discretize_zoh_exact, seed: int = 0,
                     only: set[str] | None = None) -> list[CheckResult]:
    """Run every check (or those named in ``only``) and return one result each."""
    prec = precision_name or get_precision()
    ctx = Context(zoh=zoh, seed=seed, f32=prec == "f32")
    results = []
    with precision(prec):
        for name, tags, fn, tol64, tol32 in CHECKS:
            if only and name not in only:
                continue
            tol = tol32 if ctx.f32 else tol64
            t0 = time.perf_counter()
            try:
                err, detail = fn(ctx)
            except Exception as exc:  # a crashing implementation fails its check
                err, detail = float("inf"), f"{type(exc).__name__}: {exc}"
            ok = bool(np.isfinite(err) and err <= tol)
            results.append(CheckResult(name, tags, ok, float(err), tol, time.perf_counter() - t0, detail))
    return results

