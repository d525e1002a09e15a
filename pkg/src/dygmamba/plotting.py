"""Figures written next to the reports: training curves, scan benchmark, robustness sweep."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _figure(ncols: int = 1, width: float = 4.5, height: float = 3.0):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, ncols, figsize=(width * ncols, height), squeeze=False)
    return fig, axes[0]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_history(history, path) -> Path:
    """Train loss and validation AP/AUC per epoch."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_val) = _figure(2)
        epochs = [r.epoch for r in history]
        ax_loss.plot(epochs, [r.train_loss for r in history], marker="o", ms=3)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train BCE")
        ax_val.plot(epochs, [r.val_ap for r in history], marker="o", ms=3, label="val AP")
        ax_val.plot(epochs, [r.val_auc for r in history], marker="s", ms=3, label="val AUC")
        ax_val.set_xlabel("epoch")
        ax_val.set_ylim(0, 1.02)
        ax_val.legend(frameon=False)
        return _save(fig, path)


def plot_bench(rows, path) -> Path:
    """Log-log wall time against sequence length for the scan and softmax attention."""
    rows = [r for r in rows if r.L > 1]
    with plt.rc_context(STYLE):
        fig, (ax,) = _figure()
        L = [r.L for r in rows]
        ax.loglog(L, [r.scan_seconds for r in rows], marker="o", base=2, label="selective scan")
        att = [r.attention_seconds for r in rows]
        if all(a is not None for a in att):
            ax.loglog(L, att, marker="s", base=2, label="softmax attention")
        ax.set_xlabel("sequence length L")
        ax.set_ylabel("median seconds")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_robustness(reports, path) -> Path:
    """Test AP against the fraction of each neighbour sequence replaced by noise."""
    with plt.rc_context(STYLE):
        fig, (ax,) = _figure()
        reports = sorted(reports, key=lambda r: r.noise)
        ax.plot([r.noise for r in reports], [r.ap for r in reports], marker="o", label="AP")
        ax.plot([r.noise for r in reports], [r.auc for r in reports], marker="s", label="AUC")
        ax.set_xlabel("noise ratio")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False)
        return _save(fig, path)
