"""Figures for run reports.  Every function returns the Figure it drew."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
})

COLORS = {"clean_acc": "#3a6ea5", "adv_acc": "#c0504d", "mixed_score": "#7f7f7f"}


def accuracy_bars(rows: list[dict], labels: list[str]):
    """Grouped bars of clean / adversarial accuracy and the mixed score per run."""
    keys = ("clean_acc", "adv_acc", "mixed_score")
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(rows) + 2), 3.5))
    x = np.arange(len(rows))
    w = 0.26
    for j, k in enumerate(keys):
        vals = [r[k] for r in rows]
        bars = ax.bar(x + (j - 1) * w, vals, w, label=k.replace("_", " "), color=COLORS[k])
        ax.bar_label(bars, fmt="%.3f", fontsize=7, padding=1)
    ax.set_xticks(x, labels, rotation=20, ha="right")
    ax.set_ylim(0, 1.08)
    ax.set_ylabel("accuracy")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig


def loss_curve(losses_by_run: dict[str, list[float]], smooth: int = 5):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, losses in losses_by_run.items():
        losses = np.asarray(losses, dtype=float)
        k = max(1, min(smooth, len(losses)))
        sm = np.convolve(losses, np.ones(k) / k, mode="valid")
        line, = ax.plot(np.arange(1, len(losses) + 1), losses, alpha=0.25, lw=0.8)
        ax.plot(np.arange(k, len(losses) + 1), sm, color=line.get_color(), lw=1.5, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("training BCE")
    ax.set_yscale("log")
    if losses_by_run:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def tries_histogram(hist: dict, max_tries: int | None = None):
    """Queries needed per successful flip (0 = already misclassified)."""
    tries = np.array(sorted(int(k) for k in hist), dtype=int)
    counts = np.array([hist[str(t)] if str(t) in hist else hist[t] for t in tries])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if tries.size:
        ax.bar(tries, counts, width=1.0, color=COLORS["adv_acc"])
    ax.set_xlabel("queries until flip")
    ax.set_ylabel("rows")
    if max_tries:
        ax.set_xlim(-1, max_tries + 1)
    fig.tight_layout()
    return fig


def save(fig, path) -> None:
    fig.savefig(path)
    plt.close(fig)
