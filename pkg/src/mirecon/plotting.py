"""Report figures rendered to files (headless backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_curve(history, path, window: int = 20):
    """Per-step training loss with a running mean; log scale."""
    steps = np.array([h[0] for h in history], dtype=float)
    loss = np.array([h[1] for h in history], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, loss, lw=0.6, alpha=0.4, label="step")
    if len(loss) >= window:
        smooth = np.convolve(loss, np.ones(window) / window, mode="valid")
        ax.plot(steps[window - 1:], smooth, lw=1.5, label=f"mean of {window}")
    ax.set_xlabel("step")
    ax.set_ylabel("L2 loss")
    if len(loss) and np.all(loss > 0):
        ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_eval(report, path):
    """Side-by-side bars of CD x100 and NCE per shape."""
    shapes = report.shapes
    x = np.arange(len(shapes))
    fig, axes = plt.subplots(1, 2, figsize=(max(6, 1.2 * len(shapes) + 3), 3.5))
    for ax, vals, name in zip(axes, (report.cd_times_100, report.nce), ("CD x100", "NCE")):
        vals = np.asarray(vals, dtype=float)
        ax.bar(x, np.where(np.isfinite(vals), vals, 0.0))
        ax.set_xticks(x)
        ax.set_xticklabels(shapes, rotation=30, ha="right")
        ax.set_title(name)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle(report.method)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
