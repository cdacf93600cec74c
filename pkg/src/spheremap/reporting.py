"""Figure rendering for run artifacts.

Each CLI report writes delimited data first; these helpers render the
companion PNGs next to it.  Everything goes through the Agg backend so
runs work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_loss_curve",
    "save_accuracy_matrix_figure",
    "save_sweep_figure",
    "save_class_proportions_figure",
]


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_loss_curve(metrics, path):
    """Per-step training loss with memory occupancy on a twin axis."""
    steps = [m.step for m in metrics]
    losses = [m.loss for m in metrics]
    mem = [m.memory_size for m in metrics]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=1.0, color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(steps, mem, lw=1.0, color="tab:orange", alpha=0.6, label="memory")
    ax2.set_ylabel("memory size")
    ax.set_title("training loss")
    _finish(fig, path)


def save_accuracy_matrix_figure(matrix, path):
    """Heatmap of the lower-triangular task-accuracy matrix."""
    vals = matrix.values
    fig, ax = plt.subplots(figsize=(5, 4.2))
    masked = np.ma.masked_invalid(vals)
    im = ax.imshow(masked, vmin=0.0, vmax=1.0, cmap="viridis")
    for k in range(vals.shape[0]):
        for j in range(vals.shape[1]):
            if not np.isnan(vals[k, j]):
                ax.text(j, k, f"{vals[k, j]:.2f}", ha="center", va="center",
                        color="white", fontsize=9)
    ax.set_xlabel("task evaluated")
    ax.set_ylabel("checkpoint")
    ax.set_title("accuracy matrix")
    fig.colorbar(im, ax=ax, shrink=0.85)
    _finish(fig, path)


def save_sweep_figure(values, means, stds, param_name, path):
    """Mean final accuracy with a std band over the swept values."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(values))
    means = np.asarray(means)
    stds = np.asarray(stds)
    ax.errorbar(x, means, yerr=stds, marker="o", capsize=3, color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels([str(v) for v in values], rotation=20)
    ax.set_xlabel(param_name)
    ax.set_ylabel("final average accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(f"sweep over {param_name}")
    _finish(fig, path)


def save_class_proportions_figure(positions, class_ids, proportions, path):
    """Windowed class proportions along the stream (boundary visual)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, c in enumerate(class_ids):
        ax.plot(positions, proportions[:, j], lw=1.2, label=f"class {int(c)}")
    ax.set_xlabel("stream position")
    ax.set_ylabel("class proportion in window")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8, ncol=2)
    ax.set_title("class mixture along the stream")
    _finish(fig, path)
