"""Report figures. Rendered headless (Agg) so the CLI works on servers."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .predicates import footprint_slots
from .tasks import TASK_NAMES, TaskId


def _slot_labels(breadth: int) -> list[str]:
    return [f"a{r}:{branch[0].upper()}" for r, branch in footprint_slots(breadth)]


def activation_heatmap(freqs: dict[TaskId, np.ndarray], breadth: int,
                       path: str) -> None:
    """Task x operator grid of activation frequencies."""
    tasks = sorted(freqs)
    grid = np.stack([freqs[t] for t in tasks])
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * grid.shape[1],
                                    1.0 + 0.45 * len(tasks)))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(grid.shape[1]), _slot_labels(breadth), fontsize=7)
    ax.set_yticks(range(len(tasks)), [TASK_NAMES[t] for t in tasks], fontsize=7)
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                    fontsize=6, color="white" if grid[i, j] < 0.6 else "black")
    ax.set_title("operator activation frequency")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def reuse_heatmap(tasks: list[TaskId], reuse: np.ndarray, path: str) -> None:
    """Max-over-ops pairwise reuse; diagonal is each task's own peak."""
    peak = reuse.max(axis=2)
    names = [TASK_NAMES[t] for t in tasks]
    fig, ax = plt.subplots(figsize=(1.5 + 0.5 * len(tasks),
                                    1.2 + 0.5 * len(tasks)))
    im = ax.imshow(peak, vmin=0.0, vmax=1.0, cmap="magma")
    ax.set_xticks(range(len(tasks)), names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(tasks)), names, fontsize=7)
    for i in range(len(tasks)):
        for j in range(len(tasks)):
            ax.text(j, i, f"{peak[i, j]:.2f}", ha="center", va="center",
                    fontsize=6, color="white" if peak[i, j] < 0.6 else "black")
    ax.set_title("cross-task operator reuse (max over ops)")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def flops_bars(rows: list[tuple[str, float, float]], path: str) -> None:
    """Gated vs all-ops FLOPs per (task, m) label, log scale."""
    labels = [r[0] for r in rows]
    gated = [r[1] for r in rows]
    full = [r[2] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(1.5 + 0.9 * len(rows), 3.2))
    ax.bar(x - 0.2, full, width=0.4, label="all ops", color="#b0b0b0")
    ax.bar(x + 0.2, gated, width=0.4, label="gated", color="#2a6fdb")
    ax.set_yscale("log")
    ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("FLOPs per instance")
    ax.set_title("inference cost: gated vs all ops")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def accuracy_curve(history: list[dict], path: str, *, x_key: str = "step",
                   y_key: str = "accuracy") -> None:
    xs = [row[x_key] for row in history]
    ys = [row[y_key] for row in history]
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.plot(xs, ys, lw=1.2)
    ax.set_xlabel(x_key)
    ax.set_ylabel(y_key)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
