"""Static figures for offset matrices and ablation tables."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_matrix(matrix: dict, path: str | Path) -> Path:
    """Heatmap of an offset matrix dict (as produced by ``OffsetMatrix.to_dict``)."""
    values = np.asarray(matrix["values"], dtype=float)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(values, cmap="viridis")
    ax.set_xticks(range(values.shape[1]), matrix["feature_offsets"])
    ax.set_yticks(range(values.shape[0]), matrix["slot_offsets"])
    ax.set_xlabel("feature offset")
    ax.set_ylabel("slot offset")
    for (r, c), v in np.ndenumerate(values):
        ax.text(c, r, f"{100 * v:.1f}", ha="center", va="center", fontsize=7, color="w")
    title = matrix["metric"]
    if np.isfinite(matrix.get("baseline_value", np.nan)):
        title += f" (baseline {100 * matrix['baseline_value']:.1f})"
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_ablation(grid: dict, path: str | Path) -> Path:
    """Bar chart of mean and spread per variant; skipped variants are listed, not drawn."""
    rows = [(k, v) for k, v in grid["variants"].items() if "mean" in v]
    skipped = [k for k, v in grid["variants"].items() if "skipped" in v]
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(rows), 3.6))
    means = [100 * v["mean"] for _, v in rows]
    spreads = [100 * v["spread"] for _, v in rows]
    ax.bar(range(len(rows)), means, yerr=spreads, capsize=3, color="tab:blue")
    ax.set_xticks(range(len(rows)), [k for k, _ in rows], rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(grid["metric"])
    if skipped:
        ax.set_title("skipped: " + ", ".join(skipped), fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
