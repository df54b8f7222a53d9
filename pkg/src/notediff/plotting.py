"""Figures written next to the CSV outputs (headless Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(history: list[dict], path) -> Path:
    """Total, weighted CE, masked CE and contrastive loss per step (log scale)."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    steps = [r["step"] for r in history]
    for key, label in (("total", "total"), ("l_ce", "weighted CE"),
                       ("masked_ce", "masked CE (nats)"), ("l_cl", "contrastive")):
        vals = np.array([r[key] for r in history], dtype=float)
        if np.all(vals > 0):
            ax.plot(steps, vals, label=label, lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def matrix_heatmap(matrix: np.ndarray, labels, path, title: str = "", vmax=None) -> Path:
    matrix = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(6.2, 5.2))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=vmax)
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=7,
                    color="white" if matrix[i, j] < 0.6 * (vmax or matrix.max() or 1) else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def metric_histograms(report, path) -> Path:
    """Distributions of SC, PE and PCE over the evaluated pieces."""
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.0))
    for ax, (col, label) in zip(axes, (("sc", "scale consistency"), ("pe_bits", "pitch entropy (bits)"),
                                       ("pce_bits", "pitch-class entropy (bits)"))):
        vals = [p[col] for p in report.pieces if p[col] is not None]
        if vals:
            ax.hist(vals, bins=min(20, max(1, len(vals))), color="tab:blue", alpha=0.8)
        ax.set_xlabel(label)
    axes[0].set_ylabel("pieces")
    return _save(fig, path)
