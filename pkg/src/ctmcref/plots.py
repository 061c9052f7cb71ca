"""Figure rendering for sweep results and actual-vs-predicted reports.

Figures are written straight to files (Agg backend); the delimited outputs
remain the primary artifacts and the plots are companions to them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_sweep_plot(grid, values, path: str | Path, title: str = "", unit: str = "time") -> Path:
    """Line plot of predicted property values over the sweep grid."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(grid, values, color="tab:blue", lw=1.6)
    ax.set_xlabel(f"T ({unit})")
    ax.set_ylabel("predicted value")
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_comparison_plot(
    grid,
    actual,
    predicted,
    path: str | Path,
    title: str = "",
    unit: str = "time",
    error: float | None = None,
) -> Path:
    """Actual versus predicted curves with the absolute gap shaded."""
    path = Path(path)
    grid = np.asarray(grid, dtype=float)
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(grid, actual, color="tab:green", lw=1.8, label="actual")
    ax.plot(grid, predicted, color="tab:blue", lw=1.6, ls="--", label="predicted")
    ax.fill_between(grid, actual, predicted, color="tab:red", alpha=0.15)
    ax.set_xlabel(f"T ({unit})")
    ax.set_ylabel("value")
    label = title
    if error is not None:
        label = f"{title}  (error = {error:.4g})" if title else f"error = {error:.4g}"
    if label:
        ax.set_title(label, fontsize=10)
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
