"""Plotting helpers built on matplotlib.

These keep the scenario runner lightweight and give every experiment the
same chart style. Each helper optionally saves to `out_path` and closes the
figure.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def _finish(fig: plt.Figure, out_path: str | Path | None) -> None:
    plt.tight_layout()
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path)
        plt.close(fig)


def plot_solution(
    frame: pd.DataFrame,
    *,
    title: str = "Solution",
    figsize: tuple[int, int] = (10, 6),
    out_path: str | Path | None = None,
) -> plt.Axes:
    """Plot every non-time column of a series frame against `t`."""
    if "t" not in frame.columns:
        raise ValueError("frame needs a 't' column")
    ax = frame.set_index("t").plot(figsize=figsize, title=title)
    ax.set_xlabel("t")
    ax.grid(True, alpha=0.3)
    _finish(ax.figure, out_path)
    return ax


def plot_decay(
    series: pd.DataFrame,
    *,
    title: str = "Coupled pair decay",
    figsize: tuple[int, int] = (10, 5),
    out_path: str | Path | None = None,
) -> plt.Axes:
    """E|u - v|^2 with a standard-error band against the exponential bound, log scale."""
    fig, ax = plt.subplots(figsize=figsize)
    t = series["t"].to_numpy()
    mean = series["mean_sq_diff"].to_numpy()
    se = series["stderr"].to_numpy()
    ax.plot(t, mean, color="tab:blue", label="E|u - v|^2")
    ax.fill_between(t, np.maximum(mean - 2 * se, 1e-300), mean + 2 * se, color="tab:blue", alpha=0.2, linewidth=0)
    ax.plot(t, series["bound"].to_numpy(), color="tab:red", linestyle="--", label="bound")
    if np.all(mean[1:] > 0):
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel("t")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _finish(fig, out_path)
    return ax


def plot_samples_histogram(
    samples: np.ndarray,
    *,
    cdf: Callable[[np.ndarray], np.ndarray] | None = None,
    bins: int = 60,
    title: str = "Empirical law",
    figsize: tuple[int, int] = (8, 5),
    out_path: str | Path | None = None,
) -> plt.Axes:
    """Histogram of the first coordinate; an oracle CDF is drawn as its binned density."""
    x = np.asarray(samples, dtype=float)
    x = x[:, 0] if x.ndim == 2 else x
    if x.size == 0:
        raise ValueError("samples is empty")
    fig, ax = plt.subplots(figsize=figsize)
    counts, edges, _ = ax.hist(x, bins=bins, density=True, color="0.6", label="samples")
    if cdf is not None:
        density = np.diff(cdf(edges)) / np.diff(edges)
        ax.step(edges[:-1], density, where="post", color="tab:red", label="oracle")
        ax.legend()
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _finish(fig, out_path)
    return ax


def plot_convergence(
    table: pd.DataFrame,
    x: str,
    y: str,
    *,
    title: str = "Convergence",
    figsize: tuple[int, int] = (7, 5),
    out_path: str | Path | None = None,
) -> plt.Axes:
    """Log-log error table (e.g. sup error against h or eps)."""
    fig, ax = plt.subplots(figsize=figsize)
    ax.loglog(table[x].to_numpy(), table[y].to_numpy(), marker="o")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    _finish(fig, out_path)
    return ax
