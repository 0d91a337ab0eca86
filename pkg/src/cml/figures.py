"""Matplotlib renderings of report tables; the Agg backend needs no display."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_map(xs, ys, path, title="local map"):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(xs, ys, lw=1)
    ax.axhline(0, color="0.7", lw=0.5)
    ax.axvline(0, color="0.7", lw=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("map(x)")
    ax.set_title(title)
    return _save(fig, path)


def plot_density(cells, heights, path, title="invariant density"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for (a, b), h in zip(cells, heights):
        ax.hlines(h, a, b, lw=1.5)
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title(title)
    return _save(fig, path)


def plot_magnetization(series: dict, path, title="magnetization"):
    """series maps a label to a 1-d magnetization trajectory."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, m in series.items():
        ax.plot(np.arange(1, len(m) + 1), m, lw=0.8, label=label)
    ax.set_ylim(-1.05, 1.05)
    ax.set_xlabel("t")
    ax.set_ylabel("magnetization")
    ax.legend(fontsize=7)
    ax.set_title(title)
    return _save(fig, path)


def plot_loglog(x, y, path, xlabel, ylabel, title=""):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(x, y, "o-")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return _save(fig, path)
