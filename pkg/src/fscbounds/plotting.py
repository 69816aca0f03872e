"""Figures for the command-line reports; rendered off-screen to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_curves(path, x, curves: dict, xlabel="p", ylabel="bits per channel use", title=""):
    """One line per entry of ``curves``; NaN values leave gaps."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, ys in curves.items():
        ax.plot(x, np.asarray(ys, dtype=float), marker="o", ms=3, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)


def plot_running_rate(path, log_growth, reference=None, title=""):
    """Running mean of the per-step information gain."""
    g = np.asarray(log_growth, dtype=float)
    steps = np.arange(1, len(g) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, np.cumsum(g) / steps, lw=1, label="running rate")
    if reference is not None:
        ax.axhline(reference, color="k", ls="--", lw=1, label="certified rate")
    ax.set_xscale("log")
    ax.set_xlabel("channel uses")
    ax.set_ylabel("bits per channel use")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)
