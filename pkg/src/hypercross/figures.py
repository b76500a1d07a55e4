"""Matplotlib renderings of the exported analyses.

Each function writes one PNG next to (and from the same data as) the
corresponding delimited export, so reports stay readable without extra
tooling. Headless-safe: the Agg backend is forced before pyplot loads.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_poincare(coords: np.ndarray, labels, path, title="Poincare disk") -> None:
    """Scatter 2-D disk coordinates, colored by label, with the unit circle."""
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    theta = np.linspace(0.0, 2.0 * np.pi, 256)
    ax.plot(np.cos(theta), np.sin(theta), color="black", linewidth=0.8)
    sc = ax.scatter(
        coords[:, 0], coords[:, 1], c=labels.astype(float), cmap="viridis",
        s=14, alpha=0.85, linewidths=0,
    )
    fig.colorbar(sc, ax=ax, shrink=0.8, label="label")
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_time_hierarchy(times, counts, path, tau=None) -> None:
    """2-D histogram of time components against region counts."""
    times = np.asarray(times, dtype=float)
    counts = np.asarray(counts, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    bins = (min(40, max(10, times.size // 10)),
            min(30, max(2, np.unique(counts).size)))
    h = ax.hist2d(times, counts, bins=bins, cmap="magma")
    fig.colorbar(h[3], ax=ax, label="samples")
    ax.set_xlabel("time component")
    ax.set_ylabel("activated regions")
    title = "time vs. activation breadth"
    if tau is not None:
        title += f"  (Kendall tau = {tau:.3f})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loss_curves(log, path) -> None:
    """Per-epoch component and total loss trajectories, log-scaled y."""
    epochs = np.arange(1, len(log) + 1)
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for name in ("angle", "centroid", "hierarchy", "total"):
        values = [getattr(rec, name) for rec in log]
        ax.plot(epochs, values, label=name, linewidth=1.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-4)
    ax.legend()
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_basis_scores(mean_probs, path) -> None:
    """Bar chart of mean per-basis softmax probabilities."""
    mean_probs = np.asarray(mean_probs, dtype=float)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * mean_probs.size + 2), 4))
    ax.bar(np.arange(mean_probs.size), mean_probs, color="#3b6ea5")
    ax.set_xlabel("basis index")
    ax.set_ylabel("mean probability")
    ax.set_title("basis similarity scores")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
