"""Matplotlib figure rendering for evaluation reports (Agg backend only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .retrieval import SimilarityHistogram  # noqa: E402


def save_similarity_histogram(hist: SimilarityHistogram, path: str | Path, title: str = ""):
    """Log-x bar chart of shifted-cosine mass for positive vs negative pairs."""
    edges = np.asarray(hist.edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    widths = np.diff(edges)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, hist.negative, width=widths, align="center",
           alpha=0.6, label="negative pairs", color="tab:gray")
    ax.bar(centers, hist.positive, width=widths, align="center",
           alpha=0.6, label="positive pairs", color="tab:blue")
    ax.set_xscale("log")
    ax.axvline(hist.positive_geomean, color="tab:blue", ls="--", lw=1)
    ax.axvline(hist.negative_geomean, color="tab:gray", ls="--", lw=1)
    ax.set_xlabel("(1 + cosine) / 2")
    ax.set_ylabel("pair count")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve(epoch_losses: list[float], path: str | Path, title: str = ""):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(epoch_losses) + 1), epoch_losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_recall_bars(labels: list[str], recalls_by_k: dict[int, list[float]],
                     path: str | Path, title: str = ""):
    """Grouped bars: one group per variant, one bar per k."""
    ks = sorted(recalls_by_k)
    x = np.arange(len(labels), dtype=float)
    width = 0.8 / max(1, len(ks))
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, k in enumerate(ks):
        ax.bar(x + (j - (len(ks) - 1) / 2) * width, recalls_by_k[k],
               width=width, label=f"R@{k}")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("macro recall")
    ax.set_ylim(0, 1.05)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
