"""Matplotlib figure rendering for CLI reports.

Every figure lands next to its delimited/JSON counterpart; nothing here
is interactive.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .quantify import GroupStats, TpsCategory

_DPI = 120


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_roc_figure(points: list[tuple[float, float]], auc: float, path: str | Path) -> None:
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(fpr, tpr, "-o", markersize=3, label=f"AUC = {auc:.3f}")
    ax.plot([0, 1], [0, 1], "--", color="gray", linewidth=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def save_sweep_figure(curve: list[tuple[float, float]], path: str | Path) -> None:
    c2 = [p[0] for p in curve]
    acc = [p[1] for p in curve]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(c2, acc, "-")
    ax.set_xlabel("Upper TPS cutoff (%)")
    ax.set_ylabel("3-way accuracy")
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    _save(fig, path)


def save_confusion_figure(matrix: np.ndarray, path: str | Path) -> None:
    labels = [c.name for c in TpsCategory]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(matrix, cmap="Blues")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, str(int(matrix[i, j])), ha="center", va="center",
                    color="black" if matrix[i, j] < matrix.max() * 0.6 else "white")
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("Ground truth")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    _save(fig, path)


def save_group_figure(stats: dict[str, GroupStats], path: str | Path) -> None:
    labels = list(stats)
    means = [stats[k].mean for k in labels]
    errs = [stats[k].sd if stats[k].sd is not None else 0.0 for k in labels]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.4 * len(labels)), 3.5))
    ax.bar(range(len(labels)), means, yerr=errs, capsize=4, color="#7a9bc4")
    ax.set_xticks(range(len(labels)), labels, rotation=20, ha="right")
    ax.set_ylabel("TPS")
    ax.set_ylim(0, 105)
    fig.tight_layout()
    _save(fig, path)


def save_scatter_figure(
    coords: np.ndarray,
    tps: list[float | None],
    path: str | Path,
) -> None:
    """2D projection scatter; points with a TPS value are colored by it."""
    coords = np.asarray(coords)
    has_tps = np.asarray([t is not None for t in tps])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    if (~has_tps).any():
        ax.scatter(coords[~has_tps, 0], coords[~has_tps, 1], s=12, color="lightgray")
    if has_tps.any():
        vals = [t for t in tps if t is not None]
        sc = ax.scatter(coords[has_tps, 0], coords[has_tps, 1], s=14,
                        c=vals, cmap="BrBG_r", vmin=0, vmax=100)
        fig.colorbar(sc, ax=ax, label="TPS")
    ax.set_xlabel("u")
    ax.set_ylabel("v")
    fig.tight_layout()
    _save(fig, path)


def save_similarity_figure(cohorts: list[str], p_values: np.ndarray, path: str | Path) -> None:
    k = len(cohorts)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    names = [f"{cohorts[i]}|{cohorts[j]}" for i, j in pairs]
    values = [p_values[i, j] for i, j in pairs]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(pairs)), 3.5))
    ax.bar(range(len(pairs)), values, color="#b08860")
    ax.set_xticks(range(len(pairs)), names, rotation=30, ha="right")
    ax.set_ylabel("rank-sum p-value")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    _save(fig, path)


def save_compare_figure(
    name_a: str,
    scores_a: list[float],
    name_b: str,
    scores_b: list[float],
    p_value: float,
    path: str | Path,
) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.8))
    ax.boxplot([scores_a, scores_b], tick_labels=[name_a, name_b], widths=0.5)
    for pos, vals in ((1, scores_a), (2, scores_b)):
        ax.plot(np.full(len(vals), pos), vals, "o", markersize=3, alpha=0.5, color="#555555")
    ax.set_ylabel("mF1")
    ax.set_title(f"p = {p_value:.4g}")
    fig.tight_layout()
    _save(fig, path)
