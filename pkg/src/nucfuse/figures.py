"""Report figures rendered next to the evaluation's JSON/CSV output.

Two plots summarize a run: a per-class PQ+ bar chart and a ground-truth
vs predicted cell-count scatter annotated with the per-class R². Rendering
uses the Agg backend and fixed figure geometry so repeated runs produce
identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .core import CLASS_NAMES, NUM_CLASSES
from .metrics import MetricsReport
from .sceneio import PALETTE

_DPI = 120


def _class_colors() -> list[tuple[float, float, float]]:
    return [tuple(v / 255.0 for v in PALETTE[c]) for c in range(1, NUM_CLASSES + 1)]


def save_pq_plus_bars(report: MetricsReport, path: str | Path) -> Path:
    """Bar chart of per-class PQ+; undefined classes get an empty slot."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.0), dpi=_DPI)
    xs = range(1, NUM_CLASSES + 1)
    heights = [v if v is not None else 0.0 for v in report.pq_plus]
    bars = ax.bar(xs, heights, color=_class_colors(), edgecolor="black", linewidth=0.5)
    for x, bar, value in zip(xs, bars, report.pq_plus):
        text = "n/a" if value is None else f"{value:.3f}"
        ax.text(x, bar.get_height() + 0.02, text, ha="center", va="bottom", fontsize=8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(CLASS_NAMES, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.1)
    ax.set_ylabel("PQ+")
    mpq = "undefined" if report.mpq_plus is None else f"{report.mpq_plus:.4f}"
    ax.set_title(f"Per-class PQ+ (mPQ+ = {mpq})")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_counts_scatter(
    report: MetricsReport,
    gt_counts: Sequence[Sequence[int]],
    path: str | Path,
) -> Path:
    """Scatter of per-scene predicted vs ground-truth counts, one color per
    class, with the identity line and per-class R² in the legend."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.2, 5.2), dpi=_DPI)
    colors = _class_colors()
    top = 1
    for c in range(NUM_CLASSES):
        gt = [row[c] for row in gt_counts]
        pred = [row[c] for row in report.per_scene_counts]
        top = max([top] + gt + pred)
        r2 = report.r2[c]
        tag = "n/a" if r2 is None else f"{r2:.3f}"
        ax.scatter(
            gt,
            pred,
            s=18,
            color=colors[c],
            alpha=0.8,
            label=f"{CLASS_NAMES[c]} (R²={tag})",
        )
    lim = top * 1.05 + 1
    ax.plot([0, lim], [0, lim], color="grey", linewidth=0.8, linestyle="--")
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_xlabel("ground-truth count")
    ax.set_ylabel("predicted count")
    mean = "undefined" if report.r2_mean is None else f"{report.r2_mean:.4f}"
    ax.set_title(f"Per-scene cell counts (mean R² = {mean})")
    ax.legend(fontsize=7, loc="upper left")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_report_figures(
    report: MetricsReport,
    gt_counts: Sequence[Sequence[int]],
    out_dir: str | Path,
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        save_pq_plus_bars(report, out_dir / "pq_plus.png"),
        save_counts_scatter(report, gt_counts, out_dir / "counts_scatter.png"),
    ]
