"""Report emission: delimited outputs plus rendered figures.

Attribution and heatmap runs write CSVs as the primary machine-readable
products; alongside them the same data is rendered to PNG via matplotlib
for quick visual inspection. Figure rendering is additive and can be
switched off in the run configuration.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .attribution import AttributionRow, TrialOutcome
from .classify import FilterReport
from .metrics import DistanceMatrix

__all__ = [
    "write_attribution_csv",
    "write_trials_csv",
    "write_attribution_json",
    "render_heatmap",
    "render_posterior",
]


def write_attribution_csv(rows: Sequence[AttributionRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "suspect",
                "base",
                "s",
                "f",
                "T",
                "mean",
                "ci_low",
                "ci_high",
                "significant",
                "dominant",
                "below_chance",
            ]
        )
        for r in rows:
            writer.writerow(
                [
                    r.suspect,
                    r.base,
                    r.s,
                    r.f,
                    r.trials,
                    f"{r.mean:.6f}",
                    f"{r.ci_low:.6f}",
                    f"{r.ci_high:.6f}",
                    r.significant,
                    r.dominant,
                    r.below_chance,
                ]
            )


def write_trials_csv(
    trials: Sequence[TrialOutcome], base_ids: Sequence[str], path: str | Path
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["prompt_id", "metric", *base_ids, "predicted_base", "tie"]
        )
        for t in trials:
            writer.writerow(
                [
                    t.prompt_id,
                    t.metric,
                    *(f"{t.distances[b]:.6f}" for b in base_ids),
                    t.predicted_base,
                    t.tie,
                ]
            )


def write_attribution_json(
    suspect_id: str,
    rows: Sequence[AttributionRow],
    filter_report: FilterReport,
    metric: str,
    path: str | Path,
) -> None:
    doc = {
        "suspect": suspect_id,
        "metric": metric,
        "trials": rows[0].trials if rows else 0,
        "entropy_filter": {
            "threshold_fraction": filter_report.threshold_fraction,
            "retained": list(filter_report.retained),
            "dropped": [
                {
                    "prompt_id": d.prompt_id,
                    "mean_entropy": d.mean_entropy,
                    "max_entropy": d.max_entropy,
                }
                for d in filter_report.dropped
            ],
        },
        "bases": [
            {
                "base": r.base,
                "s": r.s,
                "f": r.f,
                "mean": r.mean,
                "ci_low": r.ci_low,
                "ci_high": r.ci_high,
                "significant": r.significant,
                "dominant": r.dominant,
                "below_chance": r.below_chance,
            }
            for r in rows
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def render_heatmap(
    mat: DistanceMatrix, path: str | Path, title: str | None = None
) -> None:
    """Render a distance matrix to PNG with model ids on both axes."""
    m = len(mat.ids)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.55 * m + 2), max(3.5, 0.5 * m + 1.5)))
    im = ax.imshow(mat.values, cmap="viridis")
    ax.set_xticks(range(m), labels=mat.ids, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(m), labels=mat.ids, fontsize=7)
    if m <= 24:
        vmax = mat.values.max() or 1.0
        for i in range(m):
            for j in range(m):
                v = mat.values[i, j]
                ax.text(
                    j,
                    i,
                    f"{v:.2f}",
                    ha="center",
                    va="center",
                    fontsize=6,
                    color="white" if v < 0.6 * vmax else "black",
                )
    fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_posterior(
    rows: Sequence[AttributionRow], path: str | Path, title: str | None = None
) -> None:
    """Posterior mean per base with 95% interval whiskers; chance and
    dominance levels drawn as reference lines."""
    bases = [r.base for r in rows]
    means = np.array([r.mean for r in rows])
    lo = means - np.array([r.ci_low for r in rows])
    hi = np.array([r.ci_high for r in rows]) - means
    k = max(len(rows), 2)

    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(bases) + 2), 3.6))
    x = np.arange(len(bases))
    colors = ["#c62828" if r.dominant else "#546e7a" for r in rows]
    ax.bar(x, means, color=colors, width=0.6)
    ax.errorbar(x, means, yerr=[lo, hi], fmt="none", ecolor="black", capsize=3)
    ax.axhline(1.0 / k, linestyle="--", color="gray", linewidth=1,
               label=f"chance 1/{k}")
    ax.axhline(0.5, linestyle=":", color="black", linewidth=1, label="dominance")
    ax.set_xticks(x, labels=bases, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("posterior mean accuracy")
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
