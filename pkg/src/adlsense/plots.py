"""Figure rendering for evaluation reports and session runs.

Figures are a side output next to the delimited logs and JSON reports;
nothing downstream consumes them. Uses the Agg backend so rendering works
headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report_figures(report_payload: dict, out_dir) -> list[Path]:
    """Render per-method metric bars, confusion heatmaps, and rate bars."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    metrics = report_payload.get("metrics", {})
    if metrics:
        names = sorted(metrics)
        xs = np.arange(len(names))
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(names)), 3.2))
        width = 0.27
        for offset, key, label in (
            (-width, "macro_precision", "precision"),
            (0.0, "macro_recall", "recall"),
            (width, "macro_f1", "F1"),
        ):
            ax.bar(xs + offset, [metrics[n][key] for n in names], width, label=label)
        ax.set_xticks(xs)
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylim(0, 1)
        ax.set_ylabel("macro score")
        ax.legend(fontsize=8)
        written.append(_save(fig, out_dir / "macro_metrics.png"))

        for name in names:
            confusion = np.asarray(metrics[name]["confusion"], dtype=np.int64)
            labels = metrics[name]["labels"]
            fig, ax = plt.subplots(figsize=(4.2, 3.6))
            im = ax.imshow(confusion, cmap="Blues")
            ax.set_xticks(range(len(labels)))
            ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
            ax.set_yticks(range(len(labels)))
            ax.set_yticklabels(labels, fontsize=7)
            ax.set_xlabel("predicted")
            ax.set_ylabel("true")
            ax.set_title(name, fontsize=9)
            fig.colorbar(im, ax=ax, shrink=0.8)
            written.append(_save(fig, out_dir / f"confusion_{name}.png"))

    rates = report_payload.get("rates", {})
    if rates:
        groups = sorted(rates)
        values = [
            100.0 * sum(r[0] for r in rates[g]) / sum(r[1] for r in rates[g])
            for g in groups
        ]
        fig, ax = plt.subplots(figsize=(max(3.5, 1.0 * len(groups)), 3.0))
        ax.bar(groups, values, color="tab:green")
        ax.set_ylim(0, 100)
        ax.set_ylabel("success rate (%)")
        for i, v in enumerate(values):
            ax.text(i, v + 1, f"{v:.1f}", ha="center", fontsize=8)
        written.append(_save(fig, out_dir / "success_rates.png"))

    return written


def render_run_figures(decision_records: list[dict], out_dir) -> list[Path]:
    """Timeline of similarity scores and motion averages from a decision log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if not decision_records:
        return written

    times = [r["timestamp"] for r in decision_records]
    motion = [r.get("motion_average") for r in decision_records]
    sims = [(r["timestamp"], r["similarity"]) for r in decision_records if r.get("similarity") is not None]

    fig, axes = plt.subplots(2, 1, figsize=(6.4, 4.2), sharex=True)
    if any(m is not None for m in motion):
        axes[0].plot(times, [m if m is not None else np.nan for m in motion], lw=1.2)
    axes[0].set_ylabel("avg motion (m)")
    if sims:
        axes[1].plot([t for t, _ in sims], [s for _, s in sims], ".-", lw=1.0, ms=4)
    axes[1].set_ylabel("similarity S")
    axes[1].set_xlabel("session time (s)")
    written.append(_save(fig, out_dir / "session_timeline.png"))
    return written
