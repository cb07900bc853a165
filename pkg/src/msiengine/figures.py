"""Figure rendering for the report path.

The analysis core stays render-free; only the CLI's ``report`` command
comes through here, turning the plot-ready tables into PNG files next
to the delimited output. Uses the Agg backend so headless runs work.
"""

from __future__ import annotations

import os
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .analysis import PjReport  # noqa: E402


def _save(fig, outdir: str, name: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_rt_by_condition(rows: Sequence[Mapping], outdir: str,
                           name: str = "rt_by_condition.png") -> Optional[str]:
    rows = [r for r in rows if r.get("mean_ms") is not None]
    if not rows:
        return None
    rows = sorted(rows, key=lambda r: (r["phase"], str(r["condition"])))
    labels = [f"{r['condition']}\n{r['phase'][:3]}" for r in rows]
    means = [r["mean_ms"] for r in rows]
    sds = [r["sd_ms"] or 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(rows)), 4))
    ax.bar(range(len(rows)), means, yerr=sds, capsize=3, color="#4878a8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=45, ha="right")
    ax.set_ylabel("reaction time (ms)")
    ax.set_title("Mean RT by condition")
    return _save(fig, outdir, name)


def render_accuracy_by_condition(rows: Sequence[Mapping], outdir: str,
                                 name: str = "accuracy_by_condition.png") -> Optional[str]:
    rows = [r for r in rows if r.get("accuracy") is not None]
    if not rows:
        return None
    rows = sorted(rows, key=lambda r: (r["phase"], str(r["condition"])))
    labels = [f"{r['condition']}\n{r['phase'][:3]}" for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(rows)), 4))
    ax.bar(range(len(rows)), [r["accuracy"] for r in rows], color="#6aa86a")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.set_title("Accuracy by condition")
    return _save(fig, outdir, name)


def render_pj_curves(report: PjReport, outdir: str,
                     name: str = "pj_curves.png") -> Optional[str]:
    if not report.sj_curve and not report.toj_curve:
        return None
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    sj = [r for r in report.sj_curve if r["p_simultaneous"] is not None]
    if sj:
        axes[0].plot([r["soa_ms"] for r in sj],
                     [r["p_simultaneous"] for r in sj], "o-", color="#4878a8")
    for te in (report.te_sound_first, report.te_flash_first):
        axes[0].axvline(te, color="gray", linestyle="--", linewidth=1)
    axes[0].axhline(0.5, color="gray", linewidth=0.5)
    axes[0].set_xlabel("SOA (ms, + = flash first)")
    axes[0].set_ylabel("p(simultaneous)")
    axes[0].set_title(f"SJ curve (TBW {report.tbw_ms:.0f} ms)")
    toj = [r for r in report.toj_curve if r["p_visual_first"] is not None]
    if toj:
        axes[1].plot([r["soa_ms"] for r in toj],
                     [r["p_visual_first"] for r in toj], "s-", color="#a86a6a")
    axes[1].axhline(0.5, color="gray", linewidth=0.5)
    axes[1].set_xlabel("SOA (ms)")
    axes[1].set_ylabel("p(visual first)")
    axes[1].set_title("TOJ curve")
    fig.tight_layout()
    return _save(fig, outdir, name)


def render_frame_intervals(intervals_ms: Sequence[float], refresh_period_ms: float,
                           outdir: str, name: str = "frame_intervals.png") -> Optional[str]:
    if not intervals_ms:
        return None
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(intervals_ms, linewidth=0.5, color="#4878a8")
    ax.axhline(1.1 * refresh_period_ms, color="red", linestyle="--",
               linewidth=1, label="drop bound (1.1x period)")
    ax.set_xlabel("frame index")
    ax.set_ylabel("interval (ms)")
    ax.set_title("Frame intervals")
    ax.legend(fontsize=8)
    return _save(fig, outdir, name)


def render_threshold_traces(calibration_rows: Sequence[Mapping], outdir: str,
                            name: str = "threshold_traces.png") -> Optional[str]:
    """Level-by-trial traces for staircase-style calibration blocks."""
    by_block: dict[str, list[Mapping]] = {}
    for row in calibration_rows:
        if row.get("level") is None:
            continue
        by_block.setdefault(row["block_name"], []).append(row)
    if not by_block:
        return None
    fig, ax = plt.subplots(figsize=(8, 4))
    for block_name, rows in sorted(by_block.items()):
        rows = sorted(rows, key=lambda r: r["trial_index"])
        ax.plot([r["trial_index"] for r in rows], [r["level"] for r in rows],
                marker=".", linewidth=1, label=block_name)
    ax.set_xlabel("trial")
    ax.set_ylabel("tested level")
    ax.set_title("Calibration traces")
    ax.legend(fontsize=6, ncol=2)
    return _save(fig, outdir, name)
