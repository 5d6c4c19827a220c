"""Report rendering: formatted result tables, CSV exports and figures.

Tables mirror the layouts used in the experiment summaries (intra-domain
cross-validation, domain transfer by subject, video-level MIL rows, rater
threshold sweeps); figures are confusion-matrix heatmaps and training curves
written next to the delimited output.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .fixtures import EXPERT_STUDY_N_RATERS, ExpertStudyClip
from .metrics import (
    Aggregate,
    ConfusionMatrix,
    RaterThresholdResult,
    confusion,
    expert_accuracy_from_correct_counts,
    macro_f1,
)
from .mil import VideoLevelRow


def fmt(x: float) -> str:
    return f"{x:.1f}"


def table_intra_domain(rows: Sequence[tuple[str, int, Aggregate]]) -> str:
    """Rows of (dataset name, fold count, aggregate) in the CV-results layout."""
    out = [f"{'Dataset':<16}{'# folds':>8}  {'F1-score':>14}  {'Accuracy':>14}"]
    for name, n_folds, agg in rows:
        out.append(
            f"{name:<16}{n_folds:>8}  "
            f"{fmt(agg.mean_f1):>7} ± {fmt(agg.std_f1):<5}"
            f"{fmt(agg.mean_acc):>7} ± {fmt(agg.std_acc):<5}"
        )
    return "\n".join(out)


def table_transfer(per_subject: dict[str, float], global_f1: float, label: str) -> str:
    subjects = sorted(per_subject)
    head = f"{'Model':<24}" + "".join(f"{s[-3:]:>8}" for s in subjects) + f"{'Global':>9}"
    row = f"{label:<24}" + "".join(f"{fmt(per_subject[s]):>8}" for s in subjects)
    row += f"{fmt(global_f1):>9}"
    return head + "\n" + row


def table_video_level(rows: Sequence[VideoLevelRow]) -> str:
    subjects = sorted(rows[0].per_subject) if rows else []
    head = f"{'MIL-filter':<12}" + "".join(f"{s[-3:]:>8}" for s in subjects) + f"{'Global':>9}"
    lines = [head]
    for row in rows:
        line = f"{row.name:<12}" + "".join(f"{fmt(row.per_subject[s]):>8}" for s in subjects)
        line += f"{fmt(row.global_f1):>9}"
        lines.append(line)
    return "\n".join(lines)


def table_thresholds(results: Sequence[RaterThresholdResult]) -> str:
    lines = [f"{'Threshold':<10}{'No pain':>16}{'Pain':>16}{'Total':>16}"]
    for r in results:
        lines.append(
            f"{r.threshold:<10}"
            f"{fmt(r.no_pain_acc):>8} ± {fmt(r.no_pain_std):<5}"
            f"{fmt(r.pain_acc):>8} ± {fmt(r.pain_std):<5}"
            f"{fmt(r.total_acc):>8} ± {fmt(r.total_std):<5}"
        )
    return "\n".join(lines)


def confusion_heatmap(cm: ConfusionMatrix, path: str | Path, title: str = "") -> Path:
    """2x2 annotated heatmap (pain positive), written as a PNG."""
    grid = np.array([[cm.tn, cm.fp], [cm.fn, cm.tp]], dtype=float)
    fig, ax = plt.subplots(figsize=(3.2, 2.8))
    im = ax.imshow(grid, cmap="Blues")
    ax.set_xticks([0, 1], ["no pain", "pain"])
    ax.set_yticks([0, 1], ["no pain", "pain"])
    ax.set_xlabel("predicted")
    ax.set_ylabel("label")
    if title:
        ax.set_title(title)
    for i in range(2):
        for j in range(2):
            color = "white" if grid[i, j] > grid.max() / 2 else "black"
            ax.text(j, i, int(grid[i, j]), ha="center", va="center", color=color)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def training_curves(history_rows: Sequence[tuple[int, float, float]], path: str | Path) -> Path:
    epochs = [r[0] for r in history_rows]
    loss = [r[1] for r in history_rows]
    val = [r[2] for r in history_rows]
    fig, ax1 = plt.subplots(figsize=(4.5, 3))
    ax1.plot(epochs, loss, color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, val, color="tab:blue", label="val F1")
    ax2.set_ylabel("val F1 (%)", color="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def expert_study_report(
    clips: Sequence[ExpertStudyClip], out_dir: str | Path
) -> dict:
    """Model-vs-expert summary on the bundled 25-clip study.

    Writes summary.csv and a confusion heatmap; returns the metrics and the
    printable table.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preds = [c.model_pred for c in clips]
    labels = [c.label for c in clips]
    f1_no_pain, f1_pain, f1_total = macro_f1(preds, labels)
    cm = confusion(preds, labels)
    nopain_acc, pain_acc, total_acc = expert_accuracy_from_correct_counts(
        [c.expert_n_correct for c in clips], labels, EXPERT_STUDY_N_RATERS
    )

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rater", "no_pain", "pain", "total", "metric"])
    writer.writerow(["experts", fmt(nopain_acc), fmt(pain_acc), fmt(total_acc), "accuracy"])
    writer.writerow(["model", fmt(f1_no_pain), fmt(f1_pain), fmt(f1_total), "f1"])
    (out_dir / "summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    confusion_heatmap(cm, out_dir / "confusion_model.png", title="model predictions")

    table = (
        f"{'Rater':<16}{'No pain':>9}{'Pain':>7}{'Total':>7}\n"
        f"{'Experts (acc)':<16}{fmt(nopain_acc):>9}{fmt(pain_acc):>7}{fmt(total_acc):>7}\n"
        f"{'Model (F1)':<16}{fmt(f1_no_pain):>9}{fmt(f1_pain):>7}{fmt(f1_total):>7}"
    )
    return {
        "model_f1": {"no_pain": f1_no_pain, "pain": f1_pain, "total": f1_total},
        "expert_accuracy": {"no_pain": nopain_acc, "pain": pain_acc, "total": total_acc},
        "confusion": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
        "table": table,
    }
