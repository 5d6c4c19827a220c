"""Evaluation metrics: macro F1, confusion counts, repeated-run aggregation and
the expert-rater threshold analysis.

Pain is the positive class throughout, and scores are reported in percent.
When a class has neither predictions nor instances its F1 is taken as 0 (with
a warning); zero divisions inside precision/recall likewise contribute 0.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import BinaryLabel


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    p = np.asarray(preds, dtype=int)
    y = np.asarray(labels, dtype=int)
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )


def _f1_from_counts(tp: int, fp: int, fn: int, n_true: int, n_pred: int, name: str) -> float:
    if n_true == 0 and n_pred == 0:
        warnings.warn(f"class {name}: no instances and no predictions, F1 set to 0")
        return 0.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def macro_f1(preds: Sequence[int], labels: Sequence[int]) -> tuple[float, float, float]:
    """Per-class and macro-averaged F1 in percent: (no_pain, pain, macro)."""
    if len(preds) == 0:
        raise ValueError("empty prediction list")
    cm = confusion(preds, labels)
    f1_pain = _f1_from_counts(cm.tp, cm.fp, cm.fn, cm.tp + cm.fn, cm.tp + cm.fp, "pain")
    f1_no_pain = _f1_from_counts(cm.tn, cm.fn, cm.fp, cm.tn + cm.fp, cm.tn + cm.fn, "no_pain")
    return 100 * f1_no_pain, 100 * f1_pain, 100 * (f1_no_pain + f1_pain) / 2


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Plain accuracy in percent."""
    if len(preds) != len(labels) or len(preds) == 0:
        raise ValueError("preds and labels must be equal-length and nonempty")
    p = np.asarray(preds, dtype=int)
    y = np.asarray(labels, dtype=int)
    return 100 * float(np.mean(p == y))


@dataclass(frozen=True)
class RunScore:
    """Test metrics of one (repeat, subject) cell of a cross-validation grid."""

    repeat: int
    subject: str
    f1: float
    acc: float
    n_clips: int = 0


@dataclass(frozen=True)
class RepeatGlobal:
    """Metrics pooled over all test predictions of one full repeat."""

    repeat: int
    f1: float
    acc: float


@dataclass
class ExperimentResult:
    scores: list[RunScore] = field(default_factory=list)
    globals: list[RepeatGlobal] = field(default_factory=list)

    def subjects(self) -> list[str]:
        seen: list[str] = []
        for s in self.scores:
            if s.subject not in seen:
                seen.append(s.subject)
        return seen


@dataclass(frozen=True)
class Aggregate:
    mean_f1: float
    std_f1: float
    mean_acc: float
    std_acc: float
    per_subject: dict[str, tuple[float, float]]  # subject -> (mean f1, std f1)


def aggregate_runs(result: ExperimentResult) -> Aggregate:
    """Mean over repeats of the pooled metric; the reported spread is the
    average over subjects of each subject's across-repeat standard deviation
    (population std, so a single repeat aggregates to 0)."""
    if not result.globals:
        raise ValueError("no repeats to aggregate")
    mean_f1 = float(np.mean([g.f1 for g in result.globals]))
    mean_acc = float(np.mean([g.acc for g in result.globals]))
    per_subject: dict[str, tuple[float, float]] = {}
    subj_stds_f1 = []
    subj_stds_acc = []
    for subject in result.subjects():
        f1s = [s.f1 for s in result.scores if s.subject == subject]
        accs = [s.acc for s in result.scores if s.subject == subject]
        per_subject[subject] = (float(np.mean(f1s)), float(np.std(f1s)))
        subj_stds_f1.append(np.std(f1s))
        subj_stds_acc.append(np.std(accs))
    return Aggregate(
        mean_f1=mean_f1,
        std_f1=float(np.mean(subj_stds_f1)) if subj_stds_f1 else 0.0,
        mean_acc=mean_acc,
        std_acc=float(np.mean(subj_stds_acc)) if subj_stds_acc else 0.0,
        per_subject=per_subject,
    )


@dataclass(frozen=True)
class RaterMatrix:
    """Subjective 0-10 intensity ratings: one row per rater, one column per clip."""

    ratings: np.ndarray
    labels: tuple[BinaryLabel, ...]

    def __post_init__(self):
        arr = np.asarray(self.ratings)
        object.__setattr__(self, "ratings", arr)
        object.__setattr__(self, "labels", tuple(BinaryLabel(l) for l in self.labels))
        if arr.ndim != 2:
            raise ValueError("ratings must be a 2D (raters x clips) array")
        if arr.shape[1] != len(self.labels):
            raise ValueError("one label per clip required")
        if arr.min() < 0 or arr.max() > 10:
            raise ValueError("ratings must lie in 0..10")


@dataclass(frozen=True)
class RaterThresholdResult:
    threshold: int
    no_pain_acc: float
    no_pain_std: float
    pain_acc: float
    pain_std: float
    total_acc: float
    total_std: float


def rater_threshold_analysis(raters: RaterMatrix, threshold: int) -> RaterThresholdResult:
    """Accuracy of thresholded ratings against the binary labels.

    A rating is correct on a pain clip iff it exceeds the threshold, and on a
    no-pain clip iff it does not. Accuracies are averaged across raters; the
    spread is the across-rater standard deviation. Values in percent.
    """
    labels = np.array([int(l) for l in raters.labels])
    pain_cols = labels == 1
    nopain_cols = ~pain_cols
    correct_pain = raters.ratings[:, pain_cols] > threshold
    correct_nopain = raters.ratings[:, nopain_cols] <= threshold

    def _per_rater(block: np.ndarray) -> np.ndarray:
        if block.shape[1] == 0:
            return np.zeros(block.shape[0])
        return block.mean(axis=1) * 100

    pain = _per_rater(correct_pain)
    nopain = _per_rater(correct_nopain)
    total = (
        np.concatenate([correct_pain, correct_nopain], axis=1).mean(axis=1) * 100
        if raters.ratings.shape[1]
        else np.zeros(raters.ratings.shape[0])
    )
    return RaterThresholdResult(
        threshold=threshold,
        no_pain_acc=float(nopain.mean()),
        no_pain_std=float(nopain.std()),
        pain_acc=float(pain.mean()),
        pain_std=float(pain.std()),
        total_acc=float(total.mean()),
        total_std=float(total.std()),
    )


def expert_accuracy_from_correct_counts(
    correct_counts: Sequence[int], labels: Sequence[int], n_raters: int
) -> tuple[float, float, float]:
    """(no_pain, pain, total) accuracies in percent from per-clip correct counts.

    Used when only the number of raters answering each clip correctly is
    available rather than the raw rating matrix.
    """
    counts = np.asarray(correct_counts, dtype=float)
    y = np.asarray(labels, dtype=int)
    if counts.shape != y.shape:
        raise ValueError("one correct-count per clip required")
    if counts.max(initial=0) > n_raters:
        raise ValueError("correct count exceeds number of raters")
    pain_total = n_raters * int(np.sum(y == 1))
    nopain_total = n_raters * int(np.sum(y == 0))
    pain_acc = 100 * counts[y == 1].sum() / pain_total if pain_total else 0.0
    nopain_acc = 100 * counts[y == 0].sum() / nopain_total if nopain_total else 0.0
    total_acc = 100 * counts.sum() / (n_raters * len(y))
    return float(nopain_acc), float(pain_acc), float(total_acc)


def load_ratings(path: str | Path) -> tuple[np.ndarray, list[str], list[str]]:
    """Read ratings.csv (rater_id,clip_id,rating) into a (raters x clips) matrix.

    Rows and columns follow sorted rater and clip ids; combine with per-clip
    labels to build a RaterMatrix.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append((row["rater_id"], row["clip_id"], int(row["rating"])))
    raters = sorted({r for r, _, _ in rows})
    clips = sorted({c for _, c, _ in rows})
    mat = np.zeros((len(raters), len(clips)), dtype=int)
    for r, c, v in rows:
        mat[raters.index(r), clips.index(c)] = v
    return mat, raters, clips


def save_ratings(path: str | Path, raters: RaterMatrix, rater_ids=None, clip_ids=None) -> None:
    r, c = raters.ratings.shape
    rater_ids = rater_ids or [f"rater_{i:02d}" for i in range(r)]
    clip_ids = clip_ids or [f"clip_{j:02d}" for j in range(c)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rater_id", "clip_id", "rating"])
    for i in range(r):
        for j in range(c):
            writer.writerow([rater_ids[i], clip_ids[j], int(raters.ratings[i, j])])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
