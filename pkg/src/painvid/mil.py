"""Video-level decisions from clip predictions via a top-k%-confidence filter.

Only the most confident fraction of a video's clip predictions votes on the
video label; with k = 1.0 the filter degenerates to a plain majority vote.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import BinaryLabel, Clip, ClipPrediction
from .metrics import macro_f1


@dataclass(frozen=True)
class MILConfig:
    k_fraction: float = 0.05

    def __post_init__(self):
        if not 0 < self.k_fraction <= 1:
            raise ValueError(f"k_fraction must be in (0, 1], got {self.k_fraction}")


def mil_filter(clip_preds: Sequence[ClipPrediction], cfg: MILConfig) -> BinaryLabel:
    """Video label from the ceil(k * n) most confident clip predictions.

    Confidence ties break on the earlier clip start index so the result does
    not depend on input order. The selected clips vote by majority; a vote tie
    goes to the class with the larger summed confidence, and an exact tie is
    called pain.
    """
    if not clip_preds:
        raise ValueError("mil_filter needs at least one clip prediction")
    n_sel = math.ceil(cfg.k_fraction * len(clip_preds))
    ranked = sorted(clip_preds, key=lambda p: (-p.confidence, p.clip.start_frame))
    selected = ranked[:n_sel]
    votes = {BinaryLabel.PAIN: 0, BinaryLabel.NO_PAIN: 0}
    conf = {BinaryLabel.PAIN: 0.0, BinaryLabel.NO_PAIN: 0.0}
    for p in selected:
        votes[p.predicted] += 1
        conf[p.predicted] += p.confidence
    if votes[BinaryLabel.PAIN] != votes[BinaryLabel.NO_PAIN]:
        return max(votes, key=lambda k: votes[k])
    if conf[BinaryLabel.PAIN] != conf[BinaryLabel.NO_PAIN]:
        return max(conf, key=lambda k: conf[k])
    return BinaryLabel.PAIN


def group_by_video(preds: Iterable[ClipPrediction]) -> dict[str, list[ClipPrediction]]:
    grouped: dict[str, list[ClipPrediction]] = {}
    for p in preds:
        grouped.setdefault(p.clip.video_id, []).append(p)
    return grouped


@dataclass(frozen=True)
class VideoLevelRow:
    """One filter setting's macro F1 per subject and overall."""

    name: str
    k_fraction: float
    per_subject: dict[str, float]
    global_f1: float


def evaluate_video_level(
    predictions: Sequence[ClipPrediction],
    video_labels: dict[str, BinaryLabel],
    k_fractions: Sequence[float] = (0.05, 0.01),
) -> list[VideoLevelRow]:
    """Macro F1 of video-level decisions per subject, for the unfiltered
    majority vote and each requested top-k filter."""
    grouped = group_by_video(predictions)
    for vid in grouped:
        if vid not in video_labels:
            raise ValueError(f"no video label for {vid!r}")
    subject_of = {vid: preds[0].subject_id for vid, preds in grouped.items()}

    rows = []
    settings = [("no filter", 1.0)] + [(f"top {k:.0%}", k) for k in k_fractions]
    for name, k in settings:
        cfg = MILConfig(k_fraction=k)
        decisions = {vid: mil_filter(preds, cfg) for vid, preds in grouped.items()}
        per_subject = {}
        for subject in sorted(set(subject_of.values())):
            vids = [v for v in decisions if subject_of[v] == subject]
            _, _, macro = macro_f1(
                [int(decisions[v]) for v in vids], [int(video_labels[v]) for v in vids]
            )
            per_subject[subject] = macro
        _, _, global_f1 = macro_f1(
            [int(decisions[v]) for v in decisions],
            [int(video_labels[v]) for v in decisions],
        )
        rows.append(VideoLevelRow(name=name, k_fraction=k, per_subject=per_subject,
                                  global_f1=global_f1))
    return rows


PREDICTIONS_COLUMNS = (
    "video_id",
    "subject_id",
    "start_frame",
    "prob_pain",
    "confidence",
    "predicted",
    "label",
)


def save_predictions(preds: Sequence[ClipPrediction], path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PREDICTIONS_COLUMNS)
    for p in preds:
        writer.writerow(
            [
                p.clip.video_id,
                p.subject_id,
                p.clip.start_frame,
                f"{p.prob_pain:.6f}",
                f"{p.confidence:.6f}",
                int(p.predicted),
                int(p.clip.label),
            ]
        )
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_predictions(path: str | Path, clip_length: int = 10) -> list[ClipPrediction]:
    preds = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            prob_pain = float(row["prob_pain"])
            clip = Clip(
                video_id=row["video_id"],
                start_frame=int(row["start_frame"]),
                length=clip_length,
                label=BinaryLabel(int(row["label"])),
            )
            preds.append(
                ClipPrediction(
                    clip=clip,
                    subject_id=row["subject_id"],
                    prob_pain=prob_pain,
                    prob_no_pain=1.0 - prob_pain,
                )
            )
    return preds
