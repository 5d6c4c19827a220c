"""Bundled reference data: a 25-clip expert-baseline study with per-clip
behavior notes, CPS scores, expert rating summaries and one model's clip
predictions. Behavior codes are carried as opaque metadata."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

EXPERT_STUDY_N_RATERS = 27


@dataclass(frozen=True)
class ExpertStudyClip:
    clip_id: int
    behaviors: str
    cps_score: float
    label: int
    expert_avg_rating: float
    expert_n_correct: int
    model_pred: int
    model_confidence: float


def expert_study_path() -> Path:
    return Path(resources.files(__package__) / "expert_study.csv")


def load_expert_study(path: str | Path | None = None) -> list[ExpertStudyClip]:
    path = Path(path) if path is not None else expert_study_path()
    clips = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            clips.append(
                ExpertStudyClip(
                    clip_id=int(row["clip_id"]),
                    behaviors=row["behaviors"],
                    cps_score=float(row["cps_score"]),
                    label=int(row["label"]),
                    expert_avg_rating=float(row["expert_avg_rating"]),
                    expert_n_correct=int(row["expert_n_correct"]),
                    model_pred=int(row["model_pred"]),
                    model_confidence=float(row["model_confidence"]),
                )
            )
    return clips
