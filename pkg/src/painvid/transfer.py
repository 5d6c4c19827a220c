"""Domain-transfer protocols: zero-shot evaluation on an unseen domain, and
fine-tuning of the classification head on the target domain.

The zero-shot path never updates a parameter; it refuses to run when source
and target domain ids coincide, which would silently turn transfer into
intra-domain evaluation.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import BinaryLabel, ClipPrediction, DatasetManifest
from .data import FrameStore
from .metrics import ExperimentResult, RepeatGlobal, RunScore, accuracy, macro_f1
from .sampling import WindowPlan, extract_clips
from .training import (
    NormalizationStats,
    TrainConfig,
    TrainingError,
    compute_normalization,
    evaluate_clips,
    make_loso_folds,
    materialize_split,
    train_supervised,
)

logger = logging.getLogger(__name__)


class TransferError(RuntimeError):
    pass


@dataclass
class TransferOutput:
    source_domain: str
    target_domain: str
    mode: str
    predictions: list[ClipPrediction]
    per_subject: dict[str, float]
    global_f1: float
    global_acc: float
    repeats: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "source_domain": self.source_domain,
            "target_domain": self.target_domain,
            "mode": self.mode,
            "per_subject": self.per_subject,
            "global": self.global_f1,
            "global_accuracy": self.global_acc,
            "repeats": self.repeats,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _score_predictions(preds: list[ClipPrediction]) -> tuple[dict[str, float], float, float]:
    per_subject: dict[str, float] = {}
    for subject in sorted({p.subject_id for p in preds}):
        sub = [p for p in preds if p.subject_id == subject]
        _, _, f1 = macro_f1([int(p.predicted) for p in sub], [int(p.clip.label) for p in sub])
        per_subject[subject] = f1
    y_pred = [int(p.predicted) for p in preds]
    y_true = [int(p.clip.label) for p in preds]
    _, _, global_f1 = macro_f1(y_pred, y_true)
    return per_subject, global_f1, accuracy(y_pred, y_true)


def zero_shot_transfer(
    source_model: nn.Module,
    source_meta: dict,
    target_manifest: DatasetManifest,
    plan: WindowPlan = WindowPlan(),
    store: FrameStore | None = None,
) -> TransferOutput:
    """Evaluate a source-trained model on every clip of an unseen domain.

    Target clips are extracted with the target's own resampling so the class
    balance matches intra-domain runs. The source model's normalization
    statistics travel with its checkpoint metadata and are reused unchanged;
    no parameter is updated.
    """
    source_domain = source_meta.get("domain", "")
    if source_domain == target_manifest.domain_id:
        raise TransferError(
            f"source and target domain are both {source_domain!r}; "
            "zero-shot transfer requires an unseen domain"
        )
    norm = source_meta.get("normalization")
    if norm is None:
        raise TransferError("source metadata lacks normalization statistics")
    stats = NormalizationStats(rgb_mean=tuple(norm["rgb_mean"]), rgb_std=tuple(norm["rgb_std"]))
    store = store or FrameStore(target_manifest)
    clips = extract_clips(target_manifest, "test", plan)
    data = materialize_split(clips, store, stats)
    source_model.eval()
    preds = evaluate_clips(source_model, data)
    per_subject, global_f1, global_acc = _score_predictions(preds)
    return TransferOutput(
        source_domain=source_domain,
        target_domain=target_manifest.domain_id,
        mode="zero_shot",
        predictions=preds,
        per_subject=per_subject,
        global_f1=global_f1,
        global_acc=global_acc,
    )


def finetune_head(
    source_model: nn.Module,
    source_meta: dict,
    target_manifest: DatasetManifest,
    cfg: TrainConfig,
    n_repeats: int = 3,
    plan: WindowPlan = WindowPlan(),
    store: FrameStore | None = None,
) -> tuple[ExperimentResult, TransferOutput]:
    """Leave-one-subject-out fine-tuning of the classification head only.

    Every fold restarts from the source parameters; all non-head parameters
    are frozen and batch-norm statistics stay fixed. Normalization statistics
    are recomputed on each fold's target training split. Aggregation follows
    the usual repeated-run convention.
    """
    source_domain = source_meta.get("domain", "")
    if source_domain == target_manifest.domain_id:
        raise TransferError("fine-tuning expects a target domain different from the source")
    store = store or FrameStore(target_manifest)
    base_state = copy.deepcopy(source_model.state_dict())
    result = ExperimentResult()
    last_preds: list[ClipPrediction] = []
    for repeat in range(n_repeats):
        repeat_seed = cfg.seed + repeat
        folds = make_loso_folds(sorted(target_manifest.subjects), seed=repeat_seed)
        pooled_pred: list[int] = []
        pooled_true: list[int] = []
        repeat_preds: list[ClipPrediction] = []
        for fold_index, fold in enumerate(folds):
            fold_seed = repeat_seed + 100003 * (fold_index + 1)
            train_clips = extract_clips(target_manifest.subset(fold.train_subjects), "train", plan)
            val_clips = extract_clips(target_manifest.subset([fold.val_subject]), "val", plan)
            test_clips = extract_clips(target_manifest.subset([fold.test_subject]), "test", plan)
            stats = compute_normalization(train_clips, store)
            train_data = materialize_split(train_clips, store, stats)
            val_data = materialize_split(val_clips, store, stats)
            test_data = materialize_split(test_clips, store, stats)

            model = copy.deepcopy(source_model)
            model.load_state_dict(base_state)
            torch.manual_seed(fold_seed)
            fold_cfg = dataclasses.replace(cfg, seed=fold_seed)
            model, _ = train_supervised(train_data, val_data, model, fold_cfg, head_only=True)
            preds = evaluate_clips(model, test_data)
            y_pred = [int(p.predicted) for p in preds]
            y_true = [int(p.clip.label) for p in preds]
            _, _, f1 = macro_f1(y_pred, y_true)
            result.scores.append(
                RunScore(repeat=repeat, subject=fold.test_subject, f1=f1,
                         acc=accuracy(y_pred, y_true), n_clips=len(preds))
            )
            pooled_pred.extend(y_pred)
            pooled_true.extend(y_true)
            repeat_preds.extend(preds)
        _, _, gf1 = macro_f1(pooled_pred, pooled_true)
        result.globals.append(
            RepeatGlobal(repeat=repeat, f1=gf1, acc=accuracy(pooled_pred, pooled_true))
        )
        last_preds = repeat_preds
    output = TransferOutput(
        source_domain=source_domain,
        target_domain=target_manifest.domain_id,
        mode="finetune",
        predictions=last_preds,
        per_subject={
            s: float(np.mean([r.f1 for r in result.scores if r.subject == s]))
            for s in result.subjects()
        },
        global_f1=float(np.mean([g.f1 for g in result.globals])),
        global_acc=float(np.mean([g.acc for g in result.globals])),
        repeats=[{"repeat": g.repeat, "f1": g.f1, "accuracy": g.acc} for g in result.globals],
    )
    return result, output
