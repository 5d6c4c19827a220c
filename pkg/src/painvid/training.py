"""Supervised training protocol plus the cross-validation orchestrators.

Training optimizes clip-level binary cross-entropy with horizontal-flip
augmentation, early-stops on validation macro F1 and returns the model state
from the best validation epoch. Cross-validation is leave-one-subject-out:
one subject held out for testing, its successor in a seeded circular ordering
used for model selection, the rest for training.
"""
from __future__ import annotations

import copy
import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .core import BinaryLabel, Clip, ClipPrediction, DatasetManifest
from .data import ClipTensorSet, FrameStore, materialize
from .metrics import ExperimentResult, RepeatGlobal, RunScore, accuracy, macro_f1
from .model import (
    BackboneHeadConfig,
    BackboneHeadModel,
    CLSTM2Config,
    ToyBackbone3D,
    TwoStreamConvLSTM,
)
from .sampling import WindowPlan, extract_clips

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    early_stop_patience: int = 50
    batch_size: int = 2
    flip_prob: float = 0.5
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must be in [0,1], got {self.flip_prob}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class FoldSpec:
    test_subject: str
    val_subject: str
    train_subjects: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "train_subjects", frozenset(self.train_subjects))
        if self.test_subject == self.val_subject:
            raise ValueError("validation subject must differ from test subject")
        if self.test_subject in self.train_subjects or self.val_subject in self.train_subjects:
            raise ValueError("fold parts must partition the subjects")


@dataclass(frozen=True)
class NormalizationStats:
    rgb_mean: tuple[float, float, float]
    rgb_std: tuple[float, float, float]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_f1: float = float("-inf")


def make_loso_folds(subjects: Sequence[str], seed: int) -> list[FoldSpec]:
    """One fold per subject as the test set; the validation subject is the
    test subject's successor in a seeded circular ordering."""
    uniq = sorted(set(subjects))
    if len(uniq) < 3:
        raise ValueError(f"need at least 3 subjects, got {len(uniq)}")
    order = list(uniq)
    np.random.default_rng(seed).shuffle(order)
    folds = []
    for i, test in enumerate(order):
        val = order[(i + 1) % len(order)]
        train = frozenset(s for s in order if s not in (test, val))
        folds.append(FoldSpec(test_subject=test, val_subject=val, train_subjects=train))
    return folds


def compute_normalization(train_clips: Sequence[Clip], store: FrameStore) -> NormalizationStats:
    """Per-channel mean/std of the training clips' RGB pixels, on the [0,1]
    scale. Constant channels get their std floored at 1e-6 with a warning."""
    if not train_clips:
        raise TrainingError("cannot compute normalization on an empty training set")
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for clip in train_clips:
        frames = store.clip_frames(clip, "rgb").astype(np.float64) / 255.0
        total += frames.sum(axis=(0, 1, 2))
        total_sq += (frames**2).sum(axis=(0, 1, 2))
        count += frames.shape[0] * frames.shape[1] * frames.shape[2]
    mean = total / count
    var = total_sq / count - mean**2
    std = np.sqrt(np.maximum(var, 0.0))
    if np.any(std < 1e-6):
        warnings.warn("constant RGB channel in training data; std floored at 1e-6")
        std = np.maximum(std, 1e-6)
    return NormalizationStats(rgb_mean=tuple(mean.tolist()), rgb_std=tuple(std.tolist()))


def materialize_split(
    clips: Sequence[Clip], store: FrameStore, stats: NormalizationStats
) -> ClipTensorSet:
    return materialize(clips, store, np.asarray(stats.rgb_mean), np.asarray(stats.rgb_std))


def model_logits(model: nn.Module, rgb: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Uniform forward for both model kinds; the backbone+head model consumes
    the two streams concatenated on the channel axis."""
    if isinstance(model, TwoStreamConvLSTM):
        return model(rgb, flow)
    if isinstance(model, BackboneHeadModel):
        return model(torch.cat([rgb, flow], dim=-1))
    raise TrainingError(f"unsupported model type {type(model).__name__}")


def build_model(model_kind: str, model_config, seed: int) -> nn.Module:
    torch.manual_seed(seed)
    if model_kind == "clstm2":
        return TwoStreamConvLSTM(model_config)
    if model_kind == "backbone_head":
        cfg: BackboneHeadConfig = model_config
        backbone = ToyBackbone3D(feature_dim=cfg.feature_dim, in_channels=6, seed=seed)
        return BackboneHeadModel(cfg, backbone=backbone)
    raise TrainingError(f"unknown model kind {model_kind!r}")


def _set_batchnorm_eval(model: nn.Module) -> None:
    for module in model.modules():
        if isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d, nn.BatchNorm3d)):
            module.eval()


def _flip_width(x: torch.Tensor) -> torch.Tensor:
    return torch.flip(x, dims=[3])  # (B, T, H, W, C)


def evaluate_clips(
    model: nn.Module, data: ClipTensorSet, batch_size: int = 64
) -> list[ClipPrediction]:
    """Deterministic inference over a materialized split."""
    model.eval()
    preds: list[ClipPrediction] = []
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            logits = model_logits(model, data.rgb[i : i + batch_size], data.flow[i : i + batch_size])
            probs = torch.softmax(logits, dim=-1).numpy()
            for j, p in enumerate(probs):
                clip = data.clips[i + j]
                preds.append(
                    ClipPrediction(
                        clip=clip,
                        subject_id=data.subjects[i + j],
                        prob_pain=float(p[1]),
                        prob_no_pain=float(p[0]),
                    )
                )
    return preds


def _val_macro_f1(model: nn.Module, data: ClipTensorSet) -> float:
    preds = evaluate_clips(model, data)
    _, _, macro = macro_f1([int(p.predicted) for p in preds], [int(p.clip.label) for p in preds])
    return macro


def train_supervised(
    train_data: ClipTensorSet,
    val_data: ClipTensorSet | None,
    model: nn.Module,
    cfg: TrainConfig,
    fixed_epochs: int | None = None,
    head_only: bool = False,
) -> tuple[nn.Module, TrainHistory]:
    """Optimize clip-level cross-entropy; return the best-validation-epoch state.

    With ``fixed_epochs`` set there is no validation or early stopping and the
    final state is returned (the full-dataset training mode). ``head_only``
    restricts updates to the classification head and freezes batch-norm
    statistics.
    """
    labels = train_data.labels
    if (labels == 1).sum() == 0 or (labels == 0).sum() == 0:
        raise TrainingError("training split lacks one of the classes")

    if head_only:
        if isinstance(model, TwoStreamConvLSTM):
            head_params = set(model.head.parameters())
        elif isinstance(model, BackboneHeadModel):
            head_params = set(model.head_parameters())
        else:
            raise TrainingError(f"unsupported model type {type(model).__name__}")
        for p in model.parameters():
            p.requires_grad_(p in head_params)
    trainable = [p for p in model.parameters() if p.requires_grad]
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(trainable, lr=cfg.learning_rate)
    else:
        opt = torch.optim.SGD(trainable, lr=cfg.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_state: dict | None = None
    epochs = fixed_epochs if fixed_epochs is not None else cfg.max_epochs
    since_best = 0

    for epoch in range(epochs):
        model.train()
        if head_only:
            _set_batchnorm_eval(model)
        order = rng.permutation(len(train_data))
        flips = rng.random(len(train_data)) < cfg.flip_prob
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            rgb = train_data.rgb[idx]
            flow = train_data.flow[idx]
            flip_mask = torch.from_numpy(flips[idx])
            if flip_mask.any():
                rgb = rgb.clone()
                flow = flow.clone()
                rgb[flip_mask] = _flip_width(rgb[flip_mask])
                flow[flip_mask] = _flip_width(flow[flip_mask])
            opt.zero_grad()
            logits = model_logits(model, rgb, flow)
            loss = loss_fn(logits, train_data.labels[idx])
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        train_loss = float(np.mean(losses)) if losses else 0.0

        if fixed_epochs is None:
            val_f1 = _val_macro_f1(model, val_data)
            history.records.append(EpochRecord(epoch, train_loss, val_f1))
            if val_f1 > history.best_val_f1:
                history.best_val_f1 = val_f1
                history.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    logger.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                    break
        else:
            history.records.append(EpochRecord(epoch, train_loss, float("nan")))
            history.best_epoch = epoch

    if fixed_epochs is None and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


def scaled_epochs(best_epoch_cv: float, n_train_cv: int, n_train_full: int) -> int:
    """Scale the cross-validation epoch budget by the dataset growth factor.

    The fractional product truncates: a best epoch of 77 at factor 6/4 gives
    115, and 42 gives 63.
    """
    if best_epoch_cv <= 0 or n_train_cv <= 0 or n_train_full <= 0:
        raise ValueError("epoch count and subject counts must be positive")
    return int(Fraction(best_epoch_cv) * n_train_full / n_train_cv)


@dataclass
class FoldOutput:
    repeat: int
    fold_index: int
    test_subject: str
    best_epoch: int
    history: TrainHistory
    predictions: list[ClipPrediction]


@dataclass
class CVOutput:
    result: ExperimentResult
    folds: list[FoldOutput]
    mean_best_epoch: float


def _split_manifest(manifest: DatasetManifest, subjects) -> DatasetManifest:
    return manifest.subset(subjects)


def run_cv(
    manifest: DatasetManifest,
    model_kind: str,
    model_config,
    cfg: TrainConfig,
    n_repeats: int = 1,
    plan: WindowPlan = WindowPlan(),
    store: FrameStore | None = None,
) -> CVOutput:
    """Leave-one-subject-out cross-validation, repeated with distinct seeds.

    Every split is resampled independently; normalization statistics come from
    the training split only. Per-repeat global metrics pool all folds' test
    predictions.
    """
    store = store or FrameStore(manifest)
    result = ExperimentResult()
    fold_outputs: list[FoldOutput] = []
    best_epochs: list[int] = []
    for repeat in range(n_repeats):
        repeat_seed = cfg.seed + repeat
        folds = make_loso_folds(sorted(manifest.subjects), seed=repeat_seed)
        pooled_preds: list[int] = []
        pooled_labels: list[int] = []
        for fold_index, fold in enumerate(folds):
            fold_seed = repeat_seed + 100003 * (fold_index + 1)
            fold_cfg = dataclasses.replace(cfg, seed=fold_seed)
            train_clips = extract_clips(_split_manifest(manifest, fold.train_subjects), "train", plan)
            val_clips = extract_clips(_split_manifest(manifest, [fold.val_subject]), "val", plan)
            test_clips = extract_clips(_split_manifest(manifest, [fold.test_subject]), "test", plan)
            test_videos = {c.video_id for c in test_clips}
            assert not any(c.video_id in test_videos for c in train_clips + val_clips), \
                "test subject leaked into train/val"

            stats = compute_normalization(train_clips, store)
            train_data = materialize_split(train_clips, store, stats)
            val_data = materialize_split(val_clips, store, stats)
            test_data = materialize_split(test_clips, store, stats)

            model = build_model(model_kind, model_config, seed=fold_seed)
            model, history = train_supervised(train_data, val_data, model, fold_cfg)
            preds = evaluate_clips(model, test_data)
            y_pred = [int(p.predicted) for p in preds]
            y_true = [int(p.clip.label) for p in preds]
            _, _, f1 = macro_f1(y_pred, y_true)
            acc = accuracy(y_pred, y_true)
            result.scores.append(
                RunScore(repeat=repeat, subject=fold.test_subject, f1=f1, acc=acc,
                         n_clips=len(preds))
            )
            pooled_preds.extend(y_pred)
            pooled_labels.extend(y_true)
            best_epochs.append(history.best_epoch)
            fold_outputs.append(
                FoldOutput(repeat, fold_index, fold.test_subject, history.best_epoch,
                           history, preds)
            )
            logger.info("repeat %d fold %d (test %s): F1 %.1f", repeat, fold_index,
                        fold.test_subject, f1)
        _, _, gf1 = macro_f1(pooled_preds, pooled_labels)
        result.globals.append(
            RepeatGlobal(repeat=repeat, f1=gf1, acc=accuracy(pooled_preds, pooled_labels))
        )
    mean_best = float(np.mean(best_epochs)) if best_epochs else 0.0
    return CVOutput(result=result, folds=fold_outputs, mean_best_epoch=mean_best)


def train_full_dataset(
    manifest: DatasetManifest,
    model_kind: str,
    model_config,
    epochs: int,
    cfg: TrainConfig,
    plan: WindowPlan = WindowPlan(),
    store: FrameStore | None = None,
) -> tuple[nn.Module, NormalizationStats, dict]:
    """Train on every subject for a fixed epoch count, no validation.

    Returns the model, the dataset normalization statistics and checkpoint
    metadata tagging the domain and epoch count.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    store = store or FrameStore(manifest)
    clips = extract_clips(manifest, "train", plan)
    stats = compute_normalization(clips, store)
    data = materialize_split(clips, store, stats)
    model = build_model(model_kind, model_config, seed=cfg.seed)
    if epochs > 0:
        model, _ = train_supervised(data, None, model, cfg, fixed_epochs=epochs)
    model.eval()
    meta = {
        "domain": manifest.domain_id,
        "epochs": epochs,
        "seed": cfg.seed,
        "model_kind": model_kind,
        "normalization": {"rgb_mean": list(stats.rgb_mean), "rgb_std": list(stats.rgb_std)},
    }
    return model, stats, meta
