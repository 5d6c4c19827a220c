"""Clip extraction: back-to-back windowing plus minor-class offset resampling.

Videos are cut into fixed-length windows (back to back by default). When the
two classes of a split are imbalanced, extra windows are taken from the minor
class at a half-window offset, which makes them maximally different from the
base windows; this is applied to train, validation and test splits alike.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BinaryLabel, Clip, DatasetManifest, binarize_label, frame_filename


class ConfigurationError(ValueError):
    pass


class FrameIOError(OSError):
    pass


@dataclass(frozen=True)
class WindowPlan:
    """Window length w_L and stride w_S in frames; defaults are back-to-back."""

    w_L: int = 10
    w_S: int = 10

    def __post_init__(self):
        if self.w_L < 1:
            raise ConfigurationError(f"w_L must be >= 1, got {self.w_L}")
        if self.w_S < 1:
            raise ConfigurationError(f"w_S must be >= 1, got {self.w_S}")

    @property
    def resample_start(self) -> int:
        """Offset start index for resampled windows (half a window)."""
        if self.w_L % 2 != 0:
            raise ConfigurationError(
                f"offset resampling needs an even window length, got w_L={self.w_L}"
            )
        return self.w_L // 2


@dataclass(frozen=True)
class ResamplePlan:
    """How many extra minor-class clips to draw, and the per-video quota."""

    n_minor: int
    n_major: int
    n_resample: int
    per_video_quota: int
    M: int


def _window_starts(n_frames: int, w_L: int, w_S: int, t_start: int) -> list[int]:
    if n_frames < 0:
        raise ConfigurationError(f"n_frames must be >= 0, got {n_frames}")
    return list(range(t_start, n_frames - w_L + 1, w_S))


def plan_base_windows(n_frames: int, plan: WindowPlan) -> list[int]:
    """Start indices 0, w_S, 2*w_S, ... while the window fits in the video."""
    return _window_starts(n_frames, plan.w_L, plan.w_S, 0)


def plan_resample_windows(n_frames: int, plan: WindowPlan) -> list[int]:
    """Start indices offset by w_L/2, disjoint from the base windows by residue."""
    return _window_starts(n_frames, plan.w_L, plan.w_S, plan.resample_start)


def build_resample_plan(n_minor: int, n_major: int, M: int) -> ResamplePlan:
    """Quota arithmetic: n_resample = |n_minor - n_major|, quota = n_resample // M."""
    if M < 1:
        raise ConfigurationError(f"M must be >= 1, got {M}")
    n_resample = abs(n_minor - n_major)
    return ResamplePlan(
        n_minor=n_minor,
        n_major=n_major,
        n_resample=n_resample,
        per_video_quota=n_resample // M,
        M=M,
    )


def extract_clips(manifest: DatasetManifest, split: str, plan: WindowPlan) -> list[Clip]:
    """Cut every video of a split into labeled clips, balancing via resampling.

    Base windows come first in manifest order, then the offset windows of the
    minor class (quota per minor-class video, videos in manifest order, no
    wrap-around when a video runs out of offset windows). The result is fully
    determined by the inputs.
    """
    if split not in ("train", "val", "test"):
        raise ConfigurationError(f"split must be train/val/test, got {split!r}")

    labels = {rec.video_id: binarize_label(rec) for rec in manifest.records}
    clips: list[Clip] = []
    counts = {BinaryLabel.NO_PAIN: 0, BinaryLabel.PAIN: 0}
    for rec in manifest.records:
        label = labels[rec.video_id]
        for s in plan_base_windows(rec.n_frames, plan):
            clips.append(Clip(rec.video_id, s, plan.w_L, label))
            counts[label] += 1

    if counts[BinaryLabel.PAIN] == counts[BinaryLabel.NO_PAIN]:
        return clips
    minor = min(counts, key=lambda k: counts[k])
    minor_videos = [rec for rec in manifest.records if labels[rec.video_id] == minor]
    if not minor_videos:
        return clips
    rp = build_resample_plan(counts[minor], counts[max(counts, key=lambda k: counts[k])],
                             len(minor_videos))
    for rec in minor_videos:
        offsets = plan_resample_windows(rec.n_frames, plan)
        for s in offsets[: rp.per_video_quota]:
            clips.append(Clip(rec.video_id, s, plan.w_L, minor, is_resampled=True))
    return clips


def _read_frame(path: Path) -> np.ndarray:
    if not path.exists():
        alt = path.with_suffix(".jpg")
        if alt.exists():
            path = alt
        else:
            raise FrameIOError(f"missing frame file: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_clip_frames(clip: Clip, stream: str, frame_dir: str | Path) -> np.ndarray:
    """Load a clip's frames for one stream as a (w_L, H, W, C) uint8 array.

    ``stream`` is "rgb" or "flow"; flow frames live in a flow/ subdirectory of
    the video's frame directory.
    """
    frame_dir = Path(frame_dir)
    if stream == "rgb":
        base = frame_dir
    elif stream == "flow":
        base = frame_dir / "flow"
    else:
        raise ConfigurationError(f"unknown stream {stream!r}")
    frames = [
        _read_frame(base / f"{frame_filename(clip.start_frame + i)}.png")
        for i in range(clip.length)
    ]
    return np.stack(frames, axis=0)
