"""In-memory frame access shared by training, transfer and explanation paths.

Videos at desk scale are small, so whole videos are cached as uint8 arrays.
The emitted clip order always follows the clip list, never cache or worker
scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .core import BinaryLabel, Clip, DatasetManifest
from .sampling import load_clip_frames


class FrameStore:
    """Caches per-video frame stacks for both streams."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def subject_of(self, video_id: str) -> str:
        return self.manifest.by_video(video_id).subject_id

    def video_frames(self, video_id: str, stream: str) -> np.ndarray:
        key = (video_id, stream)
        if key not in self._cache:
            rec = self.manifest.by_video(video_id)
            whole = Clip(video_id=video_id, start_frame=0, length=rec.n_frames,
                         label=BinaryLabel.NO_PAIN)  # label irrelevant here
            self._cache[key] = load_clip_frames(whole, stream, self.manifest.frame_dir(rec))
        return self._cache[key]

    def clip_frames(self, clip: Clip, stream: str) -> np.ndarray:
        frames = self.video_frames(clip.video_id, stream)
        return frames[clip.start_frame : clip.start_frame + clip.length]


@dataclass
class ClipTensorSet:
    """A materialized split: normalized RGB, [0,1] flow, labels and metadata."""

    rgb: torch.Tensor
    flow: torch.Tensor
    labels: torch.Tensor
    clips: list[Clip]
    subjects: list[str]

    def __len__(self) -> int:
        return len(self.clips)


def materialize(
    clips: Sequence[Clip],
    store: FrameStore,
    rgb_mean: np.ndarray,
    rgb_std: np.ndarray,
) -> ClipTensorSet:
    """Stack a clip list into tensors, standardizing RGB with the given stats
    (computed on the training split) and scaling flow to [0, 1]."""
    rgb = np.stack([store.clip_frames(c, "rgb") for c in clips]).astype(np.float32) / 255.0
    flow = np.stack([store.clip_frames(c, "flow") for c in clips]).astype(np.float32) / 255.0
    rgb = (rgb - rgb_mean.astype(np.float32)) / rgb_std.astype(np.float32)
    return ClipTensorSet(
        rgb=torch.from_numpy(rgb),
        flow=torch.from_numpy(flow),
        labels=torch.tensor([int(c.label) for c in clips], dtype=torch.long),
        clips=list(clips),
        subjects=[store.subject_of(c.video_id) for c in clips],
    )
