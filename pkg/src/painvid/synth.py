"""Synthetic two-domain video generator with a purely temporal class signal.

Every video carries a texture patch whose contrast flickers frame to frame.
In signal ("burst") windows of positive videos the flicker follows a smooth
sinusoid; everywhere else the very same modulation values are applied in a
random order. Single-frame statistics of the patch are therefore identical
across classes and only the temporal coherence separates them, so
frame-order-blind models cannot beat chance by construction.

The dense domain plants the signal in (almost) every window of a positive
video; the sparse domain only in a small fraction, which makes the inherited
dense labels noisy, mirroring sparse real-world pain displays. Domains and
subjects differ by brightness and background texture style.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .core import (
    BinaryLabel,
    Clip,
    DatasetManifest,
    Phase,
    VideoRecord,
    frame_filename,
    save_manifest,
)
from .sampling import WindowPlan, plan_base_windows


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DomainStyle:
    brightness: float = 0.0
    texture_sigma: float = 2.0
    texture_amp: float = 0.10


@dataclass(frozen=True)
class SignalSpec:
    patch_size: int = 10
    patch_top_left: tuple[int, int] = (3, 3)
    period: int = 4
    amplitude: float = 0.8
    phase_jitter: float = 0.08


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 4
    videos_per_subject: int = 2
    frames_per_video: int = 100
    frame_hw: tuple[int, int] = (32, 32)
    burst_fraction: float = 1.0
    signal: SignalSpec = SignalSpec()
    style: DomainStyle = DomainStyle()
    window: WindowPlan = WindowPlan()
    seed: int = 0

    def __post_init__(self):
        if min(self.n_subjects, self.videos_per_subject, self.frames_per_video) < 1:
            raise SynthConfigError("all counts must be positive")
        if not 0 <= self.burst_fraction <= 1:
            raise SynthConfigError(f"burst_fraction must be in [0,1], got {self.burst_fraction}")
        h, w = self.frame_hw
        r0, c0 = self.signal.patch_top_left
        p = self.signal.patch_size
        if r0 + p > h or c0 + p > w:
            raise SynthConfigError(
                f"{p}x{p} patch at {self.signal.patch_top_left} exceeds {h}x{w} frame"
            )


DOMAIN_STYLES = {
    "dense": DomainStyle(brightness=0.0, texture_sigma=2.0, texture_amp=0.10),
    "sparse": DomainStyle(brightness=0.07, texture_sigma=3.0, texture_amp=0.13),
}
DOMAIN_IDS = {"dense": "SYNTH_DENSE", "sparse": "SYNTH_SPARSE"}


def _smooth_field(rng: np.random.Generator, hw: tuple[int, int], sigma: float) -> np.ndarray:
    field = gaussian_filter(rng.standard_normal(hw), sigma, mode="wrap")
    std = field.std()
    return field / std if std > 0 else field


def _modulation_values(
    rng: np.random.Generator, w_L: int, spec: SignalSpec, coherent: bool
) -> np.ndarray:
    phase = rng.uniform(0, 2 * math.pi)
    values = np.sin(2 * math.pi * np.arange(w_L) / spec.period + phase)
    values = values + rng.normal(0, spec.phase_jitter, size=w_L)
    if not coherent:
        values = rng.permutation(values)
    return values


def _render_video(
    video_rng: np.random.Generator,
    subject_texture: np.ndarray,
    subject_brightness: float,
    cfg: SynthConfig,
    style: DomainStyle,
    positive: bool,
) -> tuple[np.ndarray, list[int], np.ndarray]:
    """Returns (frames uint8 (n,H,W,3), burst window starts, patch mask (H,W))."""
    h, w = cfg.frame_hw
    n = cfg.frames_per_video
    spec = cfg.signal
    r0, c0 = spec.patch_top_left
    p = spec.patch_size
    mask = np.zeros((h, w), dtype=bool)
    mask[r0 : r0 + p, c0 : c0 + p] = True

    # style is strictly per subject: a subject's positive and negative videos
    # differ only in the patch's temporal coherence, never in appearance
    base = 0.45 + style.brightness + subject_brightness
    base = base + style.texture_amp * subject_texture

    starts = plan_base_windows(n, cfg.window)
    n_burst = round(cfg.burst_fraction * len(starts)) if positive else 0
    burst_idx = (
        sorted(video_rng.choice(len(starts), size=n_burst, replace=False).tolist())
        if n_burst
        else []
    )
    burst_starts = [starts[i] for i in burst_idx]

    # per-frame modulation values; frames outside any window flicker incoherently
    s = np.empty(n)
    covered = np.zeros(n, dtype=bool)
    for i, start in enumerate(starts):
        vals = _modulation_values(video_rng, cfg.window.w_L, spec, coherent=i in burst_idx)
        s[start : start + cfg.window.w_L] = vals
        covered[start : start + cfg.window.w_L] = True
    if (~covered).any():
        tail = _modulation_values(video_rng, int((~covered).sum()), spec, coherent=False)
        s[~covered] = tail

    frames = np.empty((n, h, w, 3), dtype=np.uint8)
    for t in range(n):
        frame = base + video_rng.normal(0, 0.02, size=(h, w))
        frame = frame + video_rng.normal(0, 0.015)  # global brightness jitter
        patch = frame[r0 : r0 + p, c0 : c0 + p]
        mu = patch.mean()
        frame[r0 : r0 + p, c0 : c0 + p] = mu + (patch - mu) * (1 + spec.amplitude * s[t])
        gray = np.clip(frame, 0.0, 1.0)
        frames[t] = (np.round(gray * 255.0)).astype(np.uint8)[..., None].repeat(3, axis=-1)
    return frames, burst_starts, mask


def generate_dataset(
    cfg: SynthConfig, domain_kind: str, out_dir: str | Path
) -> DatasetManifest:
    """Write frames, ground-truth masks and a manifest for one domain.

    Regenerating with the same config and seed reproduces identical bytes.
    """
    if domain_kind not in DOMAIN_STYLES:
        raise SynthConfigError(f"domain_kind must be dense or sparse, got {domain_kind!r}")
    if domain_kind == "dense" and cfg.burst_fraction < 0.8:
        raise SynthConfigError("the dense domain needs burst_fraction close to 1")
    if domain_kind == "sparse" and cfg.burst_fraction >= 0.3:
        raise SynthConfigError("the sparse domain needs burst_fraction below 0.3")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    style = DOMAIN_STYLES[domain_kind]
    domain_id = DOMAIN_IDS[domain_kind]
    dom_code = 0 if domain_kind == "dense" else 1

    records = []
    for subj in range(cfg.n_subjects):
        subj_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, dom_code, subj]))
        subject_texture = _smooth_field(subj_rng, cfg.frame_hw, style.texture_sigma)
        subject_brightness = subj_rng.uniform(-0.08, 0.08)
        subject_id = f"{domain_id}_s{subj:02d}"
        for vid in range(cfg.videos_per_subject):
            positive = vid % 2 == 0
            video_rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, dom_code, subj, vid])
            )
            video_id = f"{domain_id}_s{subj:02d}_v{vid:02d}"
            frames, burst_starts, mask = _render_video(
                video_rng, subject_texture, subject_brightness, cfg, style, positive
            )
            video_dir = out_dir / video_id
            mask_dir = video_dir / "masks"
            mask_dir.mkdir(parents=True, exist_ok=True)
            burst_frames = np.zeros(cfg.frames_per_video, dtype=bool)
            for start in burst_starts:
                burst_frames[start : start + cfg.window.w_L] = True
            for t in range(cfg.frames_per_video):
                Image.fromarray(frames[t]).save(video_dir / f"{frame_filename(t)}.png")
                m = mask if burst_frames[t] else np.zeros_like(mask)
                Image.fromarray((m * 255).astype(np.uint8)).save(
                    mask_dir / f"{frame_filename(t)}.png"
                )
            info = {
                "burst_starts": burst_starts,
                "w_L": cfg.window.w_L,
                "patch_top_left": list(cfg.signal.patch_top_left),
                "patch_size": cfg.signal.patch_size,
                "period": cfg.signal.period,
                "amplitude": cfg.signal.amplitude,
            }
            (video_dir / "signal.json").write_text(
                json.dumps(info, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            raw_score = float(np.round(video_rng.uniform(0.33, 10.0), 2)) if positive else 0.0
            records.append(
                VideoRecord(
                    video_id=video_id,
                    subject_id=subject_id,
                    domain_id=domain_id,
                    phase=Phase.POST_INDUCTION if positive else Phase.BASELINE,
                    raw_score=raw_score,
                    frame_dir=video_id,
                    n_frames=cfg.frames_per_video,
                    fps_extracted=2.0,
                )
            )
    manifest = DatasetManifest(records=tuple(records), domain_id=domain_id, base_dir=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def oracle_clip_labels(manifest: DatasetManifest, clips: Sequence[Clip]) -> list[bool]:
    """True per-clip signal presence, from the generator's saved burst windows.

    A clip counts as signal-bearing when at least half its frames fall inside
    burst windows; base-aligned windows therefore match the planted set
    exactly. Only available for generated data.
    """
    infos: dict[str, dict] = {}
    labels = []
    for clip in clips:
        if clip.video_id not in infos:
            rec = manifest.by_video(clip.video_id)
            video_dir = manifest.frame_dir(rec)
            infos[clip.video_id] = json.loads((video_dir / "signal.json").read_text())
        info = infos[clip.video_id]
        burst = np.zeros(manifest.by_video(clip.video_id).n_frames, dtype=bool)
        for start in info["burst_starts"]:
            burst[start : start + info["w_L"]] = True
        overlap = int(burst[clip.start_frame : clip.start_frame + clip.length].sum())
        labels.append(overlap >= clip.length / 2)
    return labels


def patch_mask(manifest: DatasetManifest, video_id: str) -> np.ndarray:
    """Boolean (H, W) mask of the signal patch region for a generated video."""
    rec = manifest.by_video(video_id)
    video_dir = manifest.frame_dir(rec)
    info = json.loads((video_dir / "signal.json").read_text())
    first = np.asarray(Image.open(video_dir / f"{frame_filename(0)}.png"))
    mask = np.zeros(first.shape[:2], dtype=bool)
    r0, c0 = info["patch_top_left"]
    p = info["patch_size"]
    mask[r0 : r0 + p, c0 : c0 + p] = True
    return mask
