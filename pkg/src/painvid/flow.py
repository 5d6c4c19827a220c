"""Dense optical flow stream: Horn-Schunck estimation and 8-bit image encoding.

The estimator is deliberately simple and deterministic. Precomputed flow from
an external tool can be dropped into the same <video>/flow/ layout instead;
the loader does not care who produced the images.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import convolve, correlate

from .core import DatasetManifest, frame_filename
from .sampling import FrameIOError, _read_frame

# Weighted neighborhood average from the classic iteration scheme.
_AVG_KERNEL = np.array(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]]
)


@dataclass(frozen=True)
class FlowParams:
    alpha: float = 0.1
    n_iters: int = 120


@dataclass(frozen=True)
class FlowEncoding:
    """clip_range is the displacement (px/frame) mapped to the range endpoints."""

    clip_range: float
    channels: int = 3

    def __post_init__(self):
        if self.clip_range <= 0:
            raise ValueError(f"clip_range must be > 0, got {self.clip_range}")
        if self.channels not in (2, 3):
            raise ValueError(f"channels must be 2 or 3, got {self.channels}")


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray


def default_encoding(height: int, width: int, channels: int = 3) -> FlowEncoding:
    """8 px/frame at 224-pixel frames, scaled proportionally to frame size."""
    return FlowEncoding(clip_range=8.0 * min(height, width) / 224.0, channels=channels)


def _to_gray(frame: np.ndarray) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114
    if arr.max() > 1.5:
        arr = arr / 255.0
    return arr


def estimate_flow(frame_t: np.ndarray, frame_t1: np.ndarray, params: FlowParams = FlowParams()) -> FlowField:
    """Horn-Schunck flow from frame_t to frame_t1, in pixels per frame.

    Positive u points right (increasing column), positive v down.
    """
    a = _to_gray(frame_t)
    b = _to_gray(frame_t1)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")

    # correlation keeps the stencil orientation (forward differences)
    kx = 0.25 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
    ky = 0.25 * np.array([[-1.0, -1.0], [1.0, 1.0]])
    kt = 0.25 * np.ones((2, 2))
    ex = correlate(a, kx, mode="nearest") + correlate(b, kx, mode="nearest")
    ey = correlate(a, ky, mode="nearest") + correlate(b, ky, mode="nearest")
    et = correlate(b, kt, mode="nearest") - correlate(a, kt, mode="nearest")

    u = np.zeros_like(a)
    v = np.zeros_like(a)
    denom = params.alpha**2 + ex**2 + ey**2
    for _ in range(params.n_iters):
        u_avg = convolve(u, _AVG_KERNEL, mode="nearest")
        v_avg = convolve(v, _AVG_KERNEL, mode="nearest")
        der = (ex * u_avg + ey * v_avg + et) / denom
        u = u_avg - ex * der
        v = v_avg - ey * der
    return FlowField(u=u, v=v)


def encode_flow(field: FlowField, enc: FlowEncoding) -> np.ndarray:
    """Map displacements to a (H, W, channels) uint8 image.

    u and v are clipped to +-clip_range and mapped affinely so zero motion
    lands mid-range; the optional third channel is the clipped magnitude.
    """
    r = enc.clip_range
    u8u = np.round((np.clip(field.u, -r, r) + r) / (2 * r) * 255.0)
    u8v = np.round((np.clip(field.v, -r, r) + r) / (2 * r) * 255.0)
    planes = [u8u, u8v]
    if enc.channels == 3:
        mag = np.hypot(field.u, field.v)
        planes.append(np.round(np.clip(mag, 0, r) / r * 255.0))
    return np.stack(planes, axis=-1).astype(np.uint8)


def decode_flow(img: np.ndarray) -> np.ndarray:
    """Loader-side mapping of stored 8-bit flow images to the [0, 1] range."""
    return np.asarray(img, dtype=np.float32) / 255.0


def decode_displacement(img: np.ndarray, enc: FlowEncoding) -> FlowField:
    """Invert encode_flow back to displacement units (quantized)."""
    r = enc.clip_range
    scaled = np.asarray(img, dtype=np.float64) / 255.0 * (2 * r) - r
    return FlowField(u=scaled[..., 0], v=scaled[..., 1])


def _flow_sidecar(params: FlowParams, enc: FlowEncoding) -> str:
    payload = {"algorithm": "horn_schunck", **asdict(params), **asdict(enc)}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def precompute_flow_stream(
    manifest: DatasetManifest,
    params: FlowParams = FlowParams(),
    enc: FlowEncoding | None = None,
) -> None:
    """Write one flow image per RGB frame for every video in the manifest.

    The final frame has no successor, so it repeats the previous flow image and
    both streams stay aligned in length. Re-running produces identical bytes.
    """
    for rec in manifest.records:
        frame_dir = manifest.frame_dir(rec)
        out_dir = frame_dir / "flow"
        out_dir.mkdir(parents=True, exist_ok=True)
        frames = [
            _read_frame(frame_dir / f"{frame_filename(i)}.png") for i in range(rec.n_frames)
        ]
        if enc is None:
            h, w = frames[0].shape[:2]
            video_enc = default_encoding(h, w)
        else:
            video_enc = enc
        encoded: list[np.ndarray] = []
        for i in range(rec.n_frames - 1):
            field = estimate_flow(frames[i], frames[i + 1], params)
            encoded.append(encode_flow(field, video_enc))
        if not encoded:  # single-frame video: zero motion
            h, w = frames[0].shape[:2]
            zero = FlowField(u=np.zeros((h, w)), v=np.zeros((h, w)))
            encoded.append(encode_flow(zero, video_enc))
        else:
            encoded.append(encoded[-1])
        for i, img in enumerate(encoded):
            Image.fromarray(img).save(out_dir / f"{frame_filename(i)}.png")
        (out_dir / "flow_params.json").write_text(
            _flow_sidecar(params, video_enc), encoding="utf-8"
        )
