"""Grad-CAM saliency over clip frames, rendered as triptych overlay sequences.

Saliency is computed on the RGB stream's final block by default: per timestep,
channel weights are the spatial mean of the class-score gradient at that
timestep's hidden activation, and the map is the ReLU of the weighted channel
sum, upsampled to the input resolution.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image

from .model import TwoStreamConvLSTM


class ExplainError(RuntimeError):
    pass


def grad_cam(
    model: TwoStreamConvLSTM,
    rgb_clip,
    flow_clip,
    target_class: int,
    stream: str = "rgb",
    block: int | None = None,
    upsample: bool = True,
) -> np.ndarray:
    """Per-timestep saliency maps (T, H, W), nonnegative by construction."""
    if not isinstance(model, TwoStreamConvLSTM):
        raise ExplainError("grad_cam needs a model that exposes per-block hidden states")
    model.eval()
    model.zero_grad(set_to_none=True)
    logits, hidden = model.forward_with_hidden(rgb_clip, flow_clip, stream=stream, block=block)
    if hidden is None:
        raise ExplainError(f"no stored activations for stream={stream!r} block={block!r}")
    if logits.shape[0] != 1:
        raise ExplainError("grad_cam explains one clip at a time")
    score = logits[0, target_class]
    grads = torch.autograd.grad(score, hidden)[0]  # (1, T, C, h, w)
    weights = grads.mean(dim=(3, 4), keepdim=True)
    cam = torch.relu((weights * hidden).sum(dim=2))  # (1, T, h, w)
    if upsample:
        h, w = np.asarray(rgb_clip).shape[-3:-1] if np.asarray(rgb_clip).ndim >= 4 else cam.shape[-2:]
        cam = torch.nn.functional.interpolate(
            cam.transpose(0, 1), size=(int(h), int(w)), mode="bilinear", align_corners=False
        ).transpose(0, 1)
    return cam[0].detach().numpy()


def _colorize(maps_norm: np.ndarray, colormap: str) -> np.ndarray:
    cmap = colormaps[colormap]
    return (cmap(maps_norm)[..., :3] * 255).astype(np.float64)


def render_overlays(
    rgb_clip: np.ndarray,
    flow_clip: np.ndarray,
    maps: np.ndarray,
    out_dir: str | Path,
    colormap: str = "jet",
    alpha: float = 0.45,
    gif_frame_ms: int = 1000,
) -> list[Path]:
    """Write one RGB | flow | overlay composite per frame, plus an animated GIF.

    The saliency alpha scales with the map value, so an all-zero map leaves
    the overlay panel exactly equal to the plain RGB frame. Output bytes are
    deterministic.
    """
    rgb = np.asarray(rgb_clip, dtype=np.uint8)
    flow = np.asarray(flow_clip, dtype=np.uint8)
    maps = np.asarray(maps, dtype=np.float64)
    if rgb.shape[0] != maps.shape[0]:
        raise ExplainError(
            f"{rgb.shape[0]} frames but {maps.shape[0]} saliency maps"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    peak = maps.max()
    norm = maps / peak if peak > 0 else np.zeros_like(maps)
    heat = _colorize(norm, colormap)

    paths = []
    composites = []
    for t in range(rgb.shape[0]):
        m = (alpha * norm[t])[..., None]
        overlay = np.round((1 - m) * rgb[t].astype(np.float64) + m * heat[t]).astype(np.uint8)
        flow_panel = flow[t]
        if flow_panel.ndim == 2:
            flow_panel = flow_panel[..., None].repeat(3, axis=-1)
        elif flow_panel.shape[-1] == 2:
            pad = np.full(flow_panel.shape[:2] + (1,), 128, dtype=np.uint8)
            flow_panel = np.concatenate([flow_panel, pad], axis=-1)
        sep = np.full((rgb.shape[1], 2, 3), 255, dtype=np.uint8)
        composite = np.concatenate([rgb[t], sep, flow_panel, sep, overlay], axis=1)
        composites.append(composite)
        path = out_dir / f"frame_{t}.png"
        Image.fromarray(composite).save(path)
        paths.append(path)
    frames = [Image.fromarray(c) for c in composites]
    gif_path = out_dir / "clip.gif"
    frames[0].save(
        gif_path,
        save_all=True,
        append_images=frames[1:],
        duration=gif_frame_ms,
        loop=0,
    )
    paths.append(gif_path)
    return paths
