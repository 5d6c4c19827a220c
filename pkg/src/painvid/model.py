"""Two-stream convolutional LSTM classifier and a frozen-backbone alternative.

Each stream stacks four blocks of (ConvLSTM layer -> 2x2 max pool -> batch
norm). The final-timestep maps of the two streams are fused by elementwise
addition, flattened and fed to a two-class affine head. The gate transforms of
the cell are convolutions instead of matrix multiplications, so spatial
structure survives the recurrence.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

CHECKPOINT_FORMAT = "clstm2.v1"


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CLSTM2Config:
    n_blocks: int = 4
    channels_per_block: tuple[int, ...] = (32, 32, 32, 32)
    kernel_size: int = 5
    pool_factor: int = 2
    input_hw: tuple[int, int] = (224, 224)
    seq_len: int = 10
    n_classes: int = 2
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels_per_block", tuple(self.channels_per_block))
        object.__setattr__(self, "input_hw", tuple(self.input_hw))
        if len(self.channels_per_block) != self.n_blocks:
            raise ModelConfigError(
                f"need {self.n_blocks} channel counts, got {self.channels_per_block}"
            )
        divisor = self.pool_factor**self.n_blocks
        h, w = self.input_hw
        if h % divisor or w % divisor:
            raise ModelConfigError(
                f"input {h}x{w} not divisible by pool_factor^n_blocks = {divisor}"
            )

    @property
    def prefusion_hw(self) -> tuple[int, int]:
        divisor = self.pool_factor**self.n_blocks
        return self.input_hw[0] // divisor, self.input_hw[1] // divisor


class ConvLSTMCell(nn.Module):
    """One convolutional LSTM cell with same-padding gate convolutions.

    Gate pre-activations come from a single fused convolution over the
    concatenated (input, hidden) maps; the output channels split into the
    input, forget, cell and output gates in that order.
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(
            in_channels + hidden_channels,
            4 * hidden_channels,
            kernel_size,
            padding=kernel_size // 2,
        )
        with torch.no_grad():  # classic forget-gate bias init
            self.gates.bias[hidden_channels : 2 * hidden_channels].fill_(1.0)

    def forward(
        self, x: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor] | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape[1] != self.in_channels:
            raise ModelConfigError(
                f"expected {self.in_channels} input channels, got {x.shape[1]}"
            )
        if state is None:
            zeros = x.new_zeros(x.shape[0], self.hidden_channels, *x.shape[2:])
            state = (zeros, zeros)
        h_prev, c_prev = state
        pre = self.gates(torch.cat([x, h_prev], dim=1))
        i, f, g, o = pre.chunk(4, dim=1)
        i = torch.sigmoid(i)
        f = torch.sigmoid(f)
        g = torch.tanh(g)
        o = torch.sigmoid(o)
        c = f * c_prev + i * g
        h = o * torch.tanh(c)
        return h, c


def convlstm_cell_step(
    x_t: torch.Tensor,
    h_prev: torch.Tensor,
    c_prev: torch.Tensor,
    cell: ConvLSTMCell,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Single recurrence step; spatial size is preserved by same padding."""
    return cell(x_t, (h_prev, c_prev))


class _StreamBlock(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int, pool: int):
        super().__init__()
        self.cell = ConvLSTMCell(in_channels, hidden_channels, kernel_size)
        self.pool = nn.MaxPool2d(pool)
        self.norm = nn.BatchNorm2d(hidden_channels)

    def forward(self, seq: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, T, C, H, W) -> pooled+normalized sequence plus raw hidden states."""
        b, t = seq.shape[:2]
        state = None
        hidden = []
        for step in range(t):
            h, c = self.cell(seq[:, step], state)
            state = (h, c)
            hidden.append(h)
        raw = torch.stack(hidden, dim=1)
        flat = raw.reshape(b * t, *raw.shape[2:])
        out = self.norm(self.pool(flat))
        return out.reshape(b, t, *out.shape[1:]), raw


class TwoStreamConvLSTM(nn.Module):
    """The full two-stream model; ``forward`` returns logits of shape (B, n_classes)."""

    def __init__(self, config: CLSTM2Config):
        super().__init__()
        self.config = config
        self.rgb_blocks = self._make_stream(config)
        self.flow_blocks = self._make_stream(config)
        h, w = config.prefusion_hw
        self.head = nn.Linear(config.channels_per_block[-1] * h * w, config.n_classes)

    @staticmethod
    def _make_stream(config: CLSTM2Config) -> nn.ModuleList:
        blocks = []
        in_ch = config.in_channels
        for ch in config.channels_per_block:
            blocks.append(_StreamBlock(in_ch, ch, config.kernel_size, config.pool_factor))
            in_ch = ch
        return nn.ModuleList(blocks)

    @staticmethod
    def _to_btchw(clip: torch.Tensor | np.ndarray) -> torch.Tensor:
        x = torch.as_tensor(clip, dtype=torch.float32)
        if x.dim() == 4:  # (T, H, W, C) -> add batch
            x = x.unsqueeze(0)
        if x.dim() != 5:
            raise ModelConfigError(f"expected a 4D or 5D clip tensor, got shape {tuple(x.shape)}")
        return x.permute(0, 1, 4, 2, 3).contiguous()

    def _run_stream(
        self, blocks: nn.ModuleList, seq: torch.Tensor, capture_block: int | None
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        captured = None
        for idx, block in enumerate(blocks):
            seq, raw = block(seq)
            if idx == capture_block:
                captured = raw
        return seq[:, -1], captured  # final-timestep map

    def fused_features(
        self,
        rgb_clip: torch.Tensor | np.ndarray,
        flow_clip: torch.Tensor | np.ndarray,
        capture: tuple[str, int] | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        rgb = self._to_btchw(rgb_clip)
        flow = self._to_btchw(flow_clip)
        divisor = self.config.pool_factor**self.config.n_blocks
        if rgb.shape[-2] % divisor or rgb.shape[-1] % divisor:
            raise ModelConfigError(
                f"input {rgb.shape[-2]}x{rgb.shape[-1]} not divisible by {divisor}"
            )
        stream_name, block_idx = capture if capture is not None else (None, None)
        rgb_map, rgb_raw = self._run_stream(
            self.rgb_blocks, rgb, block_idx if stream_name == "rgb" else None
        )
        flow_map, flow_raw = self._run_stream(
            self.flow_blocks, flow, block_idx if stream_name == "flow" else None
        )
        captured = rgb_raw if stream_name == "rgb" else flow_raw
        return rgb_map + flow_map, captured

    def forward(
        self,
        rgb_clip: torch.Tensor | np.ndarray,
        flow_clip: torch.Tensor | np.ndarray,
    ) -> torch.Tensor:
        fused, _ = self.fused_features(rgb_clip, flow_clip)
        return self.head(fused.flatten(1))

    def forward_with_hidden(
        self,
        rgb_clip: torch.Tensor | np.ndarray,
        flow_clip: torch.Tensor | np.ndarray,
        stream: str = "rgb",
        block: int | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Logits plus the chosen block's per-timestep hidden states (pre-pool)."""
        if stream not in ("rgb", "flow"):
            raise ModelConfigError(f"unknown stream {stream!r}")
        if block is None:
            block = self.config.n_blocks - 1
        if not 0 <= block < self.config.n_blocks:
            raise ModelConfigError(f"block index {block} out of range")
        fused, captured = self.fused_features(rgb_clip, flow_clip, capture=(stream, block))
        return self.head(fused.flatten(1)), captured

    @torch.no_grad()
    def predict_proba(
        self,
        rgb_clip: torch.Tensor | np.ndarray,
        flow_clip: torch.Tensor | np.ndarray,
    ) -> torch.Tensor:
        """Class probabilities (softmax over the head logits)."""
        return torch.softmax(self.forward(rgb_clip, flow_clip), dim=-1)


@dataclass(frozen=True)
class BackboneHeadConfig:
    feature_dim: int
    n_classes: int = 2
    backbone_frozen: bool = True
    with_scale: bool = False


class BackboneHeadModel(nn.Module):
    """A frozen feature extractor with a retrainable affine classification head.

    ``with_scale`` adds one multiplicative term per class on the logits
    (2 * feature_dim + 2 head parameters become 4,100 at feature_dim 2048).
    """

    def __init__(self, config: BackboneHeadConfig, backbone: nn.Module | None = None):
        super().__init__()
        self.config = config
        self.backbone = backbone
        self.head = nn.Linear(config.feature_dim, config.n_classes)
        if config.with_scale:
            self.scale = nn.Parameter(torch.ones(config.n_classes))
        else:
            self.scale = None
        if backbone is not None and config.backbone_frozen:
            for p in backbone.parameters():
                p.requires_grad_(False)

    def head_parameters(self):
        yield from self.head.parameters()
        if self.scale is not None:
            yield self.scale

    def forward(self, features_or_clip: torch.Tensor) -> torch.Tensor:
        x = torch.as_tensor(features_or_clip, dtype=torch.float32)
        if self.backbone is not None and x.dim() > 2:
            x = self.backbone(x)
        if x.shape[-1] != self.config.feature_dim:
            raise ModelConfigError(
                f"expected feature dim {self.config.feature_dim}, got {x.shape[-1]}"
            )
        logits = self.head(x)
        if self.scale is not None:
            logits = logits * self.scale
        return logits

    def predict_proba(self, features_or_clip: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return torch.softmax(self.forward(features_or_clip), dim=-1)


class ToyBackbone3D(nn.Module):
    """A tiny fixed 3D-conv feature extractor standing in for a pretrained video
    backbone in tests. Weights are seeded, never trained."""

    def __init__(self, feature_dim: int = 64, in_channels: int = 3, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv3d(in_channels, 8, 3, stride=2, padding=1)
        self.conv2 = nn.Conv3d(8, 16, 3, stride=2, padding=1)
        self.proj = nn.Linear(16, feature_dim)
        for p in self.parameters():
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.1)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        # clip: (B, T, H, W, C) -> (B, C, T, H, W)
        x = clip.permute(0, 4, 1, 2, 3)
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        x = x.mean(dim=(2, 3, 4))
        return self.proj(x)


def count_parameters(model: nn.Module) -> int:
    """Number of trainable parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_breakdown(model: nn.Module) -> dict[str, int]:
    """Trainable-parameter count per top-level child, plus the total."""
    out: dict[str, int] = {}
    for name, child in model.named_children():
        out[name] = count_parameters(child)
    out["total"] = count_parameters(model)
    return out


def _config_payload(model: nn.Module) -> dict:
    if isinstance(model, TwoStreamConvLSTM):
        return {"kind": "clstm2", "config": asdict(model.config)}
    if isinstance(model, BackboneHeadModel):
        return {"kind": "backbone_head", "config": asdict(model.config)}
    raise ModelConfigError(f"cannot checkpoint a {type(model).__name__}")


def save_checkpoint(path: str | Path, model: nn.Module, meta: dict | None = None) -> None:
    """Write a single-file archive: config JSON plus named parameter arrays.

    Bytes are deterministic for identical model state and metadata.
    """
    payload = _config_payload(model)
    payload["format"] = CHECKPOINT_FORMAT
    payload["meta"] = meta or {}
    names = sorted(model.state_dict().keys())
    payload["parameters"] = names
    state = model.state_dict()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        def write(name: str, data: bytes):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, data)

        write("meta.json", json.dumps(payload, sort_keys=True, indent=2).encode())
        for name in names:
            buf = io.BytesIO()
            np.save(buf, state[name].detach().cpu().numpy())
            write(f"params/{name}.npy", buf.getvalue())


def load_checkpoint(path: str | Path, backbone: nn.Module | None = None) -> tuple[nn.Module, dict]:
    """Rebuild a model (and its metadata) from a checkpoint archive."""
    with zipfile.ZipFile(path) as zf:
        payload = json.loads(zf.read("meta.json"))
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ModelConfigError(
                f"unsupported checkpoint format {payload.get('format')!r}"
            )
        if payload["kind"] == "clstm2":
            model: nn.Module = TwoStreamConvLSTM(CLSTM2Config(**payload["config"]))
        elif payload["kind"] == "backbone_head":
            model = BackboneHeadModel(BackboneHeadConfig(**payload["config"]), backbone)
        else:
            raise ModelConfigError(f"unknown model kind {payload['kind']!r}")
        state = {}
        for name in payload["parameters"]:
            arr = np.load(io.BytesIO(zf.read(f"params/{name}.npy")))
            state[name] = torch.as_tensor(arr)
        model.load_state_dict(state)
    return model, payload["meta"]


def state_checksum(model: nn.Module) -> str:
    """Hex digest over all state tensors; used to assert zero-update paths."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(model.state_dict().keys()):
        h.update(name.encode())
        h.update(model.state_dict()[name].detach().cpu().numpy().tobytes())
    return h.hexdigest()
