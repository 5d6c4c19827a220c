"""Experiment configuration: a TOML file with [data], [model], [train],
[transfer], [mil] and [synth] sections, parsed strictly.

Every named pipeline constant (window length/stride 10, 2 fps extraction,
224 or 128 resolution, batch size 2 or 8, 200 epochs with 50 patience, MIL
top fractions 0.05/0.01) surfaces as a key with that default. Unknown keys or
sections are errors, as are values of the wrong type.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import BackboneHeadConfig, CLSTM2Config
from .sampling import WindowPlan
from .synth import DomainStyle, SignalSpec, SynthConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    manifest: str = ""
    w_L: int = 10
    w_S: int = 10
    fps: float = 2.0
    flow_channels: int = 3
    flow_clip_range: float = 0.0  # 0 = scale 8 px at 224 proportionally
    flow_alpha: float = 0.1
    flow_iters: int = 120


@dataclass
class ModelSection:
    kind: str = "clstm2"
    channels_per_block: list = field(default_factory=lambda: [32, 32, 32, 32])
    kernel_size: int = 5
    input_height: int = 224
    input_width: int = 224
    seq_len: int = 10
    n_classes: int = 2
    feature_dim: int = 2048
    with_scale: bool = True
    backbone_frozen: bool = True


@dataclass
class TrainSection:
    max_epochs: int = 200
    early_stop_patience: int = 50
    batch_size: int = 2
    flip_prob: float = 0.5
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    seed: int = 0
    repeats: int = 5


@dataclass
class TransferSection:
    epochs: int = 0  # 0 = derive via epoch scaling
    repeats: int = 3


@dataclass
class MILSection:
    k_fractions: list = field(default_factory=lambda: [0.05, 0.01])


@dataclass
class SynthSection:
    domain: str = "dense"
    n_subjects: int = 4
    videos_per_subject: int = 2
    frames_per_video: int = 100
    frame_height: int = 32
    frame_width: int = 32
    burst_fraction: float = 1.0
    patch_size: int = 10
    patch_row: int = 3
    patch_col: int = 3
    period: int = 8
    amplitude: float = 0.8
    seed: int = 0


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    mil: MILSection = field(default_factory=MILSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def window_plan(self) -> WindowPlan:
        return WindowPlan(w_L=self.data.w_L, w_S=self.data.w_S)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epochs=self.train.max_epochs,
            early_stop_patience=self.train.early_stop_patience,
            batch_size=self.train.batch_size,
            flip_prob=self.train.flip_prob,
            learning_rate=self.train.learning_rate,
            optimizer=self.train.optimizer,
            seed=self.train.seed,
        )

    def model_config(self):
        if self.model.kind == "clstm2":
            return CLSTM2Config(
                channels_per_block=tuple(self.model.channels_per_block),
                kernel_size=self.model.kernel_size,
                input_hw=(self.model.input_height, self.model.input_width),
                seq_len=self.model.seq_len,
                n_classes=self.model.n_classes,
            )
        if self.model.kind == "backbone_head":
            return BackboneHeadConfig(
                feature_dim=self.model.feature_dim,
                n_classes=self.model.n_classes,
                backbone_frozen=self.model.backbone_frozen,
                with_scale=self.model.with_scale,
            )
        raise ConfigError(f"unknown model kind {self.model.kind!r}")

    def synth_config(self) -> SynthConfig:
        s = self.synth
        return SynthConfig(
            n_subjects=s.n_subjects,
            videos_per_subject=s.videos_per_subject,
            frames_per_video=s.frames_per_video,
            frame_hw=(s.frame_height, s.frame_width),
            burst_fraction=s.burst_fraction,
            signal=SignalSpec(
                patch_size=s.patch_size,
                patch_top_left=(s.patch_row, s.patch_col),
                period=s.period,
                amplitude=s.amplitude,
            ),
            window=WindowPlan(w_L=self.data.w_L, w_S=self.data.w_S),
            seed=s.seed,
        )


_SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "train": TrainSection,
    "transfer": TransferSection,
    "mil": MILSection,
    "synth": SynthSection,
}


def _coerce(section: str, key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"[{section}] {key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"[{section}] {key}: expected a list, got {value!r}")
        return value
    raise ConfigError(f"[{section}] {key}: unsupported value {value!r}")


def _apply_section(cfg_section, section_name: str, payload: dict):
    known = {f.name for f in fields(cfg_section)}
    for key, value in payload.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
        default = getattr(cfg_section, key)
        setattr(cfg_section, key, _coerce(section_name, key, value, default))


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse a TOML experiment config, rejecting unknown sections and keys.

    ``overrides`` are "section.key=value" strings applied after the file.
    """
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    cfg = ExperimentConfig()
    for section_name, payload in raw.items():
        if section_name not in _SECTIONS:
            raise ConfigError(f"unknown section [{section_name}]")
        if not isinstance(payload, dict):
            raise ConfigError(f"[{section_name}] must be a table")
        _apply_section(getattr(cfg, section_name), section_name, payload)
    for item in overrides or []:
        apply_override(cfg, item)
    return cfg


def apply_override(cfg: ExperimentConfig, item: str) -> None:
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    dotted, value = item.split("=", 1)
    section_name, key = dotted.split(".", 1)
    if section_name not in _SECTIONS:
        raise ConfigError(f"unknown section {section_name!r} in override {item!r}")
    section = getattr(cfg, section_name)
    known = {f.name for f in fields(section)}
    if key not in known:
        raise ConfigError(f"unknown key {key!r} in override {item!r}")
    default = getattr(section, key)
    if isinstance(default, bool):
        parsed: object = value.lower() in ("1", "true", "yes")
    elif isinstance(default, int):
        parsed = int(value)
    elif isinstance(default, float):
        parsed = float(value)
    elif isinstance(default, list):
        parsed = [type(default[0])(v) if default else v for v in value.split(",")]
    else:
        parsed = value
    setattr(section, key, parsed)


def config_to_toml(cfg: ExperimentConfig) -> str:
    """Serialize back to TOML (used to copy the effective config into runs)."""
    lines = []
    for section_name in _SECTIONS:
        lines.append(f"[{section_name}]")
        section = getattr(cfg, section_name)
        for f in fields(section):
            value = getattr(section, f.name)
            if isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, str):
                rendered = f'"{value}"'
            elif isinstance(value, list):
                rendered = "[" + ", ".join(str(v) for v in value) + "]"
            else:
                rendered = repr(value)
            lines.append(f"{f.name} = {rendered}")
        lines.append("")
    return "\n".join(lines)
