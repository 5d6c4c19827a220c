"""Run directories: a self-contained record of one command's inputs and outputs.

Each run holds a copy of the effective config, a content hash of its inputs,
results, logs and any artifacts. Result files contain no timestamps, so a
rerun with the same seed reproduces them byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

from .training import TrainHistory

logger = logging.getLogger(__name__)


def git_blob_sha1(data: bytes) -> str:
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def hash_inputs(paths: Iterable[str | Path]) -> str:
    """Combined content hash: one git-style blob hash per file, digested in
    sorted path order."""
    lines = []
    for path in sorted(Path(p) for p in paths):
        lines.append(f"{git_blob_sha1(path.read_bytes())}  {path.name}")
    return hashlib.sha1("\n".join(lines).encode()).hexdigest()


class RunDir:
    def __init__(self, path: str | Path, exist_ok: bool = True):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=exist_ok)

    def file(self, name: str) -> Path:
        return self.path / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.file(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        return p

    def write_json(self, name: str, payload) -> Path:
        return self.write_text(name, json.dumps(payload, sort_keys=True, indent=2) + "\n")

    def write_config(self, toml_text: str) -> Path:
        return self.write_text("config.toml", toml_text)

    def write_inputs_hash(self, paths: Sequence[str | Path]) -> Path:
        return self.write_text("inputs.sha1", hash_inputs(paths) + "\n")

    def write_history(self, history: TrainHistory, name: str = "history.csv") -> Path:
        lines = ["epoch,train_loss,val_f1"]
        for rec in history.records:
            lines.append(f"{rec.epoch},{rec.train_loss!r},{rec.val_f1!r}")
        return self.write_text(name, "\n".join(lines) + "\n")
