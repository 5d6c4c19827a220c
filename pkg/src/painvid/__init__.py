"""Weakly labeled video pain recognition: two-stream ConvLSTM training,
cross-domain transfer, MIL inference filtering and saliency reporting."""

__version__ = "0.1.0"

from .core import (
    BinaryLabel,
    Clip,
    ClipPrediction,
    DatasetManifest,
    Phase,
    VideoRecord,
    binarize_label,
    exclude_unresponsive_subjects,
    load_manifest,
    save_manifest,
)
from .sampling import WindowPlan, extract_clips

__all__ = [
    "BinaryLabel",
    "Clip",
    "ClipPrediction",
    "DatasetManifest",
    "Phase",
    "VideoRecord",
    "binarize_label",
    "exclude_unresponsive_subjects",
    "load_manifest",
    "save_manifest",
    "WindowPlan",
    "extract_clips",
]
