"""Core data model: video records, binary labels, clips, manifests, predictions.

Everything here is an immutable value object; instances can be shared freely
across parallel workers.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence


class Phase(str, enum.Enum):
    PRE_INDUCTION = "pre_induction"
    POST_INDUCTION = "post_induction"
    BASELINE = "baseline"


class BinaryLabel(enum.IntEnum):
    NO_PAIN = 0
    PAIN = 1


class ValidationError(ValueError):
    """A record violates a field invariant."""


class ManifestError(ValueError):
    """A manifest file cannot be parsed; message names the offending line."""


MANIFEST_COLUMNS = (
    "video_id",
    "subject_id",
    "domain_id",
    "phase",
    "raw_score",
    "frame_dir",
    "n_frames",
    "fps_extracted",
)


@dataclass(frozen=True)
class VideoRecord:
    """One labeled multi-minute video.

    ``raw_score`` holds either a composite pain score (0-39 scale, mean of
    rater scores) or, for induction-labeled domains, a 0/1 induction flag.
    """

    video_id: str
    subject_id: str
    domain_id: str
    phase: Phase
    raw_score: float
    frame_dir: str
    n_frames: int
    fps_extracted: float

    def __post_init__(self):
        if not self.video_id:
            raise ValidationError("video_id must be non-empty")
        if not self.subject_id:
            raise ValidationError("subject_id must be non-empty")
        if self.n_frames < 1:
            raise ValidationError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.raw_score < 0:
            raise ValidationError(f"raw_score must be >= 0, got {self.raw_score}")
        if self.fps_extracted <= 0:
            raise ValidationError(f"fps_extracted must be > 0, got {self.fps_extracted}")
        if not isinstance(self.phase, Phase):
            object.__setattr__(self, "phase", Phase(self.phase))


@dataclass(frozen=True)
class Clip:
    """A fixed-length window of frames carrying an inherited video-level label."""

    video_id: str
    start_frame: int
    length: int
    label: BinaryLabel
    is_resampled: bool = False

    def __post_init__(self):
        if self.start_frame < 0:
            raise ValidationError(f"start_frame must be >= 0, got {self.start_frame}")
        if self.length < 1:
            raise ValidationError(f"length must be >= 1, got {self.length}")


@dataclass(frozen=True)
class ClipPrediction:
    """Per-clip class probabilities; ``confidence`` is the predicted class prob."""

    clip: Clip
    subject_id: str
    prob_pain: float
    prob_no_pain: float

    def __post_init__(self):
        if abs(self.prob_pain + self.prob_no_pain - 1.0) > 1e-6:
            raise ValidationError(
                f"probabilities must sum to 1, got {self.prob_pain + self.prob_no_pain}"
            )

    @property
    def predicted(self) -> BinaryLabel:
        return BinaryLabel.PAIN if self.prob_pain > self.prob_no_pain else BinaryLabel.NO_PAIN

    @property
    def confidence(self) -> float:
        return max(self.prob_pain, self.prob_no_pain)


@dataclass(frozen=True)
class DatasetManifest:
    """An ordered collection of video records forming one dataset (or split)."""

    records: tuple[VideoRecord, ...]
    domain_id: str
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise ValidationError(f"duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)

    @property
    def subjects(self) -> frozenset[str]:
        return frozenset(r.subject_id for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_video(self, video_id: str) -> VideoRecord:
        for rec in self.records:
            if rec.video_id == video_id:
                return rec
        raise KeyError(video_id)

    def subset(self, subjects: Iterable[str]) -> "DatasetManifest":
        keep = set(subjects)
        return replace(self, records=tuple(r for r in self.records if r.subject_id in keep))

    def frame_dir(self, record: VideoRecord) -> Path:
        """Resolve a record's frame directory, relative paths against base_dir."""
        p = Path(record.frame_dir)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


def binarize_label(record: VideoRecord) -> BinaryLabel:
    """Binarize a video's weak label.

    Pain iff the video was recorded post induction with a score (or induction
    flag) above zero. Baseline and pre-induction recordings, and zero scores,
    are no-pain.
    """
    if record.raw_score < 0:
        raise ValidationError(f"raw_score must be >= 0, got {record.raw_score}")
    if record.phase is Phase.POST_INDUCTION and record.raw_score > 0:
        return BinaryLabel.PAIN
    return BinaryLabel.NO_PAIN


def exclude_unresponsive_subjects(manifest: DatasetManifest) -> DatasetManifest:
    """Drop subjects whose post-induction recordings never scored above zero.

    Subjects with no post-induction recordings at all are kept; only a subject
    that was induced but never responded is removed. Returns a new manifest,
    the input is untouched.
    """
    drop = set()
    for subject in manifest.subjects:
        post = [
            r
            for r in manifest.records
            if r.subject_id == subject and r.phase is Phase.POST_INDUCTION
        ]
        if post and all(r.raw_score == 0 for r in post):
            drop.add(subject)
    return replace(
        manifest,
        records=tuple(r for r in manifest.records if r.subject_id not in drop),
    )


def _format_float(x: float) -> str:
    """Shortest round-trip decimal form, integers without trailing '.0'."""
    if x == int(x):
        return str(int(x))
    return repr(x)


def load_manifest(path: str | Path, domain_id: str | None = None) -> DatasetManifest:
    """Read a manifest CSV (schema in MANIFEST_COLUMNS, '.' decimal point)."""
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: line 1: empty file, expected header") from None
        if header != list(MANIFEST_COLUMNS):
            missing = set(MANIFEST_COLUMNS) - set(header)
            if missing:
                raise ManifestError(
                    f"{path}: line 1: missing column(s) {sorted(missing)}"
                )
            raise ManifestError(f"{path}: line 1: bad header {header}")
        seen: set[str] = set()
        domains: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path}: line {lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}"
                )
            vals = dict(zip(MANIFEST_COLUMNS, row))
            if vals["video_id"] in seen:
                raise ManifestError(
                    f"{path}: line {lineno}: duplicate video_id {vals['video_id']!r}"
                )
            seen.add(vals["video_id"])
            try:
                phase = Phase(vals["phase"])
            except ValueError:
                raise ManifestError(
                    f"{path}: line {lineno}: unknown phase {vals['phase']!r}"
                ) from None
            try:
                rec = VideoRecord(
                    video_id=vals["video_id"],
                    subject_id=vals["subject_id"],
                    domain_id=vals["domain_id"],
                    phase=phase,
                    raw_score=float(vals["raw_score"]),
                    frame_dir=vals["frame_dir"],
                    n_frames=int(vals["n_frames"]),
                    fps_extracted=float(vals["fps_extracted"]),
                )
            except (ValueError, ValidationError) as exc:
                raise ManifestError(f"{path}: line {lineno}: {exc}") from None
            records.append(rec)
            domains.append(rec.domain_id)
    if domain_id is None:
        domain_id = domains[0] if len(set(domains)) == 1 else "+".join(sorted(set(domains)))
    return DatasetManifest(records=tuple(records), domain_id=domain_id, base_dir=path.parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest CSV; save -> load -> save is byte-stable."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for rec in manifest.records:
        writer.writerow(
            [
                rec.video_id,
                rec.subject_id,
                rec.domain_id,
                rec.phase.value,
                _format_float(rec.raw_score),
                rec.frame_dir,
                rec.n_frames,
                _format_float(rec.fps_extracted),
            ]
        )
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def frame_filename(index: int) -> str:
    """Zero-padded frame file stem for deterministic ordering."""
    return f"{index:06d}"


def save_clips(clips: Sequence[Clip], path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["video_id", "start_frame", "length", "label", "is_resampled"])
    for c in clips:
        writer.writerow([c.video_id, c.start_frame, c.length, int(c.label), int(c.is_resampled)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_clips(path: str | Path) -> list[Clip]:
    clips = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            clips.append(
                Clip(
                    video_id=row["video_id"],
                    start_frame=int(row["start_frame"]),
                    length=int(row["length"]),
                    label=BinaryLabel(int(row["label"])),
                    is_resampled=bool(int(row["is_resampled"])),
                )
            )
    return clips
