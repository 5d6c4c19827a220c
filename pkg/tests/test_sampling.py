import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from painvid.core import BinaryLabel, Clip, DatasetManifest, Phase, VideoRecord
from painvid.sampling import (
    ConfigurationError,
    FrameIOError,
    WindowPlan,
    build_resample_plan,
    extract_clips,
    load_clip_frames,
    plan_base_windows,
    plan_resample_windows,
)


def enumerate_starts(n_frames, w_L, w_S, t_start):
    """Independent oracle: all s with s = t_start + k*w_S and s + w_L <= n."""
    return [s for s in range(t_start, max(n_frames, 0) + 1, w_S) if s + w_L <= n_frames]


P10 = WindowPlan(10, 10)


class TestWindows:
    def test_single_exact_window(self):
        assert plan_base_windows(10, P10) == [0]

    def test_three_windows(self):
        assert plan_base_windows(30, P10) == enumerate_starts(30, 10, 10, 0) == [0, 10, 20]

    def test_trailing_partial_dropped(self):
        assert plan_base_windows(29, P10) == enumerate_starts(29, 10, 10, 0) == [0, 10]

    def test_offset_start_is_half_window(self):
        assert P10.resample_start == 5

    def test_offset_windows(self):
        assert plan_resample_windows(30, P10) == enumerate_starts(30, 10, 10, 5) == [5, 15]

    def test_offset_no_room(self):
        assert plan_resample_windows(14, P10) == []

    def test_odd_window_length_rejected(self):
        with pytest.raises(ConfigurationError):
            plan_resample_windows(30, WindowPlan(9, 9))

    @given(st.integers(0, 300), st.integers(1, 20), st.integers(1, 20))
    @settings(max_examples=200, deadline=None)
    def test_enumeration_oracle(self, n, w_L, w_S):
        plan = WindowPlan(w_L, w_S)
        assert plan_base_windows(n, plan) == enumerate_starts(n, w_L, w_S, 0)
        if w_L % 2 == 0:
            assert plan_resample_windows(n, plan) == enumerate_starts(n, w_L, w_S, w_L // 2)


class TestResamplePlan:
    def test_basic_arithmetic(self):
        p = build_resample_plan(10, 4, 3)
        assert (p.n_resample, p.per_video_quota) == (6, 2)

    def test_balanced_input(self):
        p = build_resample_plan(4, 4, 5)
        assert (p.n_resample, p.per_video_quota) == (0, 0)

    def test_dataset_scale_counts(self):
        # clip counts from video durations at 2 fps with 10-frame windows:
        # 03:41:25 -> 13285 s -> 26570 frames -> 2657 clips;
        # 06:03:44 -> 21824 s -> 43648 frames -> 4364 clips
        assert (3 * 3600 + 41 * 60 + 25) * 2 // 10 == 2657
        assert (6 * 3600 + 3 * 60 + 44) * 2 // 10 == 4364
        p = build_resample_plan(2657, 4364, 60)
        assert (p.n_resample, p.per_video_quota) == (1707, 28)

    def test_zero_videos_rejected(self):
        with pytest.raises(ConfigurationError):
            build_resample_plan(1, 2, 0)


def make_manifest(lengths_pain, lengths_nopain):
    records = []
    for i, n in enumerate(lengths_pain):
        records.append(
            VideoRecord(f"p{i}", f"sp{i}", "D", Phase.POST_INDUCTION, 1.0, f"p{i}", n, 2.0)
        )
    for i, n in enumerate(lengths_nopain):
        records.append(
            VideoRecord(f"n{i}", f"sn{i}", "D", Phase.BASELINE, 0.0, f"n{i}", n, 2.0)
        )
    return DatasetManifest(records=tuple(records), domain_id="D")


class TestExtractClips:
    def test_balanced_split_has_no_resampling(self):
        m = make_manifest([30], [30])
        clips = extract_clips(m, "train", P10)
        assert not any(c.is_resampled for c in clips)
        assert len(clips) == 6

    def test_minor_video_offsets_added(self):
        # one 30-frame pain video (3 clips) vs 50-frame no-pain (5 clips):
        # quota = (5 - 3) // 1 = 2 offset windows
        m = make_manifest([30], [50])
        clips = extract_clips(m, "train", P10)
        pain = [c for c in clips if c.video_id == "p0"]
        assert [(c.start_frame, c.is_resampled) for c in pain] == [
            (0, False), (10, False), (20, False), (5, True), (15, True),
        ]

    def test_short_video_contributes_nothing(self):
        m = make_manifest([5], [30])
        clips = extract_clips(m, "train", P10)
        assert all(c.video_id != "p0" for c in clips)

    def test_bad_split_name(self):
        with pytest.raises(ConfigurationError):
            extract_clips(make_manifest([30], [30]), "eval", P10)

    def test_deterministic(self):
        m = make_manifest([30, 70, 20], [50, 90])
        assert extract_clips(m, "train", P10) == extract_clips(m, "train", P10)

    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_imbalance_bound_and_disjointness(self, seed):
        from manifest_gen import random_manifest

        m = random_manifest(np.random.default_rng(seed))
        clips = extract_clips(m, "train", P10)

        n_pain = sum(1 for c in clips if c.label == BinaryLabel.PAIN)
        n_nopain = len(clips) - n_pain
        base_pain = sum(
            1 for c in clips if not c.is_resampled and c.label == BinaryLabel.PAIN
        )
        base_nopain = sum(
            1 for c in clips if not c.is_resampled and c.label == BinaryLabel.NO_PAIN
        )
        minor_label = BinaryLabel.PAIN if base_pain <= base_nopain else BinaryLabel.NO_PAIN
        minor_videos = sum(
            1 for rec in m.records
            if (rec.phase == Phase.POST_INDUCTION) == (minor_label == BinaryLabel.PAIN)
        )
        assert abs(n_pain - n_nopain) <= minor_videos

        for c in clips:
            n_frames = m.by_video(c.video_id).n_frames
            assert c.start_frame + c.length <= n_frames
        base = {(c.video_id, c.start_frame) for c in clips if not c.is_resampled}
        off = {(c.video_id, c.start_frame) for c in clips if c.is_resampled}
        assert not base & off


class TestLoadFrames:
    def _write_frames(self, directory, n, hw=(16, 16)):
        directory.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(0)
        for i in range(n):
            arr = rng.integers(0, 255, size=(*hw, 3), dtype=np.uint8)
            Image.fromarray(arr).save(directory / f"{i:06d}.png")

    def test_shape_follows_config(self, tmp_path):
        self._write_frames(tmp_path / "v", 12, hw=(32, 32))
        clip = Clip("v", 0, 10, BinaryLabel.PAIN)
        arr = load_clip_frames(clip, "rgb", tmp_path / "v")
        assert arr.shape == (10, 32, 32, 3)
        assert arr.dtype == np.uint8

    def test_missing_frame_named(self, tmp_path):
        self._write_frames(tmp_path / "v", 5)
        clip = Clip("v", 0, 10, BinaryLabel.PAIN)
        with pytest.raises(FrameIOError, match="000005"):
            load_clip_frames(clip, "rgb", tmp_path / "v")

    def test_deterministic(self, tmp_path):
        self._write_frames(tmp_path / "v", 10)
        clip = Clip("v", 0, 10, BinaryLabel.PAIN)
        a = load_clip_frames(clip, "rgb", tmp_path / "v")
        b = load_clip_frames(clip, "rgb", tmp_path / "v")
        assert np.array_equal(a, b)
