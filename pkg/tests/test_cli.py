"""End-to-end CLI pipeline on a miniature synthetic dataset."""
import json
from pathlib import Path

import pytest

from painvid.cli import main
from painvid.fixtures import expert_study_path


CFG = """
[data]
w_L = 10
w_S = 10

[model]
kind = "clstm2"
channels_per_block = [2, 2, 3, 3]
kernel_size = 3
input_height = 16
input_width = 16
seq_len = 10

[train]
max_epochs = 2
early_stop_patience = 2
batch_size = 8
learning_rate = 0.001
seed = 0
repeats = 1

[transfer]
repeats = 1

[synth]
n_subjects = 3
videos_per_subject = 2
frames_per_video = 40
frame_height = 16
frame_width = 16
burst_fraction = 1.0
patch_size = 6
patch_row = 2
patch_col = 2
period = 8
amplitude = 0.8
seed = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cliwork")
    cfg_path = tmp / "exp.toml"
    cfg_path.write_text(CFG)
    assert main(["synth", "--config", str(cfg_path), "--out", str(tmp / "dense")]) == 0
    assert main([
        "synth", "--config", str(cfg_path), "--set", "synth.domain=sparse",
        "--set", "synth.burst_fraction=0.2", "--set", "synth.seed=5",
        "--out", str(tmp / "sparse"),
    ]) == 0
    for d in ("dense", "sparse"):
        assert main([
            "compute-flow", "--config", str(cfg_path),
            "--set", "data.flow_iters=10",
            "--manifest", str(tmp / d / "manifest.csv"),
        ]) == 0
    return tmp, cfg_path


class TestSynthAndFlow:
    def test_outputs_exist(self, workspace):
        tmp, _ = workspace
        assert (tmp / "dense" / "manifest.csv").exists()
        video_dirs = [p for p in (tmp / "dense").iterdir() if p.is_dir()]
        assert len(video_dirs) == 6
        assert (video_dirs[0] / "flow" / "000000.png").exists()


class TestTrainCV:
    def test_run_dir_contents_and_determinism(self, workspace):
        tmp, cfg_path = workspace
        args = [
            "train-cv", "--config", str(cfg_path),
            "--manifest", str(tmp / "dense" / "manifest.csv"),
        ]
        assert main(args + ["--out", str(tmp / "cv_a")]) == 0
        assert main(args + ["--out", str(tmp / "cv_b")]) == 0
        a, b = tmp / "cv_a", tmp / "cv_b"
        assert (a / "config.toml").exists()
        assert (a / "inputs.sha1").exists()
        result = json.loads((a / "result.json").read_text())
        assert result["n_folds"] == 3
        assert len(result["scores"]) == 3
        fold_dirs = sorted(p for p in a.iterdir() if p.is_dir())
        assert len(fold_dirs) == 3
        assert (fold_dirs[0] / "history.csv").exists()
        assert (fold_dirs[0] / "predictions.csv").exists()
        # bit-identical rerun
        assert (a / "result.json").read_bytes() == (b / "result.json").read_bytes()
        for fa, fb in zip(fold_dirs, sorted(p for p in b.iterdir() if p.is_dir())):
            assert (fa / "history.csv").read_bytes() == (fb / "history.csv").read_bytes()
            assert (fa / "predictions.csv").read_bytes() == (fb / "predictions.csv").read_bytes()


class TestFullAndTransfer:
    @pytest.fixture(scope="class")
    def full_run(self, workspace):
        tmp, cfg_path = workspace
        out = tmp / "full_dense"
        assert main([
            "train-full", "--config", str(cfg_path),
            "--manifest", str(tmp / "dense" / "manifest.csv"),
            "--epochs", "2", "--out", str(out),
        ]) == 0
        return out

    def test_checkpoint_written(self, full_run):
        assert (full_run / "checkpoint.zip").exists()

    def test_checkpoint_deterministic(self, workspace, full_run):
        tmp, cfg_path = workspace
        out2 = tmp / "full_dense2"
        assert main([
            "train-full", "--config", str(cfg_path),
            "--manifest", str(tmp / "dense" / "manifest.csv"),
            "--epochs", "2", "--out", str(out2),
        ]) == 0
        assert (full_run / "checkpoint.zip").read_bytes() == (out2 / "checkpoint.zip").read_bytes()

    def test_transfer_and_mil_eval(self, workspace, full_run):
        tmp, cfg_path = workspace
        out = tmp / "zs"
        assert main([
            "transfer", "--config", str(cfg_path), "--source", str(full_run),
            "--target", str(tmp / "sparse" / "manifest.csv"), "--out", str(out),
        ]) == 0
        payload = json.loads((out / "transfer_result.json").read_text())
        assert payload["mode"] == "zero_shot"
        assert payload["source_domain"] == "SYNTH_DENSE"
        assert payload["target_domain"] == "SYNTH_SPARSE"
        assert len(payload["per_subject"]) == 3
        assert (out / "predictions.csv").exists()

        mil_out = tmp / "mil"
        assert main([
            "mil-eval", "--config", str(cfg_path),
            "--predictions", str(out / "predictions.csv"),
            "--labels", str(tmp / "sparse" / "manifest.csv"),
            "--out", str(mil_out),
        ]) == 0
        rows = json.loads((mil_out / "video_level.json").read_text())
        assert [r["filter"] for r in rows] == ["no filter", "top 5%", "top 1%"]

    def test_transfer_same_domain_fails(self, workspace, full_run, capsys):
        tmp, cfg_path = workspace
        code = main([
            "transfer", "--config", str(cfg_path), "--source", str(full_run),
            "--target", str(tmp / "dense" / "manifest.csv"), "--out", str(tmp / "bad"),
        ])
        assert code == 1

    def test_finetune(self, workspace, full_run):
        tmp, cfg_path = workspace
        out = tmp / "ft"
        assert main([
            "finetune", "--config", str(cfg_path), "--source", str(full_run),
            "--target", str(tmp / "sparse" / "manifest.csv"),
            "--repeats", "1", "--out", str(out),
        ]) == 0
        payload = json.loads((out / "transfer_result.json").read_text())
        assert payload["mode"] == "finetune"

    def test_explain(self, workspace, full_run):
        tmp, cfg_path = workspace
        manifest = tmp / "sparse" / "manifest.csv"
        first_video = (manifest.read_text().splitlines()[1]).split(",")[0]
        out = tmp / "saliency"
        assert main([
            "explain", "--config", str(cfg_path),
            "--checkpoint", str(full_run / "checkpoint.zip"),
            "--manifest", str(manifest), "--video", first_video,
            "--start", "0", "--out", str(out),
        ]) == 0
        clip_dir = out / f"{first_video}_t0"
        assert (clip_dir / "frame_0.png").exists()
        assert (clip_dir / "clip.gif").exists()


class TestReportAndRaters:
    def test_report_on_expert_fixture_prints_macro(self, tmp_path, capsys):
        assert main(["report", str(expert_study_path()), "--out", str(tmp_path / "rep")]) == 0
        out = capsys.readouterr().out
        assert "macro F1 76.0" in out
        assert (tmp_path / "rep" / "summary.csv").exists()
        assert (tmp_path / "rep" / "confusion_model.png").exists()

    def test_report_on_run_dir(self, workspace, capsys):
        tmp, _ = workspace
        assert main(["report", str(tmp / "cv_a")]) == 0
        out = capsys.readouterr().out
        assert "F1" in out
        assert (tmp / "cv_a" / "report" / "per_subject.csv").exists()

    def test_rater_analysis_fixture(self, capsys):
        assert main(["rater-analysis"]) == 0
        out = capsys.readouterr().out
        nopain, pain, total = map(float, out.splitlines()[1].split()[1:])
        assert abs(nopain - 28.1) <= 0.1
        assert abs(pain - 72.7) <= 0.1
        assert abs(total - 51.3) <= 0.1

    def test_rater_analysis_full_matrix(self, tmp_path, capsys):
        import numpy as np

        from painvid.metrics import RaterMatrix, save_ratings

        rng = np.random.default_rng(0)
        ratings = rng.integers(0, 11, size=(4, 6))
        rm = RaterMatrix(ratings, tuple(int(x) for x in rng.integers(0, 2, 6)))
        save_ratings(tmp_path / "r.csv", rm)
        labels_csv = tmp_path / "labels.csv"
        lines = ["clip_id,label"] + [
            f"clip_{j:02d},{int(rm.labels[j])}" for j in range(6)
        ]
        labels_csv.write_text("\n".join(lines) + "\n")
        assert main([
            "rater-analysis", "--ratings", str(tmp_path / "r.csv"),
            "--labels", str(labels_csv), "--thresholds", "0", "1", "2",
        ]) == 0
        out = capsys.readouterr().out
        assert "Threshold" in out

    def test_unknown_config_key_fails(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[train]\nmax_epoch = 3\n")
        code = main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert code == 1
