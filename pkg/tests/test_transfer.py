import copy

import numpy as np
import pytest
import torch

from painvid.flow import FlowParams, precompute_flow_stream
from painvid.metrics import aggregate_runs
from painvid.model import CLSTM2Config, state_checksum
from painvid.sampling import WindowPlan
from painvid.synth import SignalSpec, SynthConfig, generate_dataset
from painvid.training import TrainConfig, train_full_dataset
from painvid.transfer import TransferError, finetune_head, zero_shot_transfer

TINY_MODEL = CLSTM2Config(
    channels_per_block=(2, 2, 3, 3), kernel_size=3, input_hw=(16, 16), seq_len=4
)
PLAN = WindowPlan(10, 10)


def make_domain(tmp, kind, n_subjects, seed):
    cfg = SynthConfig(
        n_subjects=n_subjects,
        videos_per_subject=2,
        frames_per_video=40,
        frame_hw=(16, 16),
        burst_fraction=1.0 if kind == "dense" else 0.2,
        signal=SignalSpec(patch_size=6, patch_top_left=(2, 2), period=8, amplitude=0.8),
        window=PLAN,
        seed=seed,
    )
    manifest = generate_dataset(cfg, kind, tmp)
    precompute_flow_stream(manifest, FlowParams(n_iters=10))
    return manifest


@pytest.fixture(scope="module")
def domains(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("transferdata")
    dense = make_domain(tmp / "dense", "dense", 3, seed=5)
    sparse = make_domain(tmp / "sparse", "sparse", 3, seed=6)
    return dense, sparse


@pytest.fixture(scope="module")
def source_model(domains):
    dense, _ = domains
    cfg = TrainConfig(max_epochs=2, early_stop_patience=2, batch_size=8,
                      learning_rate=1e-3, seed=1)
    model, stats, meta = train_full_dataset(dense, "clstm2", TINY_MODEL, epochs=2,
                                            cfg=cfg, plan=PLAN)
    return model, meta


class TestZeroShot:
    def test_same_domain_refused(self, domains, source_model):
        dense, _ = domains
        model, meta = source_model
        with pytest.raises(TransferError):
            zero_shot_transfer(model, meta, dense, plan=PLAN)

    def test_no_parameter_updates(self, domains, source_model):
        _, sparse = domains
        model, meta = source_model
        before = state_checksum(model)
        zero_shot_transfer(model, meta, sparse, plan=PLAN)
        assert state_checksum(model) == before

    def test_repeat_evaluation_identical(self, domains, source_model):
        _, sparse = domains
        model, meta = source_model
        a = zero_shot_transfer(model, meta, sparse, plan=PLAN)
        b = zero_shot_transfer(model, meta, sparse, plan=PLAN)
        assert [p.prob_pain for p in a.predictions] == [p.prob_pain for p in b.predictions]
        assert a.per_subject == b.per_subject

    def test_output_shape(self, domains, source_model):
        _, sparse = domains
        model, meta = source_model
        out = zero_shot_transfer(model, meta, sparse, plan=PLAN)
        assert out.mode == "zero_shot"
        assert out.source_domain == "SYNTH_DENSE"
        assert out.target_domain == "SYNTH_SPARSE"
        assert set(out.per_subject) == sparse.subjects
        assert "global" in out.to_json()

    def test_single_subject_global_equals_subject(self, domains, source_model):
        _, sparse = domains
        model, meta = source_model
        single = sparse.subset([sorted(sparse.subjects)[0]])
        out = zero_shot_transfer(model, meta, single, plan=PLAN)
        (value,) = out.per_subject.values()
        assert out.global_f1 == pytest.approx(value)

    def test_missing_normalization_rejected(self, domains, source_model):
        _, sparse = domains
        model, meta = source_model
        with pytest.raises(TransferError):
            zero_shot_transfer(model, {"domain": "SYNTH_DENSE"}, sparse, plan=PLAN)


class TestFinetune:
    def test_only_head_changes(self, domains, source_model):
        _, sparse = domains
        model, meta = source_model
        source_state = copy.deepcopy(model.state_dict())
        cfg = TrainConfig(max_epochs=1, early_stop_patience=1, batch_size=8,
                          learning_rate=5e-2, seed=2)
        result, output = finetune_head(model, meta, sparse, cfg, n_repeats=1, plan=PLAN)
        assert output.mode == "finetune"
        # the passed-in source model itself is never mutated
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, source_state[name]), name

    def test_head_moves_body_frozen_within_fold(self, domains, source_model):
        from painvid.data import FrameStore
        from painvid.sampling import extract_clips
        from painvid.training import (compute_normalization, materialize_split,
                                      train_supervised)

        _, sparse = domains
        model, meta = source_model
        work = copy.deepcopy(model)
        before = {k: v.clone() for k, v in work.state_dict().items()}
        store = FrameStore(sparse)
        clips = extract_clips(sparse, "train", PLAN)
        stats = compute_normalization(clips, store)
        data = materialize_split(clips, store, stats)
        cfg = TrainConfig(max_epochs=1, early_stop_patience=1, batch_size=8,
                          learning_rate=5e-2, seed=3)
        work, _ = train_supervised(data, data, work, cfg, head_only=True)
        changed = {
            name for name, tensor in work.state_dict().items()
            if not torch.equal(tensor, before[name])
        }
        assert changed, "head parameters must receive updates"
        assert all(name.startswith("head.") for name in changed), changed

    def test_folds_match_subject_count_and_repeats(self, domains, source_model):
        _, sparse = domains
        model, meta = source_model
        cfg = TrainConfig(max_epochs=1, early_stop_patience=1, batch_size=8,
                          learning_rate=1e-2, seed=4)
        result, output = finetune_head(model, meta, sparse, cfg, n_repeats=2, plan=PLAN)
        n_subjects = len(sparse.subjects)
        assert len(result.scores) == 2 * n_subjects
        assert len(result.globals) == 2
        agg = aggregate_runs(result)
        assert agg.mean_f1 >= 0.0 and agg.std_f1 >= 0.0
        assert len(output.repeats) == 2

    def test_same_domain_refused(self, domains, source_model):
        dense, _ = domains
        model, meta = source_model
        cfg = TrainConfig(max_epochs=1, early_stop_patience=1, seed=0)
        with pytest.raises(TransferError):
            finetune_head(model, meta, dense, cfg, n_repeats=1, plan=PLAN)
