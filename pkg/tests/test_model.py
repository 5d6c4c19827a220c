import math

import numpy as np
import pytest
import torch

from painvid.model import (
    BackboneHeadConfig,
    BackboneHeadModel,
    CLSTM2Config,
    ConvLSTMCell,
    ModelConfigError,
    ToyBackbone3D,
    TwoStreamConvLSTM,
    convlstm_cell_step,
    count_parameters,
    load_checkpoint,
    parameter_breakdown,
    save_checkpoint,
    state_checksum,
)

SMALL = CLSTM2Config(
    channels_per_block=(2, 3, 4, 5), kernel_size=3, input_hw=(32, 32), seq_len=4
)


def scalar_lstm_step(x, h, c, wxi, whi, bi, wxf, whf, bf, wxg, whg, bg, wxo, who, bo):
    """Independent scalar LSTM oracle (pure python floats)."""
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    i = sig(wxi * x + whi * h + bi)
    f = sig(wxf * x + whf * h + bf)
    g = math.tanh(wxg * x + whg * h + bg)
    o = sig(wxo * x + who * h + bo)
    c_new = f * c + i * g
    h_new = o * math.tanh(c_new)
    return h_new, c_new


class TestCell:
    def test_zero_weights_give_half_gates(self):
        cell = ConvLSTMCell(1, 1, 1)
        with torch.no_grad():
            cell.gates.weight.zero_()
            cell.gates.bias.zero_()
        x = torch.randn(1, 1, 4, 4)
        h, c = cell(x)
        # sigmoid(0) = 0.5 gates and tanh(0) = 0 cell input: everything stays 0
        assert torch.allclose(c, torch.zeros_like(c))
        assert torch.allclose(h, torch.zeros_like(h))

    def test_matches_scalar_lstm_oracle(self):
        torch.manual_seed(0)
        cell = ConvLSTMCell(1, 1, 1)
        w = cell.gates.weight.detach().numpy().reshape(4, 2)
        b = cell.gates.bias.detach().numpy()
        (wxi, whi), (wxf, whf), (wxg, whg), (wxo, who) = w
        bi, bf, bg, bo = b

        h, c = 0.0, 0.0
        ht = torch.zeros(1, 1, 1, 1)
        ct = torch.zeros(1, 1, 1, 1)
        rng = np.random.default_rng(1)
        for _ in range(6):
            x = float(rng.normal())
            xt = torch.tensor([[[[x]]]], dtype=torch.float32)
            ht, ct = convlstm_cell_step(xt, ht, ct, cell)
            h, c = scalar_lstm_step(x, h, c, wxi, whi, bi, wxf, whf, bf,
                                    wxg, whg, bg, wxo, who, bo)
            assert abs(float(ht) - h) < 1e-6
            assert abs(float(ct) - c) < 1e-6

    def test_same_padding_preserves_spatial_size(self):
        cell = ConvLSTMCell(3, 8, 5)
        h, c = cell(torch.randn(2, 3, 32, 32))
        assert h.shape == (2, 8, 32, 32)
        assert c.shape == (2, 8, 32, 32)

    def test_channel_mismatch(self):
        cell = ConvLSTMCell(3, 8, 3)
        with pytest.raises(ModelConfigError):
            cell(torch.randn(1, 4, 8, 8))

    def test_gradients_match_finite_differences(self):
        """Central differences at 64-bit on every cell parameter."""
        torch.manual_seed(2)
        cell = ConvLSTMCell(2, 3, 3).double()
        x = torch.randn(1, 2, 6, 6, dtype=torch.float64)
        h0 = torch.randn(1, 3, 6, 6, dtype=torch.float64)
        c0 = torch.randn(1, 3, 6, 6, dtype=torch.float64)

        def loss():
            h, c = cell(x, (h0, c0))
            return (h.sin().sum() + c.cos().sum())

        out = loss()
        out.backward()
        eps = 1e-5
        checked = 0
        for p in cell.parameters():
            grad = p.grad.flatten()
            flat = p.data.flatten()
            for idx in range(0, flat.numel(), max(1, flat.numel() // 40)):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = loss().item()
                flat[idx] = orig - eps
                down = loss().item()
                flat[idx] = orig
                fd = (up - down) / (2 * eps)
                rel = abs(grad[idx].item() - fd) / max(abs(fd), abs(grad[idx].item()), 1e-8)
                assert rel < 1e-4, f"param rel error {rel}"
                checked += 1
        assert checked >= 50


class TestTwoStream:
    def test_small_forward_shapes(self):
        torch.manual_seed(0)
        model = TwoStreamConvLSTM(SMALL)
        rgb = torch.rand(2, 4, 32, 32, 3)
        flow = torch.rand(2, 4, 32, 32, 3)
        logits = model(rgb, flow)
        assert logits.shape == (2, 2)
        assert SMALL.prefusion_hw == (2, 2)

    def test_softmax_sums_to_one(self):
        torch.manual_seed(1)
        model = TwoStreamConvLSTM(SMALL)
        probs = model.predict_proba(torch.rand(3, 4, 32, 32, 3), torch.rand(3, 4, 32, 32, 3))
        assert torch.allclose(probs.sum(dim=-1), torch.ones(3), atol=1e-6)

    def test_single_clip_without_batch_dim(self):
        torch.manual_seed(1)
        model = TwoStreamConvLSTM(SMALL)
        probs = model.predict_proba(np.random.rand(4, 32, 32, 3), np.random.rand(4, 32, 32, 3))
        assert probs.shape == (1, 2)

    def test_indivisible_input_rejected(self):
        with pytest.raises(ModelConfigError):
            CLSTM2Config(input_hw=(20, 20))
        model = TwoStreamConvLSTM(SMALL)
        with pytest.raises(ModelConfigError):
            model(torch.rand(1, 4, 24, 24, 3), torch.rand(1, 4, 24, 24, 3))

    def test_prefusion_sizes_for_paper_resolutions(self):
        assert CLSTM2Config(input_hw=(224, 224)).prefusion_hw == (14, 14)
        assert CLSTM2Config(input_hw=(128, 128)).prefusion_hw == (8, 8)

    def test_stream_swap_changes_output(self):
        torch.manual_seed(3)
        model = TwoStreamConvLSTM(SMALL).eval()
        rgb = torch.rand(1, 4, 32, 32, 3)
        flow = torch.rand(1, 4, 32, 32, 3)
        with torch.no_grad():
            a = model(rgb, flow)
            b = model(flow, rgb)
        assert not torch.allclose(a, b)

    def test_eval_mode_deterministic(self):
        torch.manual_seed(4)
        model = TwoStreamConvLSTM(SMALL).eval()
        rgb = torch.rand(1, 4, 32, 32, 3)
        flow = torch.rand(1, 4, 32, 32, 3)
        with torch.no_grad():
            assert torch.equal(model(rgb, flow), model(rgb, flow))


class TestParameterCounts:
    def test_degenerate_cell_has_twelve(self):
        # 4 gates x (input kernel + hidden kernel + bias)
        assert count_parameters(ConvLSTMCell(1, 1, 1)) == 12

    def test_empty_module_zero(self):
        assert count_parameters(torch.nn.Sequential()) == 0

    def test_default_config_lands_near_cited_total(self):
        model = TwoStreamConvLSTM(CLSTM2Config())
        total = count_parameters(model)
        assert total == 1_466_882  # frozen default; recorded in the README
        assert abs(total - 1.5e6) / 1.5e6 < 0.05

    def test_breakdown_sums_to_total(self):
        model = TwoStreamConvLSTM(SMALL)
        breakdown = parameter_breakdown(model)
        children = sum(v for k, v in breakdown.items() if k != "total")
        assert children == breakdown["total"] == count_parameters(model)


class TestBackboneHead:
    def test_head_parameter_composition(self):
        plain = BackboneHeadModel(BackboneHeadConfig(feature_dim=2048, with_scale=False))
        assert count_parameters(plain) == 2 * 2048 + 2 == 4098
        scaled = BackboneHeadModel(BackboneHeadConfig(feature_dim=2048, with_scale=True))
        assert count_parameters(scaled) == 4100

    def test_frozen_backbone_gets_no_gradient(self):
        backbone = ToyBackbone3D(feature_dim=16, in_channels=3, seed=0)
        model = BackboneHeadModel(
            BackboneHeadConfig(feature_dim=16, backbone_frozen=True), backbone=backbone
        )
        clip = torch.rand(2, 4, 16, 16, 3)
        loss = model(clip).sum()
        loss.backward()
        for p in backbone.parameters():
            assert p.grad is None
        assert model.head.weight.grad is not None

    def test_identity_features_closed_form_softmax(self):
        cfg = BackboneHeadConfig(feature_dim=2, with_scale=False)
        model = BackboneHeadModel(cfg)
        with torch.no_grad():
            model.head.weight.copy_(torch.eye(2))
            model.head.bias.zero_()
        feats = torch.tensor([[1.0, 3.0]])
        probs = model.predict_proba(feats)
        z = np.exp([1.0, 3.0])
        expect = z / z.sum()
        assert np.allclose(probs.numpy()[0], expect, atol=1e-6)

    def test_dim_mismatch(self):
        model = BackboneHeadModel(BackboneHeadConfig(feature_dim=8))
        with pytest.raises(ModelConfigError):
            model(torch.rand(2, 5))


class TestCheckpoints:
    def test_round_trip_preserves_outputs(self, tmp_path):
        torch.manual_seed(5)
        model = TwoStreamConvLSTM(SMALL).eval()
        rgb = torch.rand(1, 4, 32, 32, 3)
        flow = torch.rand(1, 4, 32, 32, 3)
        save_checkpoint(tmp_path / "m.zip", model, meta={"domain": "D", "epochs": 3})
        loaded, meta = load_checkpoint(tmp_path / "m.zip")
        loaded.eval()
        assert meta == {"domain": "D", "epochs": 3}
        with torch.no_grad():
            assert torch.equal(model(rgb, flow), loaded(rgb, flow))

    def test_save_is_byte_deterministic(self, tmp_path):
        torch.manual_seed(6)
        model = TwoStreamConvLSTM(SMALL)
        save_checkpoint(tmp_path / "a.zip", model, meta={"seed": 1})
        save_checkpoint(tmp_path / "b.zip", model, meta={"seed": 1})
        assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()

    def test_checksum_detects_changes(self):
        torch.manual_seed(7)
        model = TwoStreamConvLSTM(SMALL)
        before = state_checksum(model)
        with torch.no_grad():
            model.head.bias.add_(1.0)
        assert state_checksum(model) != before

    def test_wrong_format_rejected(self, tmp_path):
        import json
        import zipfile

        with zipfile.ZipFile(tmp_path / "bad.zip", "w") as zf:
            zf.writestr("meta.json", json.dumps({"format": "other.v9"}))
        with pytest.raises(ModelConfigError):
            load_checkpoint(tmp_path / "bad.zip")

    def test_backbone_head_checkpoint(self, tmp_path):
        model = BackboneHeadModel(BackboneHeadConfig(feature_dim=8, with_scale=True))
        save_checkpoint(tmp_path / "bh.zip", model, meta={})
        loaded, _ = load_checkpoint(tmp_path / "bh.zip")
        feats = torch.rand(3, 8)
        assert torch.equal(model.predict_proba(feats), loaded.predict_proba(feats))
