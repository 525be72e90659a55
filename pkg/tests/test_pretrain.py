"""Masking, pre-training losses, contrastive sampling, and the loop."""

import math

import numpy as np
import pytest
import torch

from powerpm.data.series import EMPTY_SCHEMA, Window, windows_to_batch
from powerpm.errors import BatchError, MaskError, NumericError
from powerpm.pretrain.contrastive import ContrastiveConfig, WindowPool, sample_contrastive_batch
from powerpm.pretrain.loop import (
    PretrainConfig,
    PretrainData,
    evaluate_masked_mse,
    pretrain_loop,
    write_trace,
)
from powerpm.pretrain.losses import loss_dvcl, loss_mse, pool_windows
from powerpm.pretrain.masking import CAUSAL, RANDOM, MaskSpec, make_mask
from powerpm.pretrain.reconstruction import reconstruct

from tests.test_encoder import build_tree_batch, tiny_encoder


class TestMakeMask:
    def test_causal_suffix_example(self):
        spec = make_mask(10, 0.4, alpha=0.7, seed=0)
        assert spec.mode == CAUSAL
        assert spec.masked_indices == (6, 7, 8, 9)

    def test_random_cardinality_and_range(self):
        spec = make_mask(10, 0.4, alpha=0.3, seed=123)
        assert spec.mode == RANDOM
        assert len(spec.masked_indices) == 4
        assert len(set(spec.masked_indices)) == 4
        assert all(0 <= i < 10 for i in spec.masked_indices)

    def test_branch_fraction(self):
        rng = np.random.default_rng(77)
        causal = sum(
            make_mask(10, 0.4, float(rng.uniform()), int(rng.integers(2**31))).mode == CAUSAL
            for _ in range(2000)
        )
        assert 0.45 <= causal / 2000 <= 0.55

    def test_rounding(self):
        assert make_mask(3, 0.4, 0.9, 0).num_masked == 1  # round(1.2)
        assert make_mask(27, 0.4, 0.9, 0).num_masked == 11  # round(10.8)

    def test_nothing_to_mask(self):
        with pytest.raises(MaskError, match="nothing"):
            make_mask(10, 0.04, 0.3, 0)

    def test_ratio_bounds(self):
        with pytest.raises(MaskError):
            make_mask(10, 0.0, 0.3, 0)
        with pytest.raises(MaskError):
            make_mask(10, 1.0, 0.3, 0)

    def test_spec_invariants_enforced(self):
        with pytest.raises(MaskError, match="expected"):
            MaskSpec(ratio=0.4, mode=RANDOM, masked_indices=(1, 2), num_patches=10)
        with pytest.raises(MaskError, match="suffix"):
            MaskSpec(ratio=0.4, mode=CAUSAL, masked_indices=(0, 1, 2, 3), num_patches=10)
        with pytest.raises(MaskError, match="sorted"):
            MaskSpec(ratio=0.4, mode=RANDOM, masked_indices=(3, 1, 2, 4), num_patches=10)


class TestLossMse:
    def test_identity(self):
        x = torch.randn(3, 5)
        assert loss_mse(x, x).item() == 0.0

    def test_hand_value(self):
        x = torch.tensor([[0.0, 0.0]])
        x_hat = torch.tensor([[2.0, 2.0]])
        assert loss_mse(x, x_hat).item() == 4.0

    def test_quadratic_homogeneity(self):
        x = torch.randn(2, 6, dtype=torch.float64)
        x_hat = torch.randn(2, 6, dtype=torch.float64)
        base = loss_mse(x, x_hat).item()
        assert loss_mse(2 * x, 2 * x_hat).item() == pytest.approx(4 * base, rel=1e-12)

    def test_symmetry(self):
        x = torch.randn(2, 6, dtype=torch.float64)
        x_hat = torch.randn(2, 6, dtype=torch.float64)
        assert loss_mse(x, x_hat).item() == loss_mse(x_hat, x).item()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            loss_mse(torch.zeros(2, 3), torch.zeros(3, 2))


class TestLossDvcl:
    def test_equal_logits_is_log_batch(self):
        for batch in (2, 8, 32):
            z = torch.ones(batch, 6, dtype=torch.float64)
            loss = loss_dvcl(z, z.clone(), temperature=0.5)
            assert loss.item() == pytest.approx(math.log(batch), abs=1e-9)

    def test_hand_value_b2(self):
        # sim(anchor, positive) = 1, sim(anchor, other anchor) = 0, tau = 1:
        # per anchor -log(e / (e + 1)) = log(1 + 1/e).
        z_anchor = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        loss = loss_dvcl(z_anchor, z_anchor.clone(), temperature=1.0)
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert loss.item() == pytest.approx(0.3133, abs=5e-5)

    def test_better_positive_decreases_loss(self):
        anchors = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        near = torch.tensor([[0.9, 0.1], [0.0, 1.0]], dtype=torch.float64)
        far = torch.tensor([[0.1, 0.9], [0.0, 1.0]], dtype=torch.float64)
        assert loss_dvcl(anchors, near, 0.5).item() < loss_dvcl(anchors, far, 0.5).item()

    def test_self_excluded_from_denominator(self):
        # With self-similarity included the B=2 loss would see an extra
        # e^{1/tau} term; verify the exact two-term denominator instead.
        z = torch.tensor([[1.0, 0.0], [0.6, 0.8]], dtype=torch.float64)
        pos = torch.tensor([[0.8, 0.6], [1.0, 0.0]], dtype=torch.float64)
        tau = 0.7
        sims = z @ z.T
        pos_sims = (z * pos).sum(-1)
        expected = 0.0
        for i in range(2):
            num = math.exp(pos_sims[i] / tau)
            den = num + math.exp(sims[i, 1 - i] / tau)
            expected += -math.log(num / den)
        expected /= 2
        assert loss_dvcl(z, pos, tau).item() == pytest.approx(expected, abs=1e-12)

    def test_zero_norm_rejected(self):
        z = torch.zeros(2, 4)
        with pytest.raises(NumericError, match="zero-norm"):
            loss_dvcl(z, z, 1.0)

    def test_single_anchor_rejected(self):
        z = torch.ones(1, 4)
        with pytest.raises(BatchError):
            loss_dvcl(z, z, 1.0)

    def test_pool_windows_unit_norm(self):
        z = torch.randn(3, 4, 8, dtype=torch.float64)
        pooled = pool_windows(z)
        assert pooled.shape == (3, 8)
        assert torch.allclose(pooled.norm(dim=-1), torch.ones(3, dtype=torch.float64))


def _pool(starts, instances=("a", "b"), freq=900, length=4):
    windows = []
    for inst in instances:
        for t in starts:
            windows.append(
                Window(
                    instance_id=inst,
                    values=np.arange(length, dtype=float),
                    t_start=t,
                    t_end=t + freq * (length - 1),
                    frequency_seconds=freq,
                )
            )
    return WindowPool(windows)


class TestSampleContrastive:
    def test_shift_contract(self):
        freq, shift = 900, 8
        pool = _pool([0, freq * shift, 2 * freq * shift], freq=freq)
        rng = np.random.default_rng(0)
        anchors, positives = sample_contrastive_batch(pool, 4, shift, rng)
        for a, p in zip(anchors, positives):
            assert p.instance_id == a.instance_id
            assert p.t_start - a.t_start == shift * freq

    def test_b2_single_negative(self):
        pool = _pool([0, 7200], freq=900)
        anchors, positives = sample_contrastive_batch(pool, 2, 8, np.random.default_rng(1))
        assert len(anchors) == 2
        keys = {(a.instance_id, a.t_start) for a in anchors}
        assert len(keys) == 2  # distinct anchors: exactly 1 negative each

    def test_anchor_without_counterpart_skipped(self):
        # only start 0 has a +shift counterpart
        pool = _pool([0, 7200], freq=900)
        anchors, _ = sample_contrastive_batch(pool, 10, 8, np.random.default_rng(2))
        assert all(a.t_start == 0 for a in anchors)

    def test_too_few_anchors(self):
        pool = _pool([0], freq=900)
        with pytest.raises(BatchError):
            sample_contrastive_batch(pool, 4, 8, np.random.default_rng(3))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ContrastiveConfig(shift_points=0)
        with pytest.raises(ValueError):
            ContrastiveConfig(temperature=0.0)
        with pytest.raises(ValueError):
            ContrastiveConfig(batch_size=1)


class TestReconstruct:
    def test_output_shape(self):
        graph, batch, _ = build_tree_batch()
        model = tiny_encoder()
        masks = [make_mask(model.num_patches, 0.4, 0.3, i) for i in range(batch.num_windows)]
        x_hat = reconstruct(batch, graph, model, masks)
        assert x_hat.shape == (batch.num_windows, batch.window_len)

    def test_stitch_identity_when_disjoint(self):
        from powerpm.model.config import ModelConfig, PatchConfig
        from powerpm.model.network import build_encoder

        cfg = ModelConfig(model_dim=8, num_layers=1, ffn_dim=16, num_heads=2, rgcn_layers=0)
        model = build_encoder(cfg, PatchConfig(4, 4), 8, seed=0, dtype=torch.float64)
        preds = torch.randn(2, 2, 4, dtype=torch.float64)
        out = model.stitch(preds)
        assert torch.equal(out[:, :4], preds[:, 0])
        assert torch.equal(out[:, 4:], preds[:, 1])

    def test_stitch_averages_shared_timestamps(self):
        model = tiny_encoder()  # window 8, patches of 4, stride 2
        preds = torch.randn(1, model.num_patches, 4, dtype=torch.float64)
        out = model.stitch(preds)
        # position 2 is covered by patch 0 (element 2) and patch 1 (element 0)
        assert out[0, 2].item() == pytest.approx(
            ((preds[0, 0, 2] + preds[0, 1, 0]) / 2).item(), abs=1e-15
        )
        # position 0 is covered only by patch 0
        assert torch.equal(out[0, 0], preds[0, 0, 0])

    def test_causal_no_leak_exact(self):
        # Window 8, patches of 4 at stride 2; causal suffix masks patch 2,
        # whose exclusively-owned timestamps are [6, 8).
        graph, batch, windows = build_tree_batch(seed=5)
        model = tiny_encoder()
        masks = [
            MaskSpec(ratio=0.4, mode=CAUSAL, masked_indices=(2,), num_patches=3)
            for _ in range(batch.num_windows)
        ]
        base = reconstruct(batch, graph, model, masks)
        from powerpm.data.series import WindowBatch

        perturbed = batch.x.copy()
        perturbed[:, 6:] += 7.5
        batch_p = WindowBatch(
            x=perturbed, o=batch.o, node_ids=batch.node_ids,
            t_start=batch.t_start, t_end=batch.t_end,
            frequency_seconds=batch.frequency_seconds, schema=batch.schema,
        )
        out = reconstruct(batch_p, graph, model, masks)
        assert torch.equal(base, out)

    def test_unmasked_region_perturbation_leaks(self):
        graph, batch, _ = build_tree_batch(seed=5)
        model = tiny_encoder()
        masks = [
            MaskSpec(ratio=0.4, mode=CAUSAL, masked_indices=(2,), num_patches=3)
            for _ in range(batch.num_windows)
        ]
        base = reconstruct(batch, graph, model, masks)
        batch.x[:, 0] += 7.5
        out = reconstruct(batch, graph, model, masks)
        assert not torch.equal(base, out)


def make_pretrain_data(n_starts=6, seed=0):
    graph, _, windows = build_tree_batch(seed=seed, n_starts=n_starts)
    return PretrainData(windows=windows, schema=EMPTY_SCHEMA, graph=graph)


class TestPretrainLoop:
    def test_deterministic_trace(self):
        cfg = PretrainConfig(steps=6, accumulation=2, learning_rate=1e-3, seed=9)
        contrastive = ContrastiveConfig(shift_points=8, batch_size=4)
        traces = []
        for _ in range(2):
            data = make_pretrain_data()
            model = tiny_encoder(dtype=torch.float32, seed=3)
            _, trace = pretrain_loop(cfg, data, model, contrastive)
            traces.append(trace)
        assert traces[0] == traces[1]

    def test_zero_weight_skips_contrastive(self, monkeypatch):
        import powerpm.pretrain.loop as loop_mod

        def boom(*args, **kwargs):
            raise AssertionError("contrastive path evaluated")

        monkeypatch.setattr(loop_mod, "_contrastive_step", boom)
        cfg = PretrainConfig(steps=2, accumulation=1, contrastive_weight=0.0, seed=1)
        data = make_pretrain_data()
        model = tiny_encoder(dtype=torch.float32, seed=3)
        _, trace = pretrain_loop(cfg, data, model)
        assert all(row["l_dvcl"] == 0.0 for row in trace)

    def test_loss_decreases_on_tiny_data(self):
        cfg = PretrainConfig(steps=30, accumulation=1, learning_rate=3e-3, seed=4)
        data = make_pretrain_data(n_starts=3)
        model = tiny_encoder(dtype=torch.float32, seed=3)
        _, trace = pretrain_loop(cfg, data, model, ContrastiveConfig(shift_points=8, batch_size=4))
        first = np.mean([r["l_mse"] for r in trace[:5]])
        last = np.mean([r["l_mse"] for r in trace[-5:]])
        assert last < first

    def test_non_finite_aborts_with_step(self):
        cfg = PretrainConfig(steps=2, accumulation=1, seed=1, contrastive_weight=0.0)
        data = make_pretrain_data()
        model = tiny_encoder(dtype=torch.float32, seed=3)
        with torch.no_grad():
            model.recon_head.weight.fill_(float("nan"))
        with pytest.raises(NumericError, match="step 0"):
            pretrain_loop(cfg, data, model)

    def test_trace_csv(self, tmp_path):
        trace = [
            {"step": 0, "l_mse": 1.0, "l_dvcl": 2.0, "total": 3.0, "lr": 0.1},
            {"step": 1, "l_mse": 0.5, "l_dvcl": 1.0, "total": 1.5, "lr": 0.1},
        ]
        path = tmp_path / "trace.csv"
        write_trace(trace, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "step,l_mse,l_dvcl,total,lr"
        assert len(lines) == 3

    def test_evaluate_masked_mse_deterministic(self):
        data = make_pretrain_data()
        model = tiny_encoder(dtype=torch.float32, seed=3)
        a = evaluate_masked_mse(model, data, 0.4, seed=2)
        b = evaluate_masked_mse(model, data, 0.4, seed=2)
        assert a == b
