"""Metrics, task heads, fine-tuning regimes, and the persistence baseline."""

import numpy as np
import pytest
import torch

from powerpm.data.exogenous import ExogenousCoder
from powerpm.data.series import Window
from powerpm.data.synthetic import SynthConfig, synth_generate
from powerpm.downstream.finetune import (
    FinetuneConfig,
    TaskData,
    finetune,
    persistence_metrics,
    select_fraction,
)
from powerpm.downstream.heads import (
    ClassifyHead,
    ForecastHead,
    impute_eval_positions,
    patches_touching,
)
from powerpm.downstream.metrics import fbeta, metric_suite, precision_recall
from powerpm.downstream.tasks import AblationFlags, TaskSpec
from powerpm.errors import TaskError
from powerpm.model.config import ModelConfig, PatchConfig
from powerpm.model.network import build_encoder
from powerpm.model.patching import coverage
from powerpm.pipeline import build_task_data, corpus_from_synth


class TestMetrics:
    def test_paper_anchored_fbeta(self):
        precision, recall = 0.3793, 0.5911
        assert fbeta(precision, recall, 0.5) == pytest.approx(0.4086, abs=5e-4)
        assert fbeta(precision, recall, 1.0) == pytest.approx(0.4621, abs=5e-4)

    def test_harmonic_fixed_point(self):
        for v in (0.2, 0.5, 0.9):
            assert fbeta(v, v, 0.5) == pytest.approx(v, abs=1e-12)
            assert fbeta(v, v, 1.0) == pytest.approx(v, abs=1e-12)

    def test_identity_predictions(self):
        y = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = metric_suite(y, y, ("MSE", "MAE"))
        assert out == {"MSE": 0.0, "MAE": 0.0}
        labels = np.array([0, 1, 1, 0])
        assert metric_suite(labels, labels, ("accuracy",))["accuracy"] == 1.0

    def test_zero_division_conventions(self):
        y_true = np.array([1, 1, 0])
        y_pred = np.zeros(3, dtype=int)  # no predicted positives
        out = metric_suite(y_true, y_pred, ("precision", "recall", "F0.5", "F1"))
        assert out["precision"] == 0.0
        assert out["F0.5"] == 0.0 and out["F1"] == 0.0
        assert fbeta(0.0, 0.0, 0.5) == 0.0

    def test_fbeta_matches_confusion_matrix_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(1, 50))
            y = rng.integers(0, 2, size=n)
            p = rng.integers(0, 2, size=n)
            prec, rec = precision_recall(y, p)
            tp = int(np.sum((y == 1) & (p == 1)))
            fp = int(np.sum((y == 0) & (p == 1)))
            fn = int(np.sum((y == 1) & (p == 0)))
            for beta in (0.5, 1.0):
                denom = (1 + beta * beta) * tp + beta * beta * fn + fp
                oracle = (1 + beta * beta) * tp / denom if denom else 0.0
                assert fbeta(prec, rec, beta) == pytest.approx(oracle, abs=1e-9)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            metric_suite(np.array([]), np.array([]), ("MSE",))


class TestTaskSpec:
    def test_forecast_horizons_enforced(self):
        TaskSpec(family="forecast", horizon=96)
        with pytest.raises(TaskError):
            TaskSpec(family="forecast", horizon=7)

    def test_impute_ratios_enforced(self):
        TaskSpec(family="impute", mask_ratio=0.375)
        with pytest.raises(TaskError):
            TaskSpec(family="impute", mask_ratio=0.2)

    def test_anomaly_defaults(self):
        spec = TaskSpec(family="anomaly")
        assert spec.n_classes == 2
        assert "F0.5" in spec.metrics

    def test_data_fractions(self):
        TaskSpec(family="forecast", horizon=4, data_fraction=0.3)
        with pytest.raises(TaskError):
            TaskSpec(family="forecast", horizon=4, data_fraction=0.5)

    def test_ablation_labels(self):
        assert AblationFlags().label() == "full"
        assert AblationFlags(no_hierarchy=True).label() == "-H"
        assert AblationFlags(no_hierarchy=True, no_exogenous=True).label() == "-H-E"


class TestHeads:
    def test_forecast_shape_and_linearity(self):
        head = ForecastHead(num_patches=5, model_dim=8, horizon=4)
        z = torch.randn(3, 5, 8)
        out = head(z)
        assert out.shape == (3, 4)
        with torch.no_grad():
            head.linear.weight.zero_()
            head.linear.bias.zero_()
        assert torch.equal(head(z), torch.zeros(3, 4))
        with torch.no_grad():
            head.linear.weight.normal_()
        assert torch.allclose(head(2.0 * z), 2.0 * head(z), atol=1e-5)

    def test_classify_probabilities(self):
        head = ClassifyHead(model_dim=8, n_classes=4)
        z = torch.randn(6, 5, 8)
        probs = head.probabilities(z)
        assert probs.shape == (6, 4)
        assert torch.allclose(probs.sum(dim=-1), torch.ones(6), atol=1e-6)
        with torch.no_grad():
            head.linear.weight.zero_()
            head.linear.bias.zero_()
        assert torch.allclose(head.probabilities(z), torch.full((6, 4), 0.25), atol=1e-6)

    def test_impute_positions_count(self):
        rng = np.random.default_rng(0)
        mask = impute_eval_positions(672, 0.5, rng)
        assert mask.sum() == 336
        assert mask.ndim == 1 and mask.dtype == bool
        on = np.where(mask)[0]
        assert on[-1] - on[0] + 1 == 336  # one contiguous block

    def test_impute_zero_points_rejected(self):
        with pytest.raises(TaskError):
            impute_eval_positions(10, 0.01, np.random.default_rng(0))

    def test_patches_touching(self):
        cfg = PatchConfig(4, 2)
        time_idx, valid = coverage(8, cfg)
        positions = np.zeros(8, dtype=bool)
        positions[6] = True  # covered by patch 2 only
        assert patches_touching(positions, time_idx, valid).masked_indices == (2,)
        positions[2] = True  # adds patches 0 and 1
        assert patches_touching(positions, time_idx, valid).masked_indices == (0, 1, 2)


def _plain_windows(n, instance="a"):
    return [
        Window(instance, np.zeros(4), t * 900, t * 900 + 3 * 900, 900)
        for t in range(n)
    ]


class TestSelectFraction:
    def test_exact_counts_without_snapshots(self):
        train = _plain_windows(100)
        assert len(select_fraction(train, 0.1, whole_snapshots=False)) == 10
        assert len(select_fraction(train, 1.0, whole_snapshots=False)) == 100

    def test_nesting(self):
        train = _plain_windows(50)
        subsets = {
            f: {(w.instance_id, w.t_start) for w in select_fraction(train, f, False)}
            for f in (0.1, 0.3, 0.6, 1.0)
        }
        assert subsets[0.1] <= subsets[0.3] <= subsets[0.6] <= subsets[1.0]

    def test_snapshot_rounding(self):
        windows = []
        for t in range(10):
            for inst in ("a", "b", "c"):
                windows.append(Window(inst, np.zeros(4), t * 900, t * 900 + 2700, 900))
        picked = select_fraction(windows, 0.3, whole_snapshots=True)
        assert len(picked) == 9  # 3 complete snapshots of 3
        assert len({w.t_start for w in picked}) == 3

    def test_empty_fraction_rejected(self):
        with pytest.raises(TaskError):
            select_fraction(_plain_windows(5), 0.1, whole_snapshots=False)


TINY_MODEL = ModelConfig(model_dim=16, num_layers=1, ffn_dim=32, num_heads=2, rgcn_layers=1)


@pytest.fixture(scope="module")
def small_corpus():
    ds = synth_generate(
        SynthConfig(
            n_cities=1, districts_per_city=2, users_per_district=3,
            num_points=96 * 10, frequency_seconds=900, seed=21, anomaly_fraction=0.3,
        )
    )
    return corpus_from_synth(
        ds, ExogenousCoder(), window_len=48, stride=48,
        num_clusters=2, cluster_restarts=3,
    )


def small_model(corpus, seed=0):
    return build_encoder(
        TINY_MODEL, PatchConfig(16, 8), corpus.window_len,
        exo_schema=corpus.schema, seed=seed,
    )


FAST = FinetuneConfig(epochs=1, learning_rate=1e-3, batch_groups=4)


class TestFinetune:
    def test_frozen_keeps_encoder(self, small_corpus):
        task = TaskSpec(family="forecast", horizon=4, regime="frozen")
        data = build_task_data(small_corpus, task, "district")
        model = small_model(small_corpus)
        result = finetune(task, model, data, seed=0, cfg=FAST)
        assert result.encoder_unchanged
        assert set(result.metrics) == {"MSE", "MAE"}

    def test_full_ft_updates_encoder(self, small_corpus):
        task = TaskSpec(family="forecast", horizon=4, regime="full_ft")
        data = build_task_data(small_corpus, task, "district")
        model = small_model(small_corpus)
        result = finetune(task, model, data, seed=0, cfg=FAST)
        assert not result.encoder_unchanged

    def test_no_hierarchy_flag_runs_flat(self, small_corpus):
        task = TaskSpec(family="forecast", horizon=4, regime="frozen")
        data = build_task_data(small_corpus, task, "district")
        model = small_model(small_corpus)
        result = finetune(
            task, model, data, flags=AblationFlags(no_hierarchy=True), seed=0, cfg=FAST
        )
        assert result.encoder_unchanged
        assert np.isfinite(result.metrics["MSE"])

    def test_classify_task(self, small_corpus):
        task = TaskSpec(family="classify", n_classes=2, regime="frozen")
        data = build_task_data(small_corpus, task, "user")
        model = small_model(small_corpus)
        result = finetune(task, model, data, seed=0, cfg=FAST)
        assert 0.0 <= result.metrics["accuracy"] <= 1.0

    def test_anomaly_task_reports_f_half(self, small_corpus):
        task = TaskSpec(family="anomaly", regime="frozen")
        data = build_task_data(small_corpus, task, "user")
        model = small_model(small_corpus)
        result = finetune(task, model, data, seed=0, cfg=FAST)
        for name in ("precision", "recall", "F0.5", "F1"):
            assert 0.0 <= result.metrics[name] <= 1.0

    def test_impute_task_scores_masked_points(self, small_corpus):
        task = TaskSpec(family="impute", mask_ratio=0.125, regime="frozen")
        data = build_task_data(small_corpus, task, "district")
        model = small_model(small_corpus)
        result = finetune(task, model, data, seed=0, cfg=FAST)
        assert result.encoder_unchanged  # frozen excludes the recon head
        assert np.isfinite(result.metrics["MSE"])


class TestPersistence:
    def test_hand_value(self):
        window = Window("d", np.array([0.0, 0.0, 0.0, 5.0]), 0, 2700, 900)
        data = TaskData(
            schema=None, graph=None, train=[], val=[], test=[window],
            targets={("d", 0): np.array([7.0, 7.0, 7.0, 7.0])},
            target_nodes=frozenset({"d"}), frequency_seconds=900,
        )
        task = TaskSpec(family="forecast", horizon=4)
        out = persistence_metrics(task, data)
        assert out["MSE"] == pytest.approx(4.0)
        assert out["MAE"] == pytest.approx(2.0)
