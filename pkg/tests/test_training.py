"""Training protocol, metrics, and the latency benchmark.

The 2-class smoke oracle: two visually distinct modes render to linearly
separable pixel patterns, so the model must fit the train split perfectly
within 30 epochs.
"""

import numpy as np
import pytest

from chladni_studio.checkpoint import Checkpoint
from chladni_studio.dataset import DatasetManifest
from chladni_studio.model import ModelConfig, build_model
from chladni_studio.training import (
    EvalReport,
    TrainConfig,
    benchmark_latency,
    evaluate,
    macro_f1_from_confusion,
    train,
)

TOY_MODEL = ModelConfig(variant="cbam5", image_size=32,
                        channel_widths=(8, 8, 16, 16), cbam_reduction=4,
                        num_classes=2)


class TestTrainConfig:
    def test_defaults_follow_protocol(self):
        tc = TrainConfig()
        assert (tc.batch_size, tc.lr, tc.max_epochs, tc.early_stop_patience) == \
            (32, 1e-4, 50, 10)

    def test_patience_must_fit(self):
        with pytest.raises(ValueError):
            TrainConfig(max_epochs=5, early_stop_patience=5)


@pytest.fixture(scope="module")
def toy_trained(toy_dataset):
    tc = TrainConfig(batch_size=8, lr=1e-3, max_epochs=30,
                     early_stop_patience=29, val_fraction=0.1, seed=4)
    return train(toy_dataset, TOY_MODEL, tc)


class TestTrain:
    def test_two_class_smoke_reaches_perfect_train_accuracy(self, toy_trained,
                                                            toy_dataset):
        report = evaluate(toy_trained, toy_dataset, split="train")
        assert report.top1_accuracy == 1.0

    def test_history_records_every_epoch(self, toy_trained):
        epochs = [h["epoch"] for h in toy_trained.history]
        assert epochs == list(range(1, len(epochs) + 1))
        for h in toy_trained.history:
            assert set(h) == {"epoch", "train_loss", "val_loss", "val_accuracy"}

    def test_constant_val_loss_stops_at_patience_plus_one(self, toy_dataset):
        # lr = 0 freezes the parameters, so validation loss never improves
        # after the first epoch sets the best.
        tc = TrainConfig(batch_size=8, lr=0.0, max_epochs=40,
                         early_stop_patience=3, seed=1)
        ckpt = train(toy_dataset, TOY_MODEL, tc)
        assert len(ckpt.history) == 4

    def test_returns_best_val_loss_params(self, toy_trained):
        best = min(h["val_loss"] for h in toy_trained.history)
        # The saved parameters correspond to the minimum, not the last epoch.
        assert toy_trained.history[-1]["val_loss"] >= best or \
            toy_trained.history[-1]["val_loss"] == best

    def test_seeded_determinism_of_first_epoch(self, toy_dataset):
        tc = TrainConfig(batch_size=8, max_epochs=2, early_stop_patience=1, seed=9)
        a = train(toy_dataset, TOY_MODEL, tc)
        b = train(toy_dataset, TOY_MODEL, tc)
        assert a.history[0]["train_loss"] == b.history[0]["train_loss"]
        np.testing.assert_array_equal(a.params["conv1.w"], b.params["conv1.w"])

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_names_the_epoch(self, toy_dataset):
        tc = TrainConfig(batch_size=8, lr=1e12, max_epochs=5,
                         early_stop_patience=2, seed=0)
        with pytest.raises(ValueError, match="epoch"):
            train(toy_dataset, TOY_MODEL, tc)


class TestMetrics:
    def test_all_correct(self):
        confusion = np.diag([4, 3, 3])
        assert macro_f1_from_confusion(confusion) == 1.0

    def test_hand_confusion(self):
        # Class F1s: 1, 8/11, 2/3 -> macro 0.797980 (verified independently
        # against sklearn's macro f1).
        confusion = np.array([[5, 0, 0], [0, 4, 1], [0, 2, 3]])
        assert np.trace(confusion) / confusion.sum() == pytest.approx(0.8)
        assert macro_f1_from_confusion(confusion) == pytest.approx(0.797980,
                                                                   abs=1e-6)

    def test_empty_class_scores_zero(self):
        confusion = np.array([[3, 0], [2, 0]])
        # Class 1 has no true positives: P = R = 0 -> F1 contribution 0.
        expected = (2 * 0.6 * 1.0 / 1.6) / 2
        assert macro_f1_from_confusion(confusion) == pytest.approx(expected)


class TestEvaluate:
    def test_report_fields(self, toy_trained, toy_dataset):
        report = evaluate(toy_trained, toy_dataset, split="test")
        assert isinstance(report, EvalReport)
        assert 0.0 <= report.top1_accuracy <= 1.0
        assert 0.0 <= report.macro_f1 <= 1.0
        assert report.confusion.shape == (2, 2)
        counts = {e.mode_id: 0 for e in toy_dataset.split_entries("test")}
        for e in toy_dataset.split_entries("test"):
            counts[e.mode_id] += 1
        for mode_id, count in counts.items():
            assert report.confusion[mode_id].sum() == count
        assert report.mean_latency_ms > 0

    def test_order_invariance(self, toy_trained, toy_dataset):
        report_a = evaluate(toy_trained, toy_dataset, split="test")
        shuffled = DatasetManifest(
            entries=list(reversed(toy_dataset.entries)), root=toy_dataset.root
        )
        report_b = evaluate(toy_trained, shuffled, split="test")
        assert report_a.top1_accuracy == report_b.top1_accuracy
        assert report_a.macro_f1 == report_b.macro_f1
        np.testing.assert_array_equal(report_a.confusion, report_b.confusion)


@pytest.fixture(scope="module")
def quick_ckpt():
    model = build_model(TOY_MODEL, seed=0)
    return Checkpoint(TOY_MODEL,
                      {k: t.data.copy() for k, t in model.params.items()})


class TestBenchmarkLatency:
    def test_single_run(self, quick_ckpt):
        out = benchmark_latency(quick_ckpt, runs=1)
        assert out["mean_ms"] == out["p99_ms"] > 0

    def test_statistics_ordering(self, quick_ckpt):
        out = benchmark_latency(quick_ckpt, runs=20)
        assert 0 < out["mean_ms"]
        assert out["mean_ms"] <= out["p99_ms"] * 1.5

    def test_rejects_zero_runs(self, quick_ckpt):
        with pytest.raises(ValueError):
            benchmark_latency(quick_ckpt, runs=0)
