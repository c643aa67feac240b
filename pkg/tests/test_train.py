"""Normalization, class weights, metrics, and the training loop."""

from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from pulsestress.errors import ConfigError, UsageError
from pulsestress.train import (
    FeatureScaler,
    SplitData,
    TrainConfig,
    class_weights,
    compute_metrics,
    macro_recall,
    train_model,
    zscore_segment,
)


class TestZscoreSegment:
    def test_constant_segment_becomes_zeros(self):
        np.testing.assert_array_equal(zscore_segment(np.full(3840, 4.2)), 0.0)

    def test_standardizes_random_input(self):
        x = np.random.default_rng(0).normal(3.0, 7.0, size=3840)
        z = zscore_segment(x)
        assert abs(z.mean()) <= 1e-6
        assert abs(z.std() - 1.0) <= 1e-4

    def test_scale_invariance(self):
        x = np.random.default_rng(1).standard_normal(3840)
        np.testing.assert_allclose(zscore_segment(5.0 * x), zscore_segment(x),
                                   atol=1e-12)


class TestFeatureScaler:
    def test_train_fold_statistics_after_transform(self):
        rng = np.random.default_rng(2)
        feats = rng.normal(5.0, 3.0, size=(200, 19))
        scaler = FeatureScaler.fit(feats)
        scaled = scaler.transform(feats)
        np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(scaled.std(axis=0), 1.0, atol=1e-3)

    def test_zero_variance_feature_divides_by_one(self):
        feats = np.ones((50, 19))
        feats[:, 3] = 7.0
        scaler = FeatureScaler.fit(feats)
        scaled = scaler.transform(feats)
        assert np.all(np.isfinite(scaled))
        np.testing.assert_array_equal(scaled[:, 3], 0.0)


class TestClassWeights:
    def test_worked_three_class_example(self):
        w = class_weights([100, 50, 50], 200, 3)
        np.testing.assert_allclose(w, [2 / 3, 4 / 3, 4 / 3], atol=5e-5)

    def test_balanced_counts_give_unit_weights(self):
        np.testing.assert_allclose(class_weights([70, 70, 70], 210, 3), 1.0)

    def test_worked_two_class_example(self):
        w = class_weights([10, 90], 100, 2)
        np.testing.assert_allclose(w, [5.0, 5.0 / 9.0], atol=5e-5)

    def test_absent_class_rejected(self):
        with pytest.raises(ConfigError, match="absent"):
            class_weights([100, 0], 100, 2)

    def test_weighted_counts_sum_back_to_total(self):
        # Exact identity in rational arithmetic: sum_i w_i N_i == N.
        rng = np.random.default_rng(3)
        for _ in range(50):
            n_c = int(rng.integers(2, 4))
            counts = rng.integers(1, 500, size=n_c)
            total = int(counts.sum())
            exact = [Fraction(total, n_c * int(c)) * int(c) for c in counts]
            assert sum(exact) == Fraction(total)
            w = class_weights(counts, total, n_c)
            np.testing.assert_allclose(
                w, [float(Fraction(total, n_c * int(c))) for c in counts]
            )
            assert (w * counts).sum() == pytest.approx(total, rel=1e-12)


class TestComputeMetrics:
    def test_perfect_predictions(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        m = compute_metrics(labels, labels, 3)
        assert m.accuracy == 1.0
        assert m.macro_f1 == 1.0
        np.testing.assert_array_equal(np.diag(m.confusion), [2, 2, 2])

    def test_half_right_two_class(self):
        # Confusion [[1,1],[1,1]]: precision = recall = 0.5 for both classes.
        labels = np.array([0, 0, 1, 1])
        preds = np.array([0, 1, 0, 1])
        m = compute_metrics(preds, labels, 2)
        assert m.precision == (0.5, 0.5)
        assert m.recall == (0.5, 0.5)
        assert m.macro_f1 == pytest.approx(0.5)

    def test_single_class_predictions_on_balanced_three_class(self):
        labels = np.repeat([0, 1, 2], 10)
        preds = np.zeros(30, dtype=int)
        m = compute_metrics(preds, labels, 3)
        assert m.accuracy == pytest.approx(1 / 3)
        assert m.macro_f1 == pytest.approx(1 / 6, abs=1e-4)

    def test_agrees_with_counting_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n_c = int(rng.integers(2, 5))
            n = int(rng.integers(1, 200))
            labels = rng.integers(0, n_c, size=n)
            preds = rng.integers(0, n_c, size=n)
            m = compute_metrics(preds, labels, n_c)

            # oracle: direct per-sample counting
            correct = sum(1 for p, t in zip(preds, labels) if p == t)
            assert m.accuracy == pytest.approx(correct / n)
            f1s = []
            for c in range(n_c):
                tp = sum(1 for p, t in zip(preds, labels) if p == c and t == c)
                fp = sum(1 for p, t in zip(preds, labels) if p == c and t != c)
                fn = sum(1 for p, t in zip(preds, labels) if p != c and t == c)
                prec = tp / (tp + fp) if tp + fp else 0.0
                rec = tp / (tp + fn) if tp + fn else 0.0
                assert m.precision[c] == pytest.approx(prec)
                assert m.recall[c] == pytest.approx(rec)
                f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
            assert m.macro_f1 == pytest.approx(np.mean(f1s))

    def test_macro_f1_invariant_under_relabeling(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, size=300)
        preds = rng.integers(0, 3, size=300)
        base = compute_metrics(preds, labels, 3)
        perm = np.array([2, 0, 1])
        permuted = compute_metrics(perm[preds], perm[labels], 3)
        assert permuted.macro_f1 == pytest.approx(base.macro_f1, abs=1e-12)
        assert permuted.accuracy == pytest.approx(base.accuracy, abs=1e-12)

    def test_empty_input_rejected(self):
        with pytest.raises(UsageError, match="empty"):
            compute_metrics(np.array([]), np.array([]), 2)

    def test_confusion_total_matches_examples(self):
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 2, size=57)
        preds = rng.integers(0, 2, size=57)
        m = compute_metrics(preds, labels, 2)
        assert m.n_examples == 57
        assert macro_recall(preds, labels, 2) == pytest.approx(np.mean(m.recall))


def toy_split(seed, n=10, n_classes=3):
    rng = np.random.default_rng(seed)
    return SplitData(
        segments=rng.standard_normal((n, 3840)).astype(np.float32),
        features=rng.standard_normal((n, 19)).astype(np.float32),
        labels=rng.integers(0, n_classes, size=n),
    )


def quiet_config(**overrides) -> TrainConfig:
    base = dict(
        batch_size=500, max_epochs=12, patience=6, lr=0.001, seed=0,
        task="3class", variant="hcnn",
        dropout_input=0.0, dropout_block=0.0, dropout_feature=0.0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_patience_must_be_below_epochs(self):
        with pytest.raises(ConfigError, match="patience"):
            TrainConfig(max_epochs=10, patience=10)

    def test_batch_size_positive(self):
        with pytest.raises(ConfigError, match="batch_size"):
            TrainConfig(batch_size=0)


class TestTrainModel:
    def test_overfits_tiny_set(self):
        data = toy_split(0)
        config = quiet_config(max_epochs=500, patience=499)
        model, history = train_model(config, data, data)
        assert min(history["train_loss"]) < 0.1

    def test_identical_seeds_give_bitwise_identical_runs(self):
        data = toy_split(1)
        config = quiet_config()
        _, h1 = train_model(config, data, data)
        _, h2 = train_model(config, data, data)
        assert h1["train_loss"] == h2["train_loss"]
        assert h1["val_recall"] == h2["val_recall"]
        m1, _ = train_model(config, data, data)
        m2, _ = train_model(config, data, data)
        for k in m1.params:
            np.testing.assert_array_equal(m1.params[k], m2.params[k])

    def test_best_epoch_weights_are_restored(self):
        data = toy_split(2)
        val = toy_split(3)
        config = quiet_config(max_epochs=10, patience=9)
        model, history = train_model(config, data, val)
        best = history["best_epoch"]
        assert history["val_recall"][best] == max(history["val_recall"])
        # earliest best wins ties
        assert all(r < history["val_recall"][best]
                   for r in history["val_recall"][:best])
        # re-running truncated right after the best epoch lands on the same
        # weights (same seed, same per-epoch randomness stream)
        if best + 1 < config.max_epochs:
            truncated = replace(config, max_epochs=best + 1, patience=best)
            ref, _ = train_model(truncated, data, val)
            for k in model.params:
                np.testing.assert_array_equal(model.params[k], ref.params[k])

    def test_patience_stops_training(self):
        data = toy_split(4)
        # constant-label validation makes macro recall flat from some epoch on
        val = toy_split(5, n=6)
        config = quiet_config(max_epochs=60, patience=3)
        _, history = train_model(config, data, val)
        assert len(history["train_loss"]) < 60

    def test_empty_validation_rejected(self):
        data = toy_split(6)
        empty = SplitData(
            segments=np.zeros((0, 3840), np.float32),
            features=np.zeros((0, 19), np.float32),
            labels=np.zeros(0, dtype=np.int64),
        )
        with pytest.raises(ConfigError, match="validation"):
            train_model(quiet_config(), data, empty)

    def test_missing_class_in_training_fold_rejected(self):
        data = toy_split(7)
        data.labels[:] = 1
        with pytest.raises(ConfigError, match="absent"):
            train_model(quiet_config(), data, data)

    def test_partial_final_batch_kept(self):
        data = toy_split(8, n=7)
        config = quiet_config(batch_size=5, max_epochs=2, patience=1)
        _, history = train_model(config, data, data)
        assert len(history["train_loss"]) == 2  # 2 batches/epoch, no crash
