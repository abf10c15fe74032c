"""Metric tests: accuracy, discrepancy, CKA, series statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcfed.errors import ConfigError
from gcfed.metrics import (
    AccuracySeries,
    first_order_stats,
    linear_cka,
    moving_average,
    one_minus_cosine,
    top1_accuracy,
    update_discrepancy,
)
from gcfed.tensor_nn import ArchSpec, LayerParams, ModelParams, build_model, forward


class TestAccuracy:
    def constant_class_model(self, dim, num_classes, winner):
        weight = np.zeros((num_classes, dim))
        bias = np.zeros(num_classes)
        bias[winner] = 1.0
        return ModelParams([LayerParams("fc", weight, bias, "identity")])

    def test_constant_predictor_on_balanced_set(self):
        model = self.constant_class_model(4, 5, winner=2)
        x = np.random.default_rng(0).normal(size=(100, 4))
        y = np.tile(np.arange(5), 20)
        assert top1_accuracy(model, x, y) == pytest.approx(100.0 / 5)

    def test_perfect_predictor(self):
        model = build_model(ArchSpec(kind="mlp", widths=(6, 5, 3)), 3)
        x = np.random.default_rng(1).normal(size=(40, 6))
        y = forward(model, x).argmax(axis=1)
        assert top1_accuracy(model, x, y) == 100.0

    def test_matches_independent_recount(self):
        model = build_model(ArchSpec(kind="mlp", widths=(6, 5, 3)), 4)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(57, 6))
        y = rng.integers(0, 3, size=57)
        logits = forward(model, x)
        correct = 0
        for row, label in zip(logits, y):
            best, best_val = 0, row[0]
            for j in range(1, row.size):
                if row[j] > best_val:  # strict: ties keep the lowest index
                    best, best_val = j, row[j]
            correct += int(best == label)
        assert top1_accuracy(model, x, y) == pytest.approx(100.0 * correct / 57)

    def test_tie_breaks_to_lowest_class(self):
        model = self.constant_class_model(3, 4, winner=0)
        model.layers[0].bias[:] = 0.0  # all logits identical
        x = np.ones((6, 3))
        assert top1_accuracy(model, x, np.zeros(6, dtype=int)) == 100.0

    def test_empty_test_set_rejected(self):
        model = self.constant_class_model(3, 2, winner=0)
        with pytest.raises(ConfigError):
            top1_accuracy(model, np.zeros((0, 3)), np.zeros(0, dtype=int))


class TestDiscrepancy:
    def test_zero_when_partial_equals_true(self):
        tensors = [np.random.default_rng(0).normal(size=(4, 5))]
        assert update_discrepancy(tensors, [t.copy() for t in tensors]) == 0.0

    def test_doubling_gives_one(self):
        t = [np.random.default_rng(1).normal(size=(3, 3))]
        doubled = [2.0 * a for a in t]
        assert update_discrepancy(t, doubled) == pytest.approx(1.0, abs=1e-9)

    def test_identity_of_indiscernibles(self):
        t = [np.ones((2, 2))]
        assert update_discrepancy(t, t) == 0.0
        perturbed = [np.ones((2, 2)) + 1e-9]
        assert update_discrepancy(t, perturbed) > 0.0

    def test_cosine_companion(self):
        t = [np.array([1.0, 0.0])]
        assert one_minus_cosine(t, [np.array([2.0, 0.0])]) == pytest.approx(0.0, abs=1e-12)
        assert one_minus_cosine(t, [np.array([0.0, 3.0])]) == pytest.approx(1.0, abs=1e-12)


class TestLinearCka:
    def test_self_similarity_is_one(self):
        x = np.random.default_rng(3).normal(size=(50, 8))
        assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_and_scale_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(80, 10))
        q, _ = np.linalg.qr(rng.normal(size=(10, 10)))
        assert linear_cka(x, 3.7 * (x @ q)) == pytest.approx(1.0, abs=1e-9)
        assert linear_cka(x, -0.2 * x) == pytest.approx(1.0, abs=1e-9)

    def test_skewed_invertible_map_breaks_similarity(self):
        # only orthogonal-times-scale maps preserve the similarity exactly
        rng = np.random.default_rng(5)
        x = rng.normal(size=(80, 6))
        skew = np.diag([1.0, 10.0, 0.1, 5.0, 1.0, 2.0])
        assert linear_cka(x, x @ skew) < 0.999

    def test_independent_gaussian_scores_low(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1000, 12))
        y = rng.normal(size=(1000, 12))
        assert linear_cka(x, y) < 0.2

    def test_bounded_in_unit_interval(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.normal(size=(30, 5))
            y = rng.normal(size=(30, 9))
            value = linear_cka(x, y)
            assert 0.0 <= value <= 1.0 + 1e-12

    def test_zero_variance_defined_as_zero(self, caplog):
        x = np.ones((10, 3))
        y = np.random.default_rng(8).normal(size=(10, 3))
        with caplog.at_level("WARNING"):
            assert linear_cka(x, y) == 0.0
        assert "zero-variance" in caplog.text

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            linear_cka(np.ones((4, 2)), np.ones((5, 2)))


class TestFirstOrderStats:
    def test_constant_series(self):
        stats = first_order_stats([5.0, 5.0, 5.0, 5.0])
        assert (stats.mean, stats.std, stats.min) == (0.0, 0.0, 0.0)

    def test_two_jump_series(self):
        stats = first_order_stats([0.0, 10.0, 0.0])
        assert stats.mean == 0.0
        assert stats.std == pytest.approx(10.0)
        assert stats.min == -10.0

    def test_too_short_series_rejected(self):
        with pytest.raises(ConfigError):
            first_order_stats([1.0])


class TestMovingAverage:
    def test_constant_is_fixed_point(self):
        np.testing.assert_array_equal(moving_average([2.0] * 6, 4), np.full(6, 2.0))

    def test_window_one_is_identity(self):
        values = [1.0, 4.0, 2.0, 8.0]
        np.testing.assert_array_equal(moving_average(values, 1), values)

    def test_window_three_example(self):
        np.testing.assert_allclose(moving_average([1.0, 2.0, 3.0, 4.0], 3),
                                   [1.0, 1.5, 2.0, 3.0])

    @settings(max_examples=50, deadline=None)
    @given(
        values=st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30),
        window=st.integers(1, 10),
    )
    def test_stays_inside_window_envelope(self, values, window):
        smoothed = moving_average(values, window)
        for t, s in enumerate(smoothed):
            lo = max(0, t - window + 1)
            chunk = values[lo:t + 1]
            assert min(chunk) - 1e-9 <= s <= max(chunk) + 1e-9

    def test_series_wrapper(self):
        series = AccuracySeries([1.0, 2.0, 3.0, 4.0], window=3)
        np.testing.assert_allclose(series.smoothed(), [1.0, 1.5, 2.0, 3.0])
        assert series.stats().mean == pytest.approx(1.0)
