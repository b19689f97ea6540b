import math

import numpy as np
import pytest

from cropclinic import classify
from cropclinic.core import DataError
from cropclinic.fixtures import imbalanced_feature_dataset, make_feature_dataset

from .oracles import finite_difference_gradient


class TestClassWeights:
    def test_minority_capped_majority_diluted(self):
        cw = classify.class_weights([50, 950], cap=10)
        assert cw.weights[0] == pytest.approx(10.0, abs=1e-9)
        assert cw.weights[1] == pytest.approx(1000 / 950, abs=1e-9)

    def test_single_category_is_unit(self):
        cw = classify.class_weights([100])
        assert cw.weights[0] == pytest.approx(1.0, abs=1e-9)

    def test_balanced_four_way(self):
        cw = classify.class_weights([250, 250, 250, 250], cap=10)
        assert np.allclose(cw.weights, 4.0, atol=1e-9)

    def test_zero_count_rejected(self):
        with pytest.raises(DataError, match="category 1"):
            classify.class_weights([10, 0, 5])

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            classify.class_weights([])

    def test_bounded_in_one_to_cap(self, rng):
        for _ in range(50):
            counts = rng.integers(1, 500, size=rng.integers(1, 8))
            cw = classify.class_weights(counts.tolist(), cap=10)
            assert (cw.weights >= 1.0 - 1e-12).all()
            assert (cw.weights <= 10.0 + 1e-12).all()


UNIT2 = classify.ClassWeights(np.ones(2))


class TestWeightedCeLoss:
    def test_symmetric_two_way(self):
        loss = classify.weighted_ce_loss([0.0, 0.0], 0, UNIT2)
        assert loss == pytest.approx(math.log(2), abs=1e-9)

    def test_weighted_hand_case(self):
        weights = classify.ClassWeights(np.array([2.0, 1.0]))
        loss = classify.weighted_ce_loss([math.log(3), 0.0], 0, weights)
        assert loss == pytest.approx(-2 * math.log(3 / 4), abs=1e-9)

    def test_extreme_logits_stable(self):
        loss = classify.weighted_ce_loss([1000.0, 0.0], 0, UNIT2)
        assert 0.0 <= loss < 1e-9
        assert math.isfinite(
            classify.weighted_ce_loss([-1000.0, 0.0], 0, UNIT2)
        )

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            classify.weighted_ce_loss([0.0, 0.0], 2, UNIT2)

    def test_linear_in_weight(self, rng):
        for _ in range(40):
            c = int(rng.integers(2, 8))
            logits = rng.standard_normal(c) * 3
            label = int(rng.integers(c))
            w = float(rng.uniform(0.5, 10))
            unit = classify.ClassWeights(np.ones(c))
            scaled = classify.ClassWeights(np.full(c, w))
            assert classify.weighted_ce_loss(logits, label, scaled) == pytest.approx(
                w * classify.weighted_ce_loss(logits, label, unit), rel=1e-12
            )

    def test_non_negative(self, rng):
        for _ in range(40):
            c = int(rng.integers(2, 6))
            logits = rng.standard_normal(c) * 5
            label = int(rng.integers(c))
            assert classify.weighted_ce_loss(
                logits, label, classify.ClassWeights(np.ones(c))
            ) >= 0.0


class TestLossGradient:
    def test_symmetric_hand_case(self):
        grad = classify.loss_gradient([0.0, 0.0], 0, UNIT2)
        assert grad == pytest.approx([-0.5, 0.5], abs=1e-12)

    def test_gradient_sums_to_zero(self, rng):
        for _ in range(40):
            c = int(rng.integers(2, 10))
            logits = rng.standard_normal(c) * 4
            label = int(rng.integers(c))
            weights = classify.ClassWeights(rng.uniform(1, 10, size=c))
            assert abs(classify.loss_gradient(logits, label, weights).sum()) < 1e-9

    def test_matches_finite_differences(self, rng):
        # the acceptance criterion runs the same check at 100 cases
        for _ in range(100):
            c = int(rng.integers(2, 11))
            logits = rng.standard_normal(c) * 2
            label = int(rng.integers(c))
            weights = classify.ClassWeights(rng.uniform(1, 10, size=c))
            grad = classify.loss_gradient(logits, label, weights)
            fd = finite_difference_gradient(
                lambda v: classify.weighted_ce_loss(v, label, weights),
                logits.tolist(), h=1e-4,
            )
            scale = max(np.abs(fd).max(), 1e-12)
            assert np.abs(grad - np.asarray(fd)).max() / scale < 1e-4


class TestTrainHead:
    def test_gaussian_fixture_accuracy(self, head):
        assert head.meta.val_accuracy >= 0.95

    def test_loss_non_increasing(self, head):
        losses = head.meta.train_losses
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_seeded_determinism_bit_identical(self):
        dataset = make_feature_dataset(3)
        config = classify.HeadTrainConfig(seed=5, epochs=3)
        a = classify.train_head(dataset, config)
        b = classify.train_head(dataset, config)
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.bias.tobytes() == b.bias.tobytes()

    def test_weighted_loss_lifts_minority_recall(self):
        dataset = imbalanced_feature_dataset(3)
        weighted = classify.train_head(
            dataset, classify.HeadTrainConfig(seed=0, use_class_weights=True)
        )
        unweighted = classify.train_head(
            dataset, classify.HeadTrainConfig(seed=0, use_class_weights=False)
        )

        def minority_recall(model):
            logits = (dataset.features.astype(np.float64)
                      @ model.weights.T.astype(np.float64) + model.bias)
            predicted = logits.argmax(axis=1)
            mask = dataset.labels == 1
            return float((predicted[mask] == 1).mean())

        assert minority_recall(weighted) > minority_recall(unweighted)

    def test_single_category_rejected(self):
        dataset = classify.FeatureDataset(
            np.zeros((4, 2), dtype=np.float32), np.zeros(4, dtype=np.int64), 1
        )
        with pytest.raises(DataError):
            classify.train_head(dataset)


class TestPredict:
    def _head(self, weights, bias, names=None):
        weights = np.asarray(weights, dtype=np.float32)
        names = names or [str(i) for i in range(weights.shape[0])]
        return classify.LinearHead(weights, np.asarray(bias, dtype=np.float32), names)

    def test_zero_head_uniform_tiebreak(self):
        head = self._head(np.zeros((3, 4)), np.zeros(3))
        pred = classify.predict(head, np.zeros(4))
        assert pred.probabilities == pytest.approx((1 / 3, 1 / 3, 1 / 3))
        assert pred.label == 0

    def test_bias_dominates(self):
        head = self._head(np.zeros((3, 4)), [0.0, 5.0, 0.0])
        pred = classify.predict(head, np.ones(4))
        assert pred.label == 1
        assert pred.probabilities[1] == pytest.approx(
            math.exp(5) / (math.exp(5) + 2), abs=1e-9
        )

    def test_argmax_invariant_under_common_bias_shift(self, rng):
        weights = rng.standard_normal((4, 6))
        bias = rng.standard_normal(4)
        x = rng.standard_normal(6)
        a = classify.predict(self._head(weights, bias), x)
        b = classify.predict(self._head(weights, bias + 3.25), x)
        assert a.label == b.label

    def test_probabilities_sum_to_one(self, rng):
        head = self._head(rng.standard_normal((5, 8)), rng.standard_normal(5))
        for _ in range(20):
            pred = classify.predict(head, rng.standard_normal(8))
            assert abs(sum(pred.probabilities) - 1.0) < 1e-6

    def test_dimension_mismatch(self):
        head = self._head(np.zeros((2, 4)), np.zeros(2))
        with pytest.raises(DataError):
            classify.predict(head, np.zeros(5))

    def test_top_ordering(self):
        pred = classify.ClassPrediction(1, "b", (0.2, 0.5, 0.3))
        assert pred.top(2) == [(1, 0.5), (2, 0.3)]


class TestPersistence:
    def test_feature_file_round_trip_byte_stable(self, tmp_path):
        dataset = make_feature_dataset(1)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        classify.save_features(dataset, p1)
        loaded = classify.load_features(p1)
        assert np.array_equal(loaded.features, dataset.features)
        assert np.array_equal(loaded.labels, dataset.labels)
        classify.save_features(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_head_round_trip_byte_stable(self, tmp_path, head):
        p1, p2 = tmp_path / "h1.bin", tmp_path / "h2.bin"
        classify.save_head(head, p1)
        loaded = classify.load_head(p1)
        assert np.array_equal(loaded.weights, head.weights)
        assert np.array_equal(loaded.bias, head.bias)
        assert loaded.category_names == head.category_names
        classify.save_head(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"WHAT" + b"\x00" * 20)
        with pytest.raises(classify.FormatError):
            classify.load_features(path)
        with pytest.raises(classify.FormatError):
            classify.load_head(path)

    def test_category_names_table(self, tmp_path):
        path = tmp_path / "names.tsv"
        path.write_text("0\twheat leaf rust\n1\trice blast\n", encoding="utf-8")
        assert classify.load_category_names(path) == ["wheat leaf rust", "rice blast"]

    def test_category_names_must_cover_range(self, tmp_path):
        path = tmp_path / "names.tsv"
        path.write_text("0\ta\n2\tc\n", encoding="utf-8")
        with pytest.raises(classify.FormatError):
            classify.load_category_names(path)
