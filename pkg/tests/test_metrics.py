import csv

import numpy as np
import pytest

from fisheyehdk import autograd as ad
from fisheyehdk.metrics import ConfusionMatrix, inverse_frequency_weights, miou, weighted_cross_entropy
from fisheyehdk.optim import check_gradient

# hand arithmetic on [[5,1,0],[0,4,1],[1,0,3]]: mean of the three IoUs is 208/315
HAND_IOU = (5 / 7, 4 / 6, 3 / 5)
HAND_MIOU = 0.6603174603174603


class TestLoss:
    def test_uniform_two_class(self):
        loss = weighted_cross_entropy(np.zeros((1, 2, 3, 3)), np.zeros((1, 3, 3), int), np.ones(2))
        assert float(loss) == pytest.approx(np.log(2), abs=1e-15)

    def test_saturated(self):
        labels = np.array([[[0, 1], [2, 1]]])
        logits = np.zeros((1, 3, 2, 2))
        np.put_along_axis(logits, labels[:, None], 1000.0, axis=1)
        assert float(weighted_cross_entropy(logits, labels)) < 1e-6

    def test_matches_standard_ce(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(2, 4, 3, 5))
        y = rng.integers(0, 4, size=(2, 3, 5))
        p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
        want = -np.mean(np.log(np.take_along_axis(p, y[:, None], 1)))
        assert float(weighted_cross_entropy(z, y)) == pytest.approx(want, rel=1e-12)

    def test_doubled_weights(self):
        rng = np.random.default_rng(1)
        z, y = rng.normal(size=(1, 3, 4, 4)), rng.integers(0, 3, size=(1, 4, 4))
        a = float(weighted_cross_entropy(z, y, np.ones(3)))
        assert float(weighted_cross_entropy(z, y, 2 * np.ones(3))) == pytest.approx(2 * a, rel=1e-14)

    def test_ignored_pixels_excluded(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(1, 2, 2, 2))
        y = np.array([[[0, 255], [1, 255]]])
        want = float(weighted_cross_entropy(z[:, :, :, :1], y[:, :, :1]))
        assert float(weighted_cross_entropy(z, y)) == pytest.approx(want)

    def test_all_ignored(self):
        with pytest.raises(ValueError):
            weighted_cross_entropy(np.zeros((1, 2, 2, 2)), np.full((1, 2, 2), 255))

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            weighted_cross_entropy(np.zeros((1, 2, 2, 2)), np.full((1, 2, 2), 2))

    def test_gradient_sums_to_zero_per_pixel(self):
        rng = np.random.default_rng(3)
        z = ad.Tensor(rng.normal(size=(2, 4, 3, 3)), requires_grad=True)
        y = rng.integers(0, 4, size=(2, 3, 3))
        y[0, 0, 0] = 255
        weighted_cross_entropy(z, y, rng.uniform(0.5, 2, 4)).backward()
        np.testing.assert_allclose(z.grad.sum(axis=1), 0.0, atol=1e-15)
        np.testing.assert_array_equal(z.grad[0, :, 0, 0], 0.0)

    def test_gradient_against_differences(self):
        rng = np.random.default_rng(4)
        y = rng.integers(0, 3, size=(1, 4, 4))
        w = rng.uniform(0.5, 2, 3)
        _, _, err = check_gradient(lambda t: weighted_cross_entropy(t, y, w), rng.normal(size=(1, 3, 4, 4)))
        assert err < 1e-6


class TestWeights:
    def test_balanced(self):
        np.testing.assert_allclose(inverse_frequency_weights(np.array([0, 1, 0, 1]), 2), [1.0, 1.0])

    def test_rare_class_upweighted(self):
        w = inverse_frequency_weights(np.array([0] * 9 + [1]), 2)
        assert w[1] > w[0]

    def test_clamped_and_absent(self):
        w = inverse_frequency_weights(np.array([0] * 999 + [1]), 3)
        assert w[1] == 10.0 and w[2] == 10.0 and w[0] >= 0.1


class TestConfusion:
    def test_perfect(self):
        y = np.array([[0, 1], [2, 2]])
        cm = ConfusionMatrix(3).accumulate(y, y)
        np.testing.assert_array_equal(cm.counts, np.diag([1, 1, 2]))
        assert cm.miou() == 1.0 and cm.mean_acc() == 1.0 and cm.pixel_acc() == 1.0

    def test_all_ignored_unchanged(self):
        cm = ConfusionMatrix(2).accumulate(np.zeros((2, 2), int), np.full((2, 2), 255))
        assert cm.total == 0
        with pytest.raises(ValueError):
            cm.miou()

    def test_two_by_two(self):
        truth = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        cm = ConfusionMatrix(2).accumulate(pred, truth)
        np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 2]])
        np.testing.assert_allclose(cm.per_class_iou(), [1 / 2, 2 / 3])

    def test_swapped(self):
        truth = np.array([0, 0, 1, 1])
        cm = ConfusionMatrix(2).accumulate(1 - truth, truth)
        np.testing.assert_array_equal(cm.per_class_iou(), [0.0, 0.0])

    def test_hand_matrix(self):
        cm = ConfusionMatrix(3, counts=[[5, 1, 0], [0, 4, 1], [1, 0, 3]])
        np.testing.assert_allclose(cm.per_class_iou(), HAND_IOU, rtol=1e-15)
        assert miou(cm) == pytest.approx(HAND_MIOU, rel=1e-14)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        counts = rng.integers(0, 20, size=(5, 5))
        perm = rng.permutation(5)
        a = ConfusionMatrix(5, counts=counts).miou()
        b = ConfusionMatrix(5, counts=counts[perm][:, perm]).miou()
        assert a == pytest.approx(b, rel=1e-14)

    def test_empty_class_excluded(self):
        cm = ConfusionMatrix(3, counts=[[2, 0, 0], [0, 2, 0], [0, 0, 0]])
        assert np.isnan(cm.per_class_iou()[2])
        assert cm.miou() == 1.0

    def test_total_counts_non_ignored(self):
        rng = np.random.default_rng(6)
        truth = rng.integers(0, 3, size=(4, 8, 8))
        truth[truth == 2] = 255
        cm = ConfusionMatrix(3).accumulate(rng.integers(0, 3, size=truth.shape), truth)
        assert cm.total == int((truth != 255).sum())
        assert (cm.counts >= 0).all()

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(2).accumulate(np.array([0, 2]), np.array([0, 1]))

    def test_addition(self):
        a = ConfusionMatrix(2, counts=[[1, 0], [0, 1]])
        b = ConfusionMatrix(2, counts=[[0, 2], [1, 0]])
        np.testing.assert_array_equal((a + b).counts, [[1, 2], [1, 1]])

    def test_csv(self, tmp_path):
        cm = ConfusionMatrix(3, counts=[[5, 1, 0], [0, 4, 1], [1, 0, 3]])
        path = tmp_path / "m.csv"
        cm.to_csv(path, ["road", "car", "sky"])
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["class", "iou", "acc"]
        assert [r[0] for r in rows[1:]] == ["road", "car", "sky", "mean"]
        assert float(rows[-1][1]) == pytest.approx(HAND_MIOU, abs=1e-6)
        assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]
