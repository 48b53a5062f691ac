import math

import numpy as np
import numpy.testing as npt
import pytest

from fdcheck import fd_grad, rel_error
from sketch2model.core import RandomStream, ShapeError
from sketch2model.losses import (
    LossWeights,
    ce_performance_loss,
    combined_objective,
    hinge_performance_loss,
    regression_loss_mat,
    regression_loss_vec,
    softmax,
)
from sketch2model.svm import BinaryLinearModel, MultiClassLinearModel


class TestRegressionLoss:
    def test_identical_vectors(self):
        v = np.array([1.0, -2.0, 3.0])
        loss, grad = regression_loss_vec(v, v.copy())
        assert loss == 0.0
        npt.assert_array_equal(grad, np.zeros(3))

    def test_three_four_five(self):
        loss, grad = regression_loss_vec(np.array([3.0, 4.0]), np.zeros(2))
        assert loss == pytest.approx(5.0)
        npt.assert_allclose(grad, [0.6, 0.8])

    def test_matches_direct_formula(self):
        stream = RandomStream(100)
        for _ in range(20):
            a = stream.gaussian(7)
            b = stream.gaussian(7)
            loss, _ = regression_loss_vec(a, b)
            assert loss == pytest.approx(math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))), abs=1e-12)

    def test_gradient_finite_difference(self):
        stream = RandomStream(101)
        for _ in range(10):
            target = stream.gaussian(6)
            point = stream.gaussian(6)
            _, grad = regression_loss_vec(point, target)
            fd = fd_grad(lambda p: regression_loss_vec(p, target)[0], point)
            assert rel_error(grad, fd) < 1e-4

    def test_squared_variant(self):
        stream = RandomStream(102)
        a, b = stream.gaussian(5), stream.gaussian(5)
        loss, grad = regression_loss_vec(a, b, squared=True)
        plain, _ = regression_loss_vec(a, b)
        assert loss == pytest.approx(plain**2)
        fd = fd_grad(lambda p: regression_loss_vec(p, b, squared=True)[0], a)
        assert rel_error(grad, fd) < 1e-4

    def test_matrix_trivial_values(self):
        m = np.array([[3.0, 4.0], [0.0, 0.0]])
        loss, grad = regression_loss_mat(m, np.zeros((2, 2)))
        assert loss == pytest.approx(5.0)
        loss0, grad0 = regression_loss_mat(m, m.copy())
        assert loss0 == 0.0
        npt.assert_array_equal(grad0, np.zeros((2, 2)))
        assert grad.shape == (2, 2)

    def test_matrix_agrees_with_flattened_vector(self):
        stream = RandomStream(103)
        a = stream.gaussian(12).reshape(3, 4)
        b = stream.gaussian(12).reshape(3, 4)
        mat_loss, mat_grad = regression_loss_mat(a, b)
        vec_loss, vec_grad = regression_loss_vec(a.ravel(), b.ravel())
        assert mat_loss == pytest.approx(vec_loss, abs=1e-15)
        npt.assert_allclose(mat_grad.ravel(), vec_grad)

    def test_matrix_gradient_finite_difference(self):
        stream = RandomStream(104)
        a = stream.gaussian(8).reshape(4, 2)
        b = stream.gaussian(8).reshape(4, 2)
        _, grad = regression_loss_mat(a, b)
        fd = fd_grad(lambda p: regression_loss_mat(p, b)[0], a)
        assert rel_error(grad, fd) < 1e-4

    def test_triangle_inequality(self):
        stream = RandomStream(105)
        for _ in range(20):
            a, b, c = (stream.gaussian(6) for _ in range(3))
            ab, _ = regression_loss_vec(a, b)
            bc, _ = regression_loss_vec(b, c)
            ac, _ = regression_loss_vec(a, c)
            assert ac <= ab + bc + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            regression_loss_vec(np.zeros(3), np.zeros(4))
        with pytest.raises(ShapeError):
            regression_loss_mat(np.zeros((2, 2)), np.zeros((2, 3)))


class TestHingeLoss:
    def model(self):
        # weight 1, bias 0 in 1-D: score(x) = x
        return BinaryLinearModel(weights=np.array([1.0, 0.0]))

    def test_trivial_values(self):
        m = self.model()
        loss, _ = hinge_performance_loss(m, np.array([[2.0]]), [1.0])
        assert loss == 0.0
        loss, _ = hinge_performance_loss(m, np.array([[0.0]]), [1.0])
        assert loss == pytest.approx(1.0)
        loss, _ = hinge_performance_loss(m, np.array([[0.5]]), [-1.0])
        assert loss == pytest.approx(1.5)

    def test_batch_mean(self):
        m = self.model()
        loss, _ = hinge_performance_loss(m, np.array([[2.0], [0.0], [0.5]]), [1.0, 1.0, -1.0])
        assert loss == pytest.approx((0.0 + 1.0 + 1.5) / 3)

    def test_kink_uses_zero_branch(self):
        # margin exactly 1: no gradient contribution
        m = self.model()
        loss, grad = hinge_performance_loss(m, np.array([[1.0]]), [1.0])
        assert loss == 0.0
        npt.assert_array_equal(grad, np.zeros(2))

    def test_gradient_finite_difference(self):
        stream = RandomStream(200)
        checked = 0
        while checked < 10:
            w = stream.gaussian(4)
            photos = stream.gaussian(15).reshape(5, 3)
            labels = np.where(stream.uniform(5) < 0.5, -1.0, 1.0)
            model = BinaryLinearModel(weights=w)
            scores = photos @ w[:-1] + w[-1]
            if np.min(np.abs(labels * scores - 1.0)) < 1e-4:
                continue  # too close to a kink for finite differences
            _, grad = hinge_performance_loss(model, photos, labels)
            fd = fd_grad(
                lambda p: hinge_performance_loss(BinaryLinearModel(weights=p), photos, labels)[0], w
            )
            assert rel_error(grad, fd) < 1e-4
            checked += 1

    def test_rejects_bad_labels_and_empty(self):
        m = self.model()
        with pytest.raises(ValueError):
            hinge_performance_loss(m, np.array([[1.0]]), [0.5])
        with pytest.raises(ValueError):
            hinge_performance_loss(m, np.empty((0, 1)), [])
        with pytest.raises(ShapeError):
            hinge_performance_loss(m, np.array([[1.0, 2.0]]), [1.0])


class TestCrossEntropyLoss:
    def test_uniform_softmax_value(self):
        model = MultiClassLinearModel(weights=np.zeros((4, 10)), class_labels=[str(i) for i in range(10)])
        photos = RandomStream(7).gaussian(9).reshape(3, 3)
        onehot = np.zeros((3, 10))
        onehot[np.arange(3), [0, 4, 9]] = 1.0
        loss, _ = ce_performance_loss(model, photos, onehot)
        assert loss == pytest.approx(math.log(10.0), abs=1e-12)

    def test_confident_correct_is_zero(self):
        w = np.zeros((2, 2))
        w[0, 0] = 800.0  # column 0 wins by a huge margin for positive x
        model = MultiClassLinearModel(weights=w, class_labels=["a", "b"])
        loss, _ = ce_performance_loss(model, np.array([[1.0]]), np.array([[1.0, 0.0]]))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_two_class_gap_identity(self):
        for gap in (0.0, 0.7, 3.0):
            w = np.zeros((2, 2))
            w[1, 0] = gap  # biases differ by gap, true class is column 0
            model = MultiClassLinearModel(weights=w, class_labels=["a", "b"])
            loss, _ = ce_performance_loss(model, np.array([[0.0]]), np.array([[1.0, 0.0]]))
            assert loss == pytest.approx(math.log(1.0 + math.exp(-gap)), abs=1e-12)

    def test_softmax_sums_to_one_extreme_scores(self):
        for scores in ([0.0, 0.0], [1e5, -1e5, 3.0], [-745.0, 745.0], [1e8, 1e8 - 1]):
            p = softmax(np.array(scores))
            assert p.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(p >= 0)

    def test_loss_non_negative(self):
        stream = RandomStream(300)
        for _ in range(20):
            w = 100.0 * stream.gaussian(12).reshape(4, 3)
            model = MultiClassLinearModel(weights=w, class_labels=["a", "b", "c"])
            photos = stream.gaussian(6).reshape(2, 3)
            onehot = np.zeros((2, 3))
            onehot[np.arange(2), [int(stream.index(3)) for _ in range(2)]] = 1.0
            loss, _ = ce_performance_loss(model, photos, onehot)
            assert loss >= 0.0

    def test_gradient_finite_difference(self):
        stream = RandomStream(301)
        for _ in range(10):
            w = stream.gaussian(12).reshape(4, 3)
            photos = stream.gaussian(15).reshape(5, 3)
            onehot = np.zeros((5, 3))
            onehot[np.arange(5), [int(stream.index(3)) for _ in range(5)]] = 1.0
            model = MultiClassLinearModel(weights=w, class_labels=["a", "b", "c"])
            _, grad = ce_performance_loss(model, photos, onehot)
            fd = fd_grad(
                lambda p: ce_performance_loss(
                    MultiClassLinearModel(weights=p, class_labels=["a", "b", "c"]), photos, onehot
                )[0],
                w,
            )
            assert rel_error(grad, fd) < 1e-4

    def test_rejects_non_onehot(self):
        model = MultiClassLinearModel(weights=np.zeros((2, 2)), class_labels=["a", "b"])
        with pytest.raises(ValueError):
            ce_performance_loss(model, np.array([[1.0]]), np.array([[1.0, 1.0]]))
        with pytest.raises(ValueError):
            ce_performance_loss(model, np.array([[1.0]]), np.array([[0.5, 0.5]]))


class TestCombinedObjective:
    def test_paper_weights_value(self):
        assert combined_objective(2.0, 0.5, LossWeights()) == pytest.approx(0.52)

    def test_degenerate_weightings(self):
        assert combined_objective(3.0, 0.7, LossWeights(alpha=0.0, beta=1.0)) == pytest.approx(0.7)
        assert combined_objective(3.0, 0.7, LossWeights(alpha=0.01, beta=0.0)) == pytest.approx(0.03)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-0.1)
        with pytest.raises(ValueError):
            LossWeights(alpha=0.0, beta=0.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            combined_objective(float("nan"), 0.0, LossWeights())
