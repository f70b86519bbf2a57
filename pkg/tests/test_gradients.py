import math

import numpy as np
import numpy.testing as npt
import pytest

from lingnn.errors import DimensionError
from lingnn.gradients import (LossKind, ResidualGrad, analytic_gradients, evaluate,
                              finite_difference_gradients, loss_and_gradients,
                              loss_and_residual_grad)
from lingnn.graph import matrix_power
from lingnn.model import GnnParams, init_params, prefix_products

from conftest import gradient_instance, max_rel_error, one_hot_targets, random_instance


def scalar_model(w, b, arch="linear"):
    if arch == "linear":
        return GnnParams("linear", (np.array([[b]]),), (np.array([[w]]),))
    return GnnParams("multiscale", (np.array([[b]]),), (np.zeros((1, 1)), np.array([[w]])))


class TestLoss:
    def test_zero_residual(self):
        Y = np.arange(4.0).reshape(2, 2)
        rg = loss_and_residual_grad(Y, Y, "squared")
        assert rg.loss == 0.0
        npt.assert_array_equal(rg.V, 0.0)

    def test_squared_scalar(self):
        rg = loss_and_residual_grad([[1.0]], [[0.0]], LossKind.SQUARED)
        assert rg.loss == 1.0
        npt.assert_array_equal(rg.V, [[2.0]])

    def test_cross_entropy_symmetric(self):
        rg = loss_and_residual_grad([[0.0], [0.0]], [[1.0], [0.0]], "ce")
        assert rg.loss == pytest.approx(math.log(2), rel=1e-12)
        npt.assert_allclose(rg.V, [[-0.5], [0.5]], rtol=1e-12)

    def test_cross_entropy_is_sum(self):
        Z = np.random.default_rng(0).normal(size=(3, 4))
        Y = one_hot_targets(0, 3, 4)
        total = loss_and_residual_grad(Z, Y, "cross_entropy").loss
        parts = sum(loss_and_residual_grad(Z[:, [i]], Y[:, [i]], "cross_entropy").loss for i in range(4))
        assert total == pytest.approx(parts, rel=1e-12)

    def test_cross_entropy_large_logits_stable(self):
        rg = loss_and_residual_grad([[1000.0], [0.0]], [[0.0], [1.0]], "ce")
        assert rg.loss == pytest.approx(1000.0)
        assert np.all(np.isfinite(rg.V))

    def test_errors(self):
        with pytest.raises(DimensionError):
            loss_and_residual_grad(np.ones((2, 2)), np.ones((2, 3)), "squared")
        with pytest.raises(ValueError):
            loss_and_residual_grad(np.ones((2, 1)), np.array([[0.5], [0.5]]), "ce")


class TestAnalytic:
    def test_zero_v(self):
        X, S, idx, _ = random_instance(0)
        p = init_params("multiscale", 2, 3, 3, 2, "gaussian", 0)
        g = analytic_gradients(p, X, S, idx, ResidualGrad(0.0, np.zeros((2, idx.size))))
        assert g.norm_sq() == 0.0

    @pytest.mark.parametrize("w,b,y", [(1.0, 1.0, 0.0), (0.3, -2.0, 1.5), (-1.2, 0.7, -0.4)])
    def test_scalar_hand_derivative(self, w, b, y):
        p = scalar_model(w, b)
        _, g = loss_and_gradients(p, [[1.0]], [[1.0]], [0], [[y]], "squared")
        assert g.W[0][0, 0] == pytest.approx(2 * (w * b - y) * b, rel=1e-14)
        assert g.B[0][0, 0] == pytest.approx(2 * (w * b - y) * w, rel=1e-14)
        fd = finite_difference_gradients(p, [[1.0]], [[1.0]], [0], [[y]], "squared")
        assert max_rel_error(fd.flatten(), g.flatten()) < 1e-8

    def test_shape_check(self):
        p = init_params("linear", 1, 2, 2, 2)
        with pytest.raises(DimensionError):
            analytic_gradients(p, np.ones((2, 3)), np.eye(3), [0, 1], ResidualGrad(0.0, np.ones((2, 3))))

    @pytest.mark.parametrize("arch", ["linear", "multiscale", "relu", "multiscale_relu"])
    @pytest.mark.parametrize("kind", ["squared", "cross_entropy"])
    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference_oracle(self, arch, kind, seed):
        p, X, S, idx, Y = gradient_instance(seed, arch)
        if kind == "cross_entropy":
            Y = one_hot_targets(seed, Y.shape[0], Y.shape[1])
        _, g = loss_and_gradients(p, X, S, idx, Y, kind)
        fd = finite_difference_gradients(p, X, S, idx, Y, kind)
        assert max_rel_error(g.flatten(), fd.flatten()) < 1e-6

    def test_relu_margin_point(self):
        # all pre-activations bounded away from zero
        rng = np.random.default_rng(5)
        X, S = rng.random((2, 4)) + 0.5, rng.random((4, 4)) + 0.5
        p = GnnParams("relu", (rng.random((3, 2)) + 0.1, -rng.random((2, 3)) - 0.1), (rng.normal(size=(2, 2)),))
        Y = rng.normal(size=(2, 2))
        _, g = loss_and_gradients(p, X, S, [1, 2], Y, "squared")
        fd = finite_difference_gradients(p, X, S, [1, 2], Y, "squared")
        assert max_rel_error(g.flatten(), fd.flatten()) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_output_gradient_factorization(self, seed):
        X, S, idx, Y = random_instance(seed)
        p = init_params("linear", 3, 3, 4, 2, "gaussian(0.8)", seed)
        rg, g = loss_and_gradients(p, X, S, idx, Y, "squared")
        grad_end = rg.V @ (X @ matrix_power(S, 3))[:, idx].T
        npt.assert_allclose(g.W[0], grad_end @ prefix_products(p)[3].T, rtol=1e-10, atol=1e-12)

    def test_norm_zero_iff_stationary(self):
        X, S, idx, Y = random_instance(1)
        p = init_params("linear", 2, 3, 3, 2, "zeros")
        _, g = loss_and_gradients(p, X, S, idx, Y, "squared")
        # all-zero weights are a stationary point of a depth >= 2 linear network
        assert g.norm_sq() == 0.0
        p = init_params("linear", 2, 3, 3, 2, "gaussian", 1)
        _, g = loss_and_gradients(p, X, S, idx, Y, "squared")
        assert g.norm_sq() > 0.0


def test_finite_difference_rejects_bad_eps():
    p = init_params("linear", 1, 1, 1, 1)
    with pytest.raises(ValueError):
        finite_difference_gradients(p, [[1.0]], [[1.0]], [0], [[0.0]], "squared", eps=0.0)


def test_evaluate_matches_manual_loss():
    X, S, idx, Y = random_instance(2)
    p = init_params("multiscale", 2, 3, 3, 2, "gaussian", 2)
    from lingnn.model import forward
    assert evaluate(p, X, S, idx, Y, "squared").loss == pytest.approx(np.sum((forward(p, X, S, idx) - Y) ** 2))
