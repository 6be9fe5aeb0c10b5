import numpy as np
import pytest

from src.app.core.errors import NumericalError, ShapeError
from src.engine.nn.activations import activate, activation_derivative
from src.engine.nn.gradcheck import numerical_gradient, relative_error
from src.engine.nn.layers import (
    LayerParams,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2d_backward,
    conv_transpose2d_forward,
    dense_backward,
    dense_forward,
    upsample2d_backward,
    upsample2d_forward,
)
from src.engine.nn.losses import loss_mse_mae
from src.engine.nn.optim import adam_step

GRAD_TOL = 1e-4


def _params(rng, weight_shape, bias_size):
    return LayerParams(rng.normal(0.0, 0.5, size=weight_shape), rng.normal(0.0, 0.1, size=bias_size), role="test")


class TestConv2D:
    def test_zero_kernel_gives_zero(self):
        params = LayerParams(np.zeros((1, 1, 3, 3)), np.zeros(1))
        out = conv2d_forward(np.ones((1, 3, 3)), params)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 0.0

    def test_delta_kernel_is_identity(self):
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        x = np.arange(1.0, 10.0).reshape(1, 3, 3)
        out = conv2d_forward(x, LayerParams(kernel, np.zeros(1)), stride=1, padding=1)
        np.testing.assert_array_equal(out, x)

    def test_ones_kernel_sums_windows(self):
        out = conv2d_forward(np.ones((1, 4, 4)), LayerParams(np.ones((1, 1, 3, 3)), np.zeros(1)))
        np.testing.assert_array_equal(out, np.full((1, 2, 2), 9.0))

    @pytest.mark.parametrize("size,stride,padding", [(5, 1, 1), (5, 2, 1), (4, 2, 0), (5, 1, 0)])
    def test_output_size_formula(self, rng, size, stride, padding):
        params = _params(rng, (2, 1, 3, 3), 2)
        out = conv2d_forward(rng.random((1, size, size)), params, stride, padding)
        expected = (size + 2 * padding - 3) // stride + 1
        assert out.shape == (2, expected, expected)

    def test_channel_mismatch_is_rejected(self, rng):
        with pytest.raises(ShapeError, match="channels"):
            conv2d_forward(rng.random((2, 4, 4)), _params(rng, (1, 1, 3, 3), 1))

    def test_kernel_larger_than_input_is_rejected(self, rng):
        with pytest.raises(ShapeError):
            conv2d_forward(rng.random((1, 2, 2)), _params(rng, (1, 1, 3, 3), 1))

    def test_zero_upstream_gives_zero_gradients(self, rng):
        params = _params(rng, (2, 2, 3, 3), 2)
        dx = conv2d_backward(rng.random((2, 5, 5)), params, np.zeros((2, 5, 5)), 1, 1, "tanh")
        assert not dx.any()
        assert not params.grad_weights.any()
        assert not params.grad_biases.any()

    def test_one_by_one_kernel_weight_gradient(self, rng):
        x = rng.random((1, 4, 4))
        upstream = rng.random((1, 4, 4))
        params = LayerParams(np.array([[[[0.7]]]]), np.zeros(1))
        conv2d_backward(x, params, upstream)
        assert params.grad_weights[0, 0, 0, 0] == pytest.approx(float(np.sum(x * upstream)), rel=1e-12)

    @pytest.mark.parametrize("stride,padding,activation", [(1, 1, "tanh"), (2, 1, "elu"), (1, 0, "sigmoid"), (2, 0, "linear")])
    def test_gradients_match_finite_differences(self, rng, stride, padding, activation):
        x = rng.normal(size=(2, 5, 5))
        params = _params(rng, (2, 2, 3, 3), 2)
        upstream = rng.normal(size=conv2d_forward(x, params, stride, padding, activation).shape)

        def loss():
            return float(np.sum(upstream * conv2d_forward(x, params, stride, padding, activation)))

        dx = conv2d_backward(x, params, upstream, stride, padding, activation)
        assert relative_error(dx, numerical_gradient(loss, x)) < GRAD_TOL
        assert relative_error(params.grad_weights, numerical_gradient(loss, params.weights)) < GRAD_TOL
        assert relative_error(params.grad_biases, numerical_gradient(loss, params.biases)) < GRAD_TOL


class TestConvTranspose2D:
    @pytest.mark.parametrize("out_hw", [(5, 5), (6, 6), (5, 6)])
    def test_gradients_match_finite_differences(self, rng, out_hw):
        x = rng.normal(size=(2, 3, 3))
        params = _params(rng, (2, 1, 3, 3), 1)
        upstream = rng.normal(size=(1,) + out_hw)

        def loss():
            return float(np.sum(upstream * conv_transpose2d_forward(x, params, out_hw, activation="tanh")))

        dx = conv_transpose2d_backward(x, params, upstream, out_hw, activation="tanh")
        assert relative_error(dx, numerical_gradient(loss, x)) < GRAD_TOL
        assert relative_error(params.grad_weights, numerical_gradient(loss, params.weights)) < GRAD_TOL
        assert relative_error(params.grad_biases, numerical_gradient(loss, params.biases)) < GRAD_TOL

    def test_is_the_adjoint_of_the_strided_conv(self, rng):
        # <conv(x), y> == <x, convT(y)> for the same kernel, without bias or activation
        kernel = rng.normal(size=(1, 1, 3, 3))
        x = rng.normal(size=(1, 5, 5))
        y = rng.normal(size=(1, 3, 3))
        forward = conv2d_forward(x, LayerParams(kernel, np.zeros(1)), stride=2, padding=1)
        transposed = conv_transpose2d_forward(y, LayerParams(kernel, np.zeros(1)), (5, 5), stride=2, padding=1)
        assert np.sum(forward * y) == pytest.approx(np.sum(x * transposed), rel=1e-12)

    def test_target_shape_must_map_back(self, rng):
        with pytest.raises(ShapeError, match="preimage"):
            conv_transpose2d_forward(rng.random((1, 3, 3)), _params(rng, (1, 1, 3, 3), 1), (9, 9))


class TestDense:
    def test_identity_weights(self, rng):
        x = rng.random(5)
        np.testing.assert_array_equal(dense_forward(x, LayerParams(np.eye(5), np.zeros(5))), x)

    def test_zero_weights_give_the_bias(self, rng):
        out = dense_forward(rng.random(4), LayerParams(np.zeros((3, 4)), np.full(3, 2.5)))
        np.testing.assert_array_equal(out, np.full(3, 2.5))

    def test_matches_naive_matvec(self, rng):
        w, b, x = rng.normal(size=(6, 8)), rng.normal(size=6), rng.normal(size=8)
        expected = np.array([sum(w[i, j] * x[j] for j in range(8)) + b[i] for i in range(6)])
        np.testing.assert_allclose(dense_forward(x, LayerParams(w, b)), expected, rtol=0, atol=1e-12)

    def test_zero_upstream_gives_zero_gradients(self, rng):
        params = _params(rng, (3, 4), 3)
        dx = dense_backward(rng.random(4), params, np.zeros(3), "elu")
        assert not dx.any() and not params.grad_weights.any() and not params.grad_biases.any()

    def test_sigmoid_derivative_at_zero_is_a_quarter(self):
        params = LayerParams(np.zeros((1, 1)), np.zeros(1))
        dx = dense_backward(np.array([3.0]), params, np.array([1.0]), "sigmoid")
        assert params.grad_biases[0] == pytest.approx(0.25)
        assert params.grad_weights[0, 0] == pytest.approx(0.75)
        assert dx[0] == 0.0

    @pytest.mark.parametrize("activation", ["linear", "tanh", "elu", "sigmoid"])
    def test_gradients_match_finite_differences(self, rng, activation):
        x = rng.normal(size=(3, 8))
        params = _params(rng, (5, 8), 5)
        upstream = rng.normal(size=(3, 5))

        def loss():
            return float(np.sum(upstream * dense_forward(x, params, activation)))

        dx = dense_backward(x, params, upstream, activation)
        assert relative_error(dx, numerical_gradient(loss, x)) < GRAD_TOL
        assert relative_error(params.grad_weights, numerical_gradient(loss, params.weights)) < GRAD_TOL
        assert relative_error(params.grad_biases, numerical_gradient(loss, params.biases)) < GRAD_TOL

    def test_length_mismatch_is_rejected(self, rng):
        with pytest.raises(ShapeError):
            dense_forward(rng.random(3), _params(rng, (2, 4), 2))


class TestUpsample2D:
    def test_crops_to_odd_shapes(self):
        x = np.arange(6.0).reshape(1, 2, 3)
        out = upsample2d_forward(x, (3, 5))
        assert out.shape == (1, 3, 5)
        assert out[0, 2, 4] == x[0, 1, 2]

    def test_backward_is_the_adjoint(self, rng):
        x, g = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 5, 6))
        assert np.sum(upsample2d_forward(x, (5, 6)) * g) == pytest.approx(np.sum(x * upsample2d_backward(g, (3, 3))), rel=1e-12)

    def test_rejects_targets_far_from_twice_the_input(self, rng):
        with pytest.raises(ShapeError):
            upsample2d_forward(rng.random((1, 3, 3)), (8, 8))


class TestActivations:
    def test_closed_forms(self):
        assert activate("elu", np.array(-1.0)) == pytest.approx(np.exp(-1.0) - 1.0)
        assert activate("sigmoid", np.array(0.0)) == 0.5
        assert activate("relu", np.array(-2.0)) == 0.0
        assert activate("relu", np.array(1.5)) == 1.5

    @pytest.mark.parametrize("name", ["elu", "sigmoid", "tanh", "linear"])
    def test_derivative_matches_finite_differences(self, name):
        z = np.linspace(-2.0, 2.0, 8)
        numeric = (activate(name, z + 1e-6) - activate(name, z - 1e-6)) / 2e-6
        np.testing.assert_allclose(activation_derivative(name, z, activate(name, z)), numeric, atol=1e-8)


class TestLosses:
    def test_equal_inputs(self):
        report = loss_mse_mae(np.ones(4), np.ones(4))
        assert (report.mse, report.mae) == (0.0, 0.0)

    @pytest.mark.parametrize("pred,target,mse,mae", [([1.0, 1.0], [0.0, 2.0], 1.0, 1.0), ([2.0], [0.0], 4.0, 2.0)])
    def test_hand_values(self, pred, target, mse, mae):
        report = loss_mse_mae(np.array(pred), np.array(target))
        assert report.mse == pytest.approx(mse) and report.mae == pytest.approx(mae)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_mse_mae(np.ones(3), np.ones(4))


class TestAdam:
    def _scalar(self, grad=0.0):
        params = LayerParams(np.zeros((1, 1)), np.zeros(1))
        params.grad_weights[...] = grad
        return params

    def test_zero_gradient_leaves_parameters(self):
        params = self._scalar(0.0)
        adam_step(params)
        assert params.weights[0, 0] == 0.0
        assert params.step == 1

    def test_first_step_is_bias_corrected(self):
        params = self._scalar(1.0)
        adam_step(params)
        assert params.weights[0, 0] == pytest.approx(-1e-3 / (1.0 + 1e-8), rel=1e-12)
        assert not params.grad_weights.any()

    def test_second_step_matches_scalar_oracle(self):
        params = self._scalar(1.0)
        adam_step(params)
        params.grad_weights[...] = 1.0
        adam_step(params)

        w, m, v = 0.0, 0.0, 0.0
        for t in (1, 2):
            m = 0.9 * m + 0.1
            v = 0.999 * v + 0.001
            w -= 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert params.weights[0, 0] == pytest.approx(w, rel=1e-12)
        assert params.step == 2

    def test_non_finite_gradient_raises(self):
        params = self._scalar(np.nan)
        params.role = "encoder.conv0"
        with pytest.raises(NumericalError, match="layer=encoder.conv0"):
            adam_step(params)
