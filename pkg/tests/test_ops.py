import numpy as np
import pytest

from conftest import central_difference, max_rel_error
from steerfx.ops import (
    AdamState,
    ConvKernel,
    adam_step,
    conv1d_causal_bwd,
    conv1d_causal_fwd,
    film_bwd,
    film_fwd,
    linear_bwd,
    linear_fwd,
    prelu_bwd,
    prelu_fwd,
)


def conv_reference(x, k):
    """Direct-summation oracle for the causal dilated convolution."""
    out_ch, in_ch, taps = k.weights.shape
    n = x.shape[1]
    y = np.zeros((out_ch, n), dtype=np.float64)
    for o in range(out_ch):
        for j in range(n):
            acc = float(k.bias[o])
            for i in range(in_ch):
                for t in range(taps):
                    src = j - k.dilation * (taps - 1 - t)
                    if src >= 0:
                        acc += k.weights[o, i, t] * x[i, src]
            y[o, j] = acc
    return y


class TestConvForward:
    def test_two_tap_running_sum(self):
        k = ConvKernel(np.array([[[1.0, 1.0]]]), np.zeros(1), dilation=1)
        y = conv1d_causal_fwd(np.array([[1.0, 2.0, 3.0]]), k)
        np.testing.assert_array_equal(y, [[1.0, 3.0, 5.0]])

    def test_identity_kernel(self, rng):
        # unit impulse at the last tap passes the input through
        w = np.zeros((1, 1, 4))
        w[0, 0, 3] = 1.0
        k = ConvKernel(w, np.zeros(1), dilation=3)
        x = rng.normal(size=(1, 50))
        np.testing.assert_array_equal(conv1d_causal_fwd(x, k), x)

    def test_dilation_shifts_taps(self):
        k = ConvKernel(np.array([[[1.0, 1.0]]]), np.zeros(1), dilation=3)
        y = conv1d_causal_fwd(np.array([[1.0, 0, 0, 0, 0]]), k)
        np.testing.assert_array_equal(y, [[1.0, 0, 0, 1.0, 0]])

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_direct_summation(self, seed):
        rng = np.random.default_rng(seed)
        out_ch, in_ch = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        taps, dilation = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        n = int(rng.integers(taps * dilation + 1, 40))
        k = ConvKernel(rng.normal(size=(out_ch, in_ch, taps)), rng.normal(size=out_ch), dilation)
        x = rng.normal(size=(in_ch, n))
        np.testing.assert_allclose(conv1d_causal_fwd(x, k), conv_reference(x, k), rtol=1e-12)

    def test_identity_composition(self, rng):
        w = np.zeros((1, 1, 3))
        w[0, 0, 2] = 1.0
        k = ConvKernel(w, np.zeros(1), dilation=2)
        x = rng.normal(size=(1, 30))
        y = x
        for _ in range(5):
            y = conv1d_causal_fwd(y, k)
        np.testing.assert_array_equal(y, x)

    def test_causality_perturbation(self, rng):
        k = ConvKernel(rng.normal(size=(3, 2, 4)), rng.normal(size=3), dilation=2)
        x = rng.normal(size=(2, 64))
        y = conv1d_causal_fwd(x, k)
        for m in (5, 30, 63):
            xp = x.copy()
            xp[:, m] += 1.0
            yp = conv1d_causal_fwd(xp, k)
            np.testing.assert_array_equal(yp[:, :m], y[:, :m])
            rf = k.dilation * (k.kernel_size - 1) + 1
            np.testing.assert_array_equal(yp[:, m + rf :], y[:, m + rf :])

    def test_channel_mismatch(self):
        k = ConvKernel(np.zeros((1, 2, 3)), np.zeros(1))
        with pytest.raises(ValueError, match="channels"):
            conv1d_causal_fwd(np.zeros((3, 10)), k)


class TestConvBackward:
    def test_bias_gradient_is_row_sum(self, rng):
        k = ConvKernel(rng.normal(size=(2, 3, 3)), rng.normal(size=2), dilation=2)
        x = rng.normal(size=(3, 20))
        go = rng.normal(size=(2, 20))
        _, _, grad_b = conv1d_causal_bwd(x, k, go)
        np.testing.assert_allclose(grad_b, go.sum(axis=1), rtol=1e-12)

    def test_finite_differences(self, rng):
        k = ConvKernel(rng.normal(size=(2, 2, 3)), rng.normal(size=2), dilation=2)
        x = rng.normal(size=(2, 12))
        go = rng.normal(size=(2, 12))
        grad_x, grad_w, grad_b = conv1d_causal_bwd(x, k, go)
        fd_x = central_difference(lambda v: float((conv1d_causal_fwd(v, k) * go).sum()), x)
        assert max_rel_error(grad_x, fd_x) < 1e-6
        fd_w = central_difference(
            lambda w: float((conv1d_causal_fwd(x, ConvKernel(w, k.bias, k.dilation)) * go).sum()),
            k.weights,
        )
        assert max_rel_error(grad_w, fd_w) < 1e-6
        fd_b = central_difference(
            lambda b: float((conv1d_causal_fwd(x, ConvKernel(k.weights, b, k.dilation)) * go).sum()),
            k.bias,
        )
        assert max_rel_error(grad_b, fd_b) < 1e-6

    def test_zero_grad_out(self, rng):
        k = ConvKernel(rng.normal(size=(2, 2, 3)), rng.normal(size=2))
        grad_x, grad_w, grad_b = conv1d_causal_bwd(
            rng.normal(size=(2, 10)), k, np.zeros((2, 10))
        )
        assert not grad_x.any() and not grad_w.any() and not grad_b.any()


class TestFilm:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 8))
        np.testing.assert_array_equal(film_fwd(x, np.ones(3), np.zeros(3)), x)

    def test_constant_map(self):
        x = np.ones((2, 4))
        y = film_fwd(x, np.zeros(2), np.array([3.0, -1.0]))
        np.testing.assert_array_equal(y[0], 3.0)
        np.testing.assert_array_equal(y[1], -1.0)

    def test_affine_arithmetic(self):
        y = film_fwd(np.array([[0.5]]), np.array([2.0]), np.array([-1.0]))
        assert y[0, 0] == 0.0

    def test_finite_differences(self, rng):
        x = rng.normal(size=(3, 6))
        gamma, beta = rng.normal(size=3), rng.normal(size=3)
        go = rng.normal(size=(3, 6))
        grad_x, grad_gamma, grad_beta = film_bwd(x, gamma, beta, go)
        assert max_rel_error(
            grad_x, central_difference(lambda v: float((film_fwd(v, gamma, beta) * go).sum()), x)
        ) < 1e-6
        assert max_rel_error(
            grad_gamma,
            central_difference(lambda g: float((film_fwd(x, g, beta) * go).sum()), gamma),
        ) < 1e-6
        assert max_rel_error(
            grad_beta,
            central_difference(lambda b: float((film_fwd(x, gamma, b) * go).sum()), beta),
        ) < 1e-6

    def test_unity_gamma_passes_grad(self, rng):
        go = rng.normal(size=(2, 5))
        grad_x, _, _ = film_bwd(rng.normal(size=(2, 5)), np.ones(2), np.zeros(2), go)
        np.testing.assert_array_equal(grad_x, go)

    def test_zero_input_zero_gamma_grad(self, rng):
        _, grad_gamma, _ = film_bwd(np.zeros((2, 5)), np.ones(2), np.zeros(2), rng.normal(size=(2, 5)))
        assert not grad_gamma.any()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            film_fwd(np.zeros((2, 4)), np.ones(3), np.zeros(3))


class TestLinear:
    def test_zero_conditioning_returns_bias(self, rng):
        w, b = rng.normal(size=(6, 2)), rng.normal(size=6)
        np.testing.assert_array_equal(linear_fwd(np.zeros(2), w, b), b)

    def test_zero_weights_return_bias(self, rng):
        b = rng.normal(size=4)
        for _ in range(3):
            c = rng.normal(size=3)
            np.testing.assert_array_equal(linear_fwd(c, np.zeros((4, 3)), b), b)

    def test_gradients(self, rng):
        c, w, b = rng.normal(size=2), rng.normal(size=(5, 2)), rng.normal(size=5)
        go = rng.normal(size=5)
        grad_c, grad_w, grad_b = linear_bwd(c, w, b, go)
        np.testing.assert_array_equal(grad_b, go)
        np.testing.assert_allclose(grad_w, np.outer(go, c), rtol=1e-12)
        assert max_rel_error(
            grad_c, central_difference(lambda v: float(linear_fwd(v, w, b) @ go), c)
        ) < 1e-6
        assert max_rel_error(
            grad_w, central_difference(lambda v: float(linear_fwd(c, v, b) @ go), w)
        ) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            linear_fwd(np.zeros(3), np.zeros((4, 2)), np.zeros(4))


class TestPrelu:
    def test_unit_slope_identity(self, rng):
        x = rng.normal(size=(2, 10))
        np.testing.assert_array_equal(prelu_fwd(x, np.ones(2)), x)

    def test_zero_slope_is_relu(self):
        y = prelu_fwd(np.array([[-2.0, 3.0]]), np.zeros(1))
        np.testing.assert_array_equal(y, [[0.0, 3.0]])

    def test_quarter_slope(self):
        assert prelu_fwd(np.array([[-2.0]]), np.array([0.25]))[0, 0] == -0.5

    def test_finite_differences_off_kink(self, rng):
        x = rng.normal(size=(3, 8))
        x[np.abs(x) < 0.1] = 0.5  # keep away from the kink
        slopes = rng.uniform(0.1, 0.9, size=3)
        go = rng.normal(size=(3, 8))
        grad_x, grad_slopes = prelu_bwd(x, slopes, go)
        assert max_rel_error(
            grad_x, central_difference(lambda v: float((prelu_fwd(v, slopes) * go).sum()), x)
        ) < 1e-6
        assert max_rel_error(
            grad_slopes,
            central_difference(lambda s: float((prelu_fwd(x, s) * go).sum()), slopes),
        ) < 1e-6

    def test_positive_input_no_slope_grad(self, rng):
        x = np.abs(rng.normal(size=(2, 6))) + 0.1
        _, grad_slopes = prelu_bwd(x, np.full(2, 0.25), rng.normal(size=(2, 6)))
        assert not grad_slopes.any()

    def test_kink_uses_positive_branch(self):
        grad_x, grad_slopes = prelu_bwd(
            np.array([[0.0]]), np.array([0.25]), np.array([[1.0]])
        )
        assert grad_x[0, 0] == 1.0
        assert grad_slopes[0] == 0.0

    def test_zero_grad_out(self, rng):
        grad_x, grad_slopes = prelu_bwd(
            rng.normal(size=(2, 6)), np.full(2, 0.25), np.zeros((2, 6))
        )
        assert not grad_x.any() and not grad_slopes.any()


class TestAdam:
    def test_first_step_magnitude_near_lr(self):
        # after one step: m_hat = g, sqrt(v_hat) = |g|, so |update| ~ lr
        for g0 in (0.5, -3.0, 1e-4):
            params = [np.array([1.0])]
            state = AdamState.for_params(params)
            adam_step(params, [np.array([g0])], state, lr=1e-3)
            update = 1.0 - params[0][0]
            expected = 1e-3 * g0 / (abs(g0) + 1e-8)
            assert update == pytest.approx(expected, rel=1e-9)
            assert state.step_count == 1

    def test_zero_gradient_no_motion(self):
        params = [np.array([2.0, -1.0])]
        state = AdamState.for_params(params)
        adam_step(params, [np.zeros(2)], state, lr=0.1)
        np.testing.assert_array_equal(params[0], [2.0, -1.0])

    def test_deterministic_trajectories(self, rng):
        grads = [rng.normal(size=3) for _ in range(20)]

        def trajectory():
            params = [np.array([0.3, -0.2, 0.9])]
            state = AdamState.for_params(params)
            for g in grads:
                adam_step(params, [g.copy()], state, lr=1e-2)
            return params[0]

        np.testing.assert_array_equal(trajectory(), trajectory())

    def test_rejects_non_finite_gradient(self):
        params = [np.array([1.0])]
        state = AdamState.for_params(params)
        with pytest.raises(FloatingPointError, match="non-finite"):
            adam_step(params, [np.array([np.nan])], state, lr=1e-3)

    def test_rejects_bad_betas(self):
        with pytest.raises(ValueError):
            AdamState(beta1=1.0)

    def test_rejects_nonpositive_lr(self):
        params = [np.array([1.0])]
        with pytest.raises(ValueError):
            adam_step(params, [np.array([1.0])], AdamState.for_params(params), lr=0.0)
