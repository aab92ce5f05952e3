import numpy as np
import pytest

from conftest import finite_diff, rel_err
from stnn.nn import (
    InterpSpec,
    NormState,
    PoolSpec,
    activation_backward,
    activation_forward,
    avgpool_backward,
    avgpool_forward,
    batchnorm_accumulate,
    batchnorm_backward,
    batchnorm_forward,
    fc_backward,
    fc_forward,
    instancenorm_backward,
    instancenorm_forward,
    interp_backward,
    interp_forward,
    interp_out_shape,
    interp_weights,
    maxpool_backward,
    maxpool_forward,
    param_count,
    pool_out_shape,
    sliced_fc_backward,
    sliced_fc_forward,
)
from stnn.nn.conv import ConvSpec
from stnn.tensor import TensorError


class TestFc:
    def test_hand_case(self):
        y = fc_forward([1.0, 1.0], [[1.0, 2], [3, 4]], [0.0, 0.0])
        assert y.tolist() == [3.0, 7.0]

    def test_identity(self, rng):
        x = rng.normal(size=5)
        y = fc_forward(x, np.eye(5), np.zeros(5))
        assert np.allclose(y, x)
        g = rng.normal(size=5)
        g_in, _, g_b = fc_backward(g, np.eye(5), x)
        assert np.allclose(g_in, g) and np.allclose(g_b, g)

    def test_gradients_match_fd(self, rng):
        w = rng.normal(size=(5, 7))
        b = rng.normal(size=5)
        x = rng.normal(size=7)
        g = rng.normal(size=5)
        g_in, g_w, g_b = fc_backward(g, w, x)
        assert rel_err(g_in, finite_diff(lambda v: np.sum(fc_forward(v, w, b) * g), x)) < 1e-6
        assert rel_err(g_w, finite_diff(lambda v: np.sum(fc_forward(x, v, b) * g), w)) < 1e-6
        assert rel_err(g_b, finite_diff(lambda v: np.sum(fc_forward(x, w, v) * g), b)) < 1e-6

    def test_flattens_structured_input(self, rng):
        x = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(6, 24))
        assert np.allclose(fc_forward(x, w, None), w @ x.reshape(-1))

    def test_size_mismatch(self):
        with pytest.raises(TensorError):
            fc_forward(np.zeros(3), np.zeros((2, 4)), None)


class TestSlicedFc:
    def test_single_slice_reduces_to_fc(self, rng):
        # p axis of size 1: sliced result equals the plain full connection
        x = rng.normal(size=(3, 1, 4))
        a = rng.normal(size=(5, 3, 1, 4))
        y = sliced_fc_forward(x, a, slice_axis=0)
        w = a[:, :, 0, :].reshape(5, -1)
        assert np.allclose(y[:, 0], fc_forward(x[:, 0, :], w, None))

    def test_slice_sum_equals_full_fc(self, rng):
        x = rng.normal(size=(3, 4, 5))
        a = rng.normal(size=(6, 3, 4, 5))
        sliced = sliced_fc_forward(x, a, slice_axis=0)
        full = fc_forward(x, a.reshape(6, -1), None)
        assert np.allclose(sliced.sum(axis=1), full)

    def test_gradients_match_fd(self, rng):
        x = rng.normal(size=(2, 3, 4))
        a = rng.normal(size=(3, 2, 3, 4))
        g = rng.normal(size=(3, 3))
        g_x, g_a = sliced_fc_backward(g, a, x, slice_axis=0)
        assert rel_err(g_x, finite_diff(
            lambda v: np.sum(sliced_fc_forward(v, a, 0) * g), x)) < 1e-6
        assert rel_err(g_a, finite_diff(
            lambda v: np.sum(sliced_fc_forward(x, v, 0) * g), a)) < 1e-6

    def test_second_axis_slice(self, rng):
        x = rng.normal(size=(2, 3, 4))
        a = rng.normal(size=(5, 2, 4, 3))
        y = sliced_fc_forward(x, a, slice_axis=1)
        assert y.shape == (5, 4)


class TestPool:
    def test_spec_example(self):
        spec = PoolSpec(mode="max", window=(2,), stride=(2,))
        y, arg = maxpool_forward([[1.0, 3, 2, 4]], spec, 1)
        assert y.tolist() == [[3.0, 4.0]]
        assert arg.tolist() == [[1, 3]]
        g = maxpool_backward([[5.0, 7.0]], arg, (4,))
        assert g.tolist() == [[0.0, 5.0, 0.0, 7.0]]

    def test_margin_ignored(self):
        spec = PoolSpec(mode="max", window=(2,), stride=(2,))
        assert pool_out_shape((7,), spec) == (3,)
        x = np.arange(7.0)[None]
        y, arg = maxpool_forward(x, spec, 1)
        assert y.shape == (1, 3)
        g = maxpool_backward(np.ones((1, 3)), arg, (7,))
        assert g[0, 6] == 0.0

    def test_out_shape_formula(self):
        for n in range(1, 40):
            for k in range(1, 9):
                if k > n:
                    continue
                spec = PoolSpec(mode="avg", window=(k,), stride=(k,))
                # stride = window special case: floor(n / k)
                assert pool_out_shape((n,), spec) == (n // k,) or n // k == 0
                spec1 = PoolSpec(mode="avg", window=(k,), stride=(1,))
                assert pool_out_shape((n,), spec1) == (n - k + 1,)

    def test_ties_take_first(self):
        spec = PoolSpec(mode="max", window=(3,), stride=(3,))
        y, arg = maxpool_forward([[2.0, 2.0, 1.0]], spec, 1)
        assert arg.tolist() == [[0]]

    def test_avg_forward_backward(self, rng):
        x = rng.normal(size=(2, 6))
        spec = PoolSpec(mode="avg", window=(2,), stride=(2,))
        y = avgpool_forward(x, spec, 1)
        assert np.allclose(y, x.reshape(2, 3, 2).mean(axis=2))
        g = rng.normal(size=(2, 3))
        g_in = avgpool_backward(g, spec, (6,))
        fd = finite_diff(lambda v: np.sum(avgpool_forward(v, spec, 1) * g), x)
        assert rel_err(g_in, fd) < 1e-6

    def test_maxpool_grad_matches_fd(self, rng):
        x = rng.normal(size=(2, 8))
        spec = PoolSpec(mode="max", window=(2,), stride=(2,))
        _, arg = maxpool_forward(x, spec, 1)
        g = rng.normal(size=(2, 4))
        g_in = maxpool_backward(g, arg, (8,))
        fd = finite_diff(lambda v: np.sum(maxpool_forward(v, spec, 1)[0] * g), x)
        assert rel_err(g_in, fd) < 1e-6

    def test_global_pool_squeezes(self, rng):
        x = rng.normal(size=(3, 4, 5))
        spec = PoolSpec(mode="avg", squeeze=True)
        y = avgpool_forward(x, spec, 2)
        assert y.shape == (3,)
        assert np.allclose(y, x.reshape(3, -1).mean(axis=1))

    def test_slice_pool_single_axis(self, rng):
        x = rng.normal(size=(3, 4, 5))
        spec = PoolSpec(mode="avg", pooled_axes=(1,), squeeze=True)
        y = avgpool_forward(x, spec, 2)
        assert y.shape == (3, 4)
        assert np.allclose(y, x.mean(axis=2))

    def test_padded_pool_preserves_resolution(self, rng):
        # window 3, stride 1, padded: the inception pooling branch
        x = rng.normal(size=(2, 6, 6))
        spec = PoolSpec(mode="max", window=(3, 3), stride=(1, 1), padded=True)
        y, arg = maxpool_forward(x, spec, 2)
        assert y.shape == x.shape
        g = rng.normal(size=y.shape)
        g_in = maxpool_backward(g, arg, (6, 6))
        fd = finite_diff(lambda v: np.sum(maxpool_forward(v, spec, 2)[0] * g), x)
        assert rel_err(g_in, fd) < 1e-6

    def test_window_exceeds_axis(self):
        with pytest.raises(TensorError):
            pool_out_shape((3,), PoolSpec(mode="max", window=(5,)))


class TestInterp:
    def test_identity_at_100_percent(self, rng):
        x = rng.normal(size=(2, 5))
        y = interp_forward(x, InterpSpec(percent=100), 1)
        assert np.array_equal(y, x)

    def test_constant_preserved(self):
        for kernel in ("multilinear", "gaussian"):
            spec = InterpSpec(percent=73, kernel=kernel, radius=2 if kernel == "gaussian" else None)
            x = np.full((1, 11), 3.25)
            y = interp_forward(x, spec, 1)
            assert np.allclose(y, 3.25)

    def test_hand_upscale(self):
        y = interp_forward([[0.0, 2.0]], InterpSpec(percent=150), 1)
        assert np.allclose(y, [[0.0, 1.0, 2.0]])

    def test_out_shape(self):
        assert interp_out_shape((10, 8), InterpSpec(percent=50)) == (5, 4)
        assert interp_out_shape((10,), InterpSpec(percent=125)) == (12,)

    def test_gradients_match_fd(self, rng):
        for kernel, radius in (("multilinear", None), ("gaussian", 2)):
            spec = InterpSpec(percent=140, kernel=kernel, radius=radius)
            x = rng.normal(size=(2, 6))
            mats = interp_weights((6,), spec)
            g = rng.normal(size=(2,) + interp_out_shape((6,), spec))
            g_in = interp_backward(g, mats)
            fd = finite_diff(lambda v: np.sum(interp_forward(v, spec, 1) * g), x)
            assert rel_err(g_in, fd) < 1e-6

    def test_weights_row_stochastic(self, rng):
        for percent in (50, 75, 125, 200):
            for m in interp_weights((9,), InterpSpec(percent=percent, kernel="gaussian", radius=2)):
                assert np.allclose(m.sum(axis=1), 1.0)


class TestNorm:
    def test_two_value_example(self):
        st = NormState.for_features(1)
        x = np.array([[1.0], [3.0]])
        y, (xt, d) = batchnorm_forward(x, st)
        assert np.allclose(y.ravel(), [-1.0, 1.0], atol=1e-6)
        assert abs(d[0] - 1.0) < 1e-6

    def test_matching_stats_invert(self, rng):
        x = rng.normal(loc=2.0, scale=3.0, size=(16, 4))
        st = NormState.for_features(4)
        m = x.mean(axis=0)
        d = np.sqrt((x ** 2).mean(axis=0) - m ** 2 + st.eps)
        st.beta, st.gamma = m, d
        y, _ = batchnorm_forward(x, st)
        assert np.allclose(y, x, atol=1e-5)

    def test_gradients_match_fd(self, rng):
        st = NormState.for_features(3)
        st.beta = rng.normal(size=3)
        st.gamma = rng.normal(size=3) + 2.0
        x = rng.normal(size=(4, 3, 2))
        g = rng.normal(size=(4, 3, 2))

        def run(xv, beta, gamma):
            s2 = NormState(beta=beta, gamma=gamma, eps=st.eps)
            y, _ = batchnorm_forward(xv, s2)
            return float(np.sum(y * g))

        y, cache = batchnorm_forward(x, st)
        g_in, g_beta, g_gamma = batchnorm_backward(g, cache, st)
        assert rel_err(g_in, finite_diff(lambda v: run(v, st.beta, st.gamma), x)) < 1e-5
        assert rel_err(g_beta, finite_diff(lambda v: run(x, v, st.gamma), st.beta)) < 1e-6
        assert rel_err(g_gamma, finite_diff(lambda v: run(x, st.beta, v), st.gamma)) < 1e-6

    def test_eval_requires_stats(self):
        st = NormState.for_features(2)
        with pytest.raises(TensorError):
            batchnorm_forward(np.zeros((2, 2)), st, training=False)

    def test_accumulation_reproduces_dataset_stats(self, rng):
        st = NormState.for_features(3)
        batches = [rng.normal(size=(8, 3, 2)) for _ in range(5)]
        for b in batches:
            batchnorm_accumulate(st, b)
        whole = np.concatenate(batches, axis=0)
        m = whole.mean(axis=(0, 2))
        s = (whole ** 2).mean(axis=(0, 2))
        assert np.max(np.abs(st.running_m - m)) < 1e-10
        assert np.max(np.abs(st.running_s - s)) < 1e-10
        y, _ = batchnorm_forward(batches[0], st, training=False)
        assert np.all(np.isfinite(y))

    def test_instance_norm_fd(self, rng):
        x = rng.normal(size=(2, 3, 5))
        g = rng.normal(size=(2, 3, 5))
        y, cache = instancenorm_forward(x)
        g_in = instancenorm_backward(g, cache)
        fd = finite_diff(lambda v: np.sum(instancenorm_forward(v)[0] * g), x)
        assert rel_err(g_in, fd) < 1e-5

    def test_instance_norm_statistics(self, rng):
        x = rng.normal(loc=5.0, scale=2.0, size=(2, 3, 50))
        y, _ = instancenorm_forward(x)
        assert np.max(np.abs(y.mean(axis=2))) < 1e-10
        assert np.max(np.abs(y.std(axis=2) - 1.0)) < 1e-3


class TestActivations:
    def test_relu_values_and_zero_rule(self):
        y, cache = activation_forward("relu", [-1.0, 0.0, 2.0])
        assert y.tolist() == [0.0, 0.0, 2.0]
        g = activation_backward("relu", [4.0, 4.0, 4.0], cache)
        assert g.tolist() == [0.0, 2.0, 4.0]

    def test_leaky_zero_rule(self):
        k = 20
        y, cache = activation_forward("leaky_relu", [-2.0, 0.0, 3.0], slope_index=k)
        assert y.tolist() == [-2.0 * 0.2, 0.0, 3.0]
        g = activation_backward("leaky_relu", [1.0, 1.0, 1.0], cache, slope_index=k)
        assert g.tolist() == [0.2, 0.5 + 0.005 * k, 1.0]

    def test_sigmoid_at_zero(self):
        y, cache = activation_forward("sigmoid", [0.0])
        assert y[0] == 0.5
        g = activation_backward("sigmoid", [1.0], cache)
        assert abs(g[0] - 0.25) < 1e-12

    @pytest.mark.parametrize("kind", ["sigmoid", "tanh"])
    def test_smooth_fd(self, kind, rng):
        x = rng.normal(size=7)
        g = rng.normal(size=7)
        y, cache = activation_forward(kind, x)
        g_in = activation_backward(kind, g, cache)
        fd = finite_diff(lambda v: np.sum(activation_forward(kind, v)[0] * g), x)
        assert rel_err(g_in, fd) < 1e-6

    def test_relu_fd_away_from_kink(self, rng):
        x = rng.normal(size=9)
        x[np.abs(x) < 1e-3] = 0.5
        g = rng.normal(size=9)
        _, cache = activation_forward("relu", x)
        g_in = activation_backward("relu", g, cache)
        fd = finite_diff(lambda v: np.sum(activation_forward("relu", v)[0] * g), x)
        assert rel_err(g_in, fd) < 1e-6


class TestParamCount:
    def test_conv(self):
        assert param_count("conv", spec=ConvSpec(64, (3, 3)), in_features=3) == 1792

    def test_fc(self):
        assert param_count("fc", n_in=25088, n_out=4096) == 102764544

    def test_batchnorm(self):
        assert param_count("batchnorm", n_a=64) == 128

    def test_parameterless(self):
        assert param_count("relu") == 0
