import numpy as np
import pytest

from conftest import finite_diff, rel_err
from stnn.nn import (
    ConvSpec,
    aslet_residue,
    conv_backward_input,
    conv_backward_params,
    conv_forward,
    conv_out_shape,
    conv_param_count,
    padding_for,
)
from stnn.tensor import TensorError, from_array, compose


class TestOutShape:
    def test_strided_padded(self):
        spec = ConvSpec(8, (3,), rate=(2,), padding=((1, 1),))
        assert conv_out_shape((224,), spec) == (112,)

    def test_one_by_one_identity(self):
        spec = ConvSpec(4, (1,))
        assert conv_out_shape((37,), spec) == (37,)

    def test_transposed_example(self):
        spec = ConvSpec(1, (3,), rate=(2,), transposed=True, residue=(1,))
        assert conv_out_shape((4,), spec) == (10,)

    def test_anchor_enumeration_oracle(self, rng):
        # output size equals the number of valid window anchors
        for _ in range(50):
            n = int(rng.integers(4, 30))
            kn = int(rng.integers(1, 5))
            dl = int(rng.integers(1, 3))
            k = int(rng.integers(1, 4))
            span = (kn - 1) * dl
            if span > n - 1:
                continue
            spec = ConvSpec(1, (kn,), rate=(k,), dilation=(dl,))
            anchors = [p for p in range(n) if k * p + span <= n - 1]
            assert conv_out_shape((n,), spec) == (len(anchors),)

    def test_kernel_exceeds_input(self):
        with pytest.raises(TensorError):
            conv_out_shape((3,), ConvSpec(1, (5,)))


class TestPaddingFor:
    def test_examples(self):
        assert padding_for(224, 3, 1, 1) == (2, 1, 1)
        assert padding_for(10, 1, 1, 3) == (0, 0, 0)
        assert padding_for(7, 3, 1, 2) == (2, 1, 1)

    def test_resolution_preserving(self):
        # padded conv keeps floor((N-1)/k) + 1 outputs
        for n in range(2, 65):
            for kn in (1, 3, 5, 7, 9):
                for dl in (1, 2):
                    for k in (1, 2, 3, 4):
                        p, left, right = padding_for(n, kn, dl, k)
                        assert p % 2 == 0
                        assert left + right == p
                        spec = ConvSpec(1, (kn,), rate=(k,), dilation=(dl,),
                                        padding=((left, right),))
                        got = conv_out_shape((n,), spec)
                        assert got == ((n - 1) // k + 1,)
                        if k == 1:
                            assert p == dl * (kn - 1)


class TestAslet:
    def test_worked_case(self):
        assert aslet_residue(10, 3, 1, 2) == 1
        down = ConvSpec(1, (3,), rate=(2,))
        up = ConvSpec(1, (3,), rate=(2,), transposed=True, residue=(1,))
        mid = conv_out_shape((10,), down)
        assert mid == (4,)
        assert conv_out_shape(mid, up) == (10,)

    def test_rate_one_trivial(self):
        assert aslet_residue(9, 3, 1, 1) == 0

    def test_random_invariance_and_necessity(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 65))
            kn = int(rng.integers(1, 8))
            dl = int(rng.integers(1, 3))
            k = int(rng.integers(1, 5))
            if (kn - 1) * dl > n - 1:
                continue
            r_star = aslet_residue(n, kn, dl, k)
            down = ConvSpec(1, (kn,), rate=(k,), dilation=(dl,))
            mid = conv_out_shape((n,), down)
            for r in range(k):
                up = ConvSpec(1, (kn,), rate=(k,), dilation=(dl,),
                              transposed=True, residue=(r,))
                out = conv_out_shape(mid, up)
                assert (out == (n,)) == (r == r_star)


class TestForward:
    def test_hand_convolution(self):
        spec = ConvSpec(1, (3,))
        y = conv_forward([[1.0, 2, 3, 4]], [[[1.0, 0, -1]]], [0.0], spec)
        assert y.tolist() == [[-2.0, -2.0]]

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(3, 7))
        spec = ConvSpec(3, (1,), has_bias=False)
        w = np.eye(3)[:, :, None]
        y = conv_forward(x, w, None, spec)
        assert np.allclose(y, x)

    def test_matches_window_compose_oracle(self, rng):
        # dual route: conv_forward vs sliding-window view composed with the kernel
        for _ in range(30):
            n = int(rng.integers(4, 16))
            kn = int(rng.integers(1, min(4, n) + 1))
            d = int(rng.integers(1, 4))
            if 1 + (n - kn) // d < 1:
                continue
            x = rng.normal(size=n)
            w = rng.normal(size=kn)
            spec = ConvSpec(1, (kn,), rate=(d,), has_bias=False)
            direct = conv_forward(x[None], w[None, None], None, spec)[0]
            window = from_array(x).sliding_window_1d(kn, d)
            via_view = compose(window, from_array(w), 1).to_array()
            assert np.max(np.abs(direct - via_view)) < 1e-12

    def test_2d_window_compose_oracle(self, rng):
        img = rng.normal(size=(4, 4))
        w = rng.normal(size=(2, 2))
        spec = ConvSpec(1, (2, 2), rate=(2, 2), has_bias=False)
        direct = conv_forward(img[None], w[None, None], None, spec)[0]
        windows = from_array(img).sliding_window_2d(2, 2, 2, 2)
        via_view = compose(windows, from_array(w), 2).to_array()
        assert np.max(np.abs(direct - via_view)) < 1e-12

    def test_feature_mismatch(self):
        spec = ConvSpec(1, (3,))
        with pytest.raises(TensorError):
            conv_forward(np.zeros((2, 5)), np.zeros((1, 3, 3)), None, spec)

    def test_batched_equals_loop(self, rng):
        x = rng.normal(size=(3, 2, 6))
        w = rng.normal(size=(4, 2, 3))
        b = rng.normal(size=4)
        spec = ConvSpec(4, (3,), rate=(2,))
        stacked = conv_forward(x, w, b, spec)
        singles = np.stack([conv_forward(x[i], w, b, spec) for i in range(3)])
        assert np.allclose(stacked, singles)


def _random_spec(rng, transposed=False):
    kn = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    dl = int(rng.integers(1, 3))
    padding = rng.choice(["none", "same", "reflect"])
    if transposed and padding == "reflect":
        padding = "same"
    return ConvSpec(
        int(rng.integers(1, 4)), (kn,), rate=(k,), dilation=(dl,),
        transposed=transposed, padding=str(padding),
        has_bias=True,
    )


def _feasible(spec, n):
    try:
        conv_out_shape((n,), spec)
        return True
    except TensorError:
        return False


class TestGradients:
    def test_hand_backward_input(self):
        spec = ConvSpec(1, (3,))
        gx = conv_backward_input([[1.0, 0.0]], [[[1.0, 0, -1]]], spec, (4,))
        assert gx.tolist() == [[1.0, 0.0, -1.0, 0.0]]

    def test_identity_conv_grad(self):
        spec = ConvSpec(1, (1,))
        g = np.array([[3.0, -1.0, 2.0]])
        gx = conv_backward_input(g, np.ones((1, 1, 1)), spec, (3,))
        assert np.allclose(gx, g)

    def test_hand_backward_params(self):
        spec = ConvSpec(1, (3,))
        gw, gb = conv_backward_params([[1.0, 1.0]], [[1.0, 2, 3, 4]], spec)
        assert gw.tolist() == [[[3.0, 5.0, 7.0]]]
        assert gb.tolist() == [2.0]

    def test_bias_gradient_counts_positions(self, rng):
        spec = ConvSpec(2, (3,), padding="same")
        x = rng.normal(size=(1, 10))
        g = np.ones((2, 10))
        _, gb = conv_backward_params(g, x, spec)
        assert np.allclose(gb, [10.0, 10.0])

    @pytest.mark.parametrize("transposed", [False, True])
    def test_matches_finite_differences(self, rng, transposed):
        checked = 0
        while checked < 25:
            spec = _random_spec(rng, transposed)
            n = int(rng.integers(3, 9))
            if not _feasible(spec, n):
                continue
            checked += 1
            f_in = int(rng.integers(1, 3))
            x = rng.normal(size=(f_in, n))
            w = rng.normal(size=(spec.out_features, f_in) + spec.kernel)
            b = rng.normal(size=spec.out_features)
            g_out = rng.normal(size=(spec.out_features,) + conv_out_shape((n,), spec))

            def loss_x(xv):
                return float(np.sum(conv_forward(xv, w, b, spec) * g_out))

            def loss_w(wv):
                return float(np.sum(conv_forward(x, wv, b, spec) * g_out))

            def loss_b(bv):
                return float(np.sum(conv_forward(x, w, bv, spec) * g_out))

            gx = conv_backward_input(g_out, w, spec, (n,))
            gw, gb = conv_backward_params(g_out, x, spec)
            assert rel_err(gx, finite_diff(loss_x, x)) < 1e-6
            assert rel_err(gw, finite_diff(loss_w, w)) < 1e-6
            assert rel_err(gb, finite_diff(loss_b, b)) < 1e-6

    def test_causal_masks_forward_and_grads(self, rng):
        spec = ConvSpec(1, (3,), causal=True, padding="same")
        x = rng.normal(size=(1, 6))
        w = rng.normal(size=(1, 1, 3))
        # taps strictly after the center are dead
        w_masked = w.copy()
        w_masked[..., 2] = 0.0
        y = conv_forward(x, w, None, spec)
        y_masked = conv_forward(x, w_masked, None, ConvSpec(1, (3,), padding="same"))
        assert np.allclose(y, y_masked)
        g = rng.normal(size=y.shape)
        gw, _ = conv_backward_params(g, x, spec)
        assert gw[..., 2] == 0.0

    def test_adjoint_identity(self, rng):
        # <g, f(x)> == <f^T(g), x> for the linear (bias-free) map
        for transposed in (False, True):
            for _ in range(25):
                spec = _random_spec(rng, transposed)
                spec = ConvSpec(spec.out_features, spec.kernel, rate=spec.rate,
                                dilation=spec.dilation, transposed=spec.transposed,
                                padding=spec.padding, has_bias=False)
                n = int(rng.integers(3, 9))
                if not _feasible(spec, n):
                    continue
                f_in = int(rng.integers(1, 3))
                x = rng.normal(size=(f_in, n))
                w = rng.normal(size=(spec.out_features, f_in) + spec.kernel)
                g = rng.normal(size=(spec.out_features,) + conv_out_shape((n,), spec))
                lhs = float(np.sum(g * conv_forward(x, w, None, spec)))
                rhs = float(np.sum(conv_backward_input(g, w, spec, (n,)) * x))
                assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)


class TestParamCount:
    def test_vgg_first_layer(self):
        assert conv_param_count(3, ConvSpec(64, (3, 3))) == 1792

    def test_minimal(self):
        assert conv_param_count(1, ConvSpec(1, (1,))) == 2

    def test_no_bias(self):
        assert conv_param_count(2, ConvSpec(3, (3,), has_bias=False)) == 18
