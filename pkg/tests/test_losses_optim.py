import math

import numpy as np
import pytest

from conftest import finite_diff, rel_err
from stnn.losses import (
    CenterLossHead,
    Fp68Head,
    SoftMaxHead,
    center_loss,
    center_update,
    fp68_loss,
    make_loss_head,
    softmax_loss,
    softmax_stable,
)
from stnn.optim import Adam, Momentum, RegretTracker, make_optimizer
from stnn.tensor import TensorError


class TestSoftMax:
    def test_two_way_tie(self):
        loss, grad = softmax_loss([0.0, 0.0], 0)
        assert abs(loss - math.log(2)) < 1e-12
        assert np.allclose(grad, [-0.5, 0.5])

    def test_confident_prediction(self):
        loss, grad = softmax_loss([50.0, 0.0, 0.0], 0)
        assert loss < 1e-20
        assert np.max(np.abs(grad)) < 1e-20

    def test_overflow_plain_vs_stable(self):
        with np.errstate(over="ignore", invalid="ignore"):
            loss_plain, _ = softmax_loss([1000.0, 0.0], 0)
        loss_stable, _ = softmax_stable([1000.0, 0.0], 0)
        assert not np.isfinite(loss_plain) or np.isnan(loss_plain)
        assert np.isfinite(loss_stable) and abs(loss_stable) < 1e-12

    def test_values_agree_when_safe(self, rng):
        for _ in range(50):
            y = rng.uniform(-50, 50, size=6)
            t = int(rng.integers(0, 6))
            lp, _ = softmax_loss(y, t)
            ls, _ = softmax_stable(y, t)
            assert abs(lp - ls) <= 1e-12 * max(1.0, abs(lp))

    def test_gradient_sums(self, rng):
        for _ in range(30):
            y = rng.normal(size=5)
            t = int(rng.integers(0, 5))
            _, gp = softmax_loss(y, t)
            assert abs(gp.sum()) < 1e-12
            _, gs = softmax_stable(y, t)
            am = int(np.argmax(y))
            assert abs(gs.sum() + gp[am]) < 1e-12

    def test_plain_grad_matches_fd(self, rng):
        y = rng.normal(size=6)
        t = 2
        _, g = softmax_loss(y, t)
        fd = finite_diff(lambda v: softmax_loss(v, t)[0], y)
        assert rel_err(g, fd) < 1e-6

    def test_stable_grad_matches_fd_off_argmax(self, rng):
        y = rng.normal(size=6)
        t, am = 1, int(np.argmax(y))
        _, g = softmax_stable(y, t)
        fd = finite_diff(lambda v: softmax_stable(v, t)[0], y)
        mask = np.arange(6) != am
        assert rel_err(g[mask], fd[mask]) < 1e-6


class TestCenterLoss:
    def test_lambda_zero_is_softmax(self, rng):
        y = rng.normal(size=(2, 4))
        x = rng.normal(size=(2, 3))
        c = rng.normal(size=(4, 3))
        t = [1, 3]
        loss, gs, gf = center_loss(x, y, t, c, lam=0.0)
        ref = sum(softmax_loss(y[b], t[b])[0] for b in range(2))
        assert abs(loss - ref) < 1e-12
        assert np.allclose(gf, 0.0)

    def test_centered_feature_contributes_nothing(self, rng):
        c = rng.normal(size=(3, 4))
        x = c[[2]]
        y = rng.normal(size=(1, 3))
        loss, _, gf = center_loss(x, y, [2], c, lam=0.7)
        base = softmax_loss(y[0], 2)[0]
        assert abs(loss - base) < 1e-12
        assert np.allclose(gf, 0.0)

    def test_gradients_match_fd(self, rng):
        x = rng.normal(size=(3, 4))
        y = rng.normal(size=(3, 5))
        c = rng.normal(size=(5, 4))
        t = [0, 4, 2]
        _, gs, gf = center_loss(x, y, t, c, lam=0.3)
        fd_s = finite_diff(lambda v: center_loss(x, v, t, c, 0.3)[0], y)
        fd_f = finite_diff(lambda v: center_loss(v, y, t, c, 0.3)[0], x)
        assert rel_err(gs, fd_s) < 1e-6
        assert rel_err(gf, fd_f) < 1e-6

    def test_ema_update(self):
        c = np.zeros((2, 2))
        c2 = center_update(c, [[1.0, 1.0]], [0], weight=0.3)
        assert np.allclose(c2[0], [0.3, 0.3])
        assert np.allclose(c2[1], 0.0)

    def test_bad_class_index(self):
        with pytest.raises(TensorError):
            center_loss(np.zeros((1, 2)), np.zeros((1, 3)), [5], np.zeros((3, 2)), 0.1)


class TestFp68:
    def test_perfect_prediction(self, rng):
        gt = rng.normal(size=(68, 2))
        loss, grad = fp68_loss(gt, gt)
        assert loss == 0.0
        assert np.allclose(grad, 0.0)

    def test_unit_offset(self, rng):
        gt = rng.normal(size=(68, 2))
        inter = np.linalg.norm(gt[20] - gt[52])
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        pred = gt + inter * direction
        loss, _ = fp68_loss(pred, gt)
        assert abs(loss - 1.0) < 1e-12

    def test_gradient_matches_fd(self, rng):
        gt = rng.normal(size=(68, 2))
        pred = gt + rng.normal(size=(68, 2))
        _, grad = fp68_loss(pred, gt)
        fd = finite_diff(lambda v: fp68_loss(v, gt)[0], pred)
        assert rel_err(grad, fd) < 1e-6

    def test_coincident_eyes_rejected(self):
        gt = np.zeros((68, 2))
        with pytest.raises(TensorError):
            fp68_loss(gt, gt)


class TestHeads:
    def test_softmax_head_batched(self, rng):
        head = SoftMaxHead(label="score")
        scores = rng.normal(size=(3, 4))
        loss, grads = head({"score": scores}, [0, 1, 2])
        ref = sum(softmax_loss(scores[b], b)[0] for b in range(3))
        assert abs(loss - ref) < 1e-12
        assert grads["score"].shape == (3, 4)

    def test_center_head_tracks_centers(self, rng):
        head = CenterLossHead(classes=3, lam=0.1)
        out = {"score": rng.normal(size=(2, 3)), "norm": rng.normal(size=(2, 5))}
        loss, grads = head(out, [0, 1])
        assert set(grads) == {"score", "norm"}
        head.update_centers(out, [0, 1])
        assert head.centers.shape == (3, 5)
        assert not np.allclose(head.centers[0], 0.0)

    def test_factory(self):
        assert isinstance(make_loss_head("SoftMax eq", "score"), SoftMaxHead)
        assert make_loss_head("stable SoftMax", "score").stable
        assert isinstance(make_loss_head("eq kn-loss", "score", classes=7), CenterLossHead)
        assert isinstance(make_loss_head("FP68 landmark", "landmarks"), Fp68Head)
        with pytest.raises(TensorError):
            make_loss_head("eq pose-loss", "poseParams")


class TestMomentum:
    def test_beta_zero_is_sgd(self, rng):
        opt = Momentum(alpha=0.1, beta=0.0)
        theta = {"w": np.array([1.0, -2.0])}
        g = {"w": np.array([0.5, 0.5])}
        opt.step(theta, g)
        assert np.allclose(theta["w"], [0.95, -2.05])

    def test_matches_hand_recursion(self, rng):
        opt = Momentum(alpha=0.1, beta=0.9)
        theta = {"w": np.zeros(1)}
        m = np.zeros(1)
        w = np.zeros(1)
        for step in range(10):
            g = np.array([float(step + 1)])
            opt.step(theta, {"w": g})
            m = 0.9 * m + 0.1 * g
            w = w - m
            assert np.allclose(theta["w"], w)

    def test_lookahead_point(self):
        opt = Momentum(alpha=0.5, beta=0.5, nesterov=True)
        theta = {"w": np.array([1.0])}
        opt.step(theta, {"w": np.array([1.0])})
        look = opt.lookahead("w", theta["w"])
        assert np.allclose(look, theta["w"] - 0.5 * 0.5)

    def test_shape_mismatch(self):
        opt = Momentum()
        with pytest.raises(TensorError):
            opt.step({"w": np.zeros(2)}, {"w": np.zeros(3)})


class TestAdam:
    def test_constant_gradient_is_sign_step(self):
        opt = Adam(alpha=0.01)
        theta = {"w": np.array([5.0, -5.0])}
        g = {"w": np.array([2.0, -3.0])}
        opt.step(theta, g)
        assert np.allclose(theta["w"], [5.0 - 0.01 * 2 / (2 + 1e-8),
                                        -5.0 + 0.01 * 3 / (3 + 1e-8)])

    def test_variants_agree(self, rng):
        a = Adam(variant="bias_correct")
        b = Adam(variant="eps_hat")
        ta = {"w": rng.normal(size=8)}
        tb = {"w": ta["w"].copy()}
        for _ in range(1000):
            g = rng.normal(size=8)
            a.step(ta, {"w": g.copy()})
            b.step(tb, {"w": g.copy()})
        assert rel_err(ta["w"], tb["w"]) <= 1e-12

    def test_quadratic_convergence(self, rng):
        opt = Adam()
        theta = {"w": rng.uniform(-1, 1, size=10)}
        for _ in range(2000):
            opt.step(theta, {"w": 2.0 * theta["w"]})
        assert np.linalg.norm(theta["w"]) < 0.1

    def test_factory(self):
        assert isinstance(make_optimizer("AdamSGD"), Adam)
        assert isinstance(make_optimizer("MomentumSGD"), Momentum)
        assert make_optimizer("NesterovSGD").nesterov
        with pytest.raises(TensorError):
            make_optimizer("AdagradSGD")
        with pytest.raises(TensorError):
            make_optimizer("MadeUpSGD")


class TestRegret:
    def test_zero_gap(self):
        tr = RegretTracker()
        for _ in range(10):
            assert tr.update(1.5, 1.5) == 0.0

    def test_constant_gap(self):
        tr = RegretTracker()
        for _ in range(25):
            v = tr.update(3.0, 1.0)
        assert abs(v - 2.0) < 1e-12

    def test_decaying_gap_converges(self):
        tr = RegretTracker()
        for t in range(1, 5001):
            v = tr.update(1.0 / t, 0.0)
        assert v < 0.005
