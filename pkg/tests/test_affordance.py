"""Affordance losses against algebraic identities and hand evaluations."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspkit.affordance import (AffordanceMap, AffordanceNet, PROB_CLAMP,
                                 affordance_loss, affordance_metrics,
                                 affordance_train, auc_score, dice_loss,
                                 focal_loss)
from graspkit.encoders import Vocabulary
from graspkit.engine import Tensor


def bce(probs, gt):
    p = np.clip(probs, PROB_CLAMP, 1 - PROB_CLAMP)
    return float(np.mean(-(gt * np.log(p) + (1 - gt) * np.log(1 - p))))


class TestFocalLoss:
    @pytest.mark.parametrize("seed", range(5))
    def test_gamma_zero_alpha_half_is_half_bce(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.uniform(0.01, 0.99, 40)
        gt = (rng.uniform(size=40) > 0.5).astype(float)
        got = focal_loss(Tensor(probs), gt, alpha=0.5, gamma=0.0).item()
        assert abs(got - 0.5 * bce(probs, gt)) <= 1e-12

    def test_vanishing_on_confident_correct(self):
        eps = 1e-4
        probs = np.array([1 - eps, eps])
        gt = np.array([1.0, 0.0])
        got = focal_loss(Tensor(probs), gt, alpha=0.25, gamma=2.0).item()
        assert got <= 0.25 * eps ** 2 * abs(np.log(eps))

    def test_hand_case(self):
        # single point, p=0.5, g=1: alpha * (1-p)^gamma * -log(p)
        got = focal_loss(Tensor(np.array([0.5])), np.array([1.0]),
                         alpha=0.25, gamma=2.0).item()
        assert abs(got - 0.25 * 0.25 * np.log(2)) <= 1e-12

    def test_nonnegative(self, rng):
        probs = rng.uniform(size=30)
        gt = (rng.uniform(size=30) > 0.5).astype(float)
        assert focal_loss(Tensor(probs), gt).item() >= 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            focal_loss(Tensor(np.array([0.5])), np.array([1.0, 0.0]))


class TestDiceLoss:
    def test_perfect_prediction(self):
        gt = np.array([1.0, 0.0, 1.0, 0.0])
        assert dice_loss(Tensor(gt.copy()), gt).item() <= 1e-5

    def test_worst_case(self):
        gt = np.array([1.0, 0.0, 1.0, 0.0])
        got = dice_loss(Tensor(1.0 - gt), gt).item()
        assert abs(got - 2.0) <= 1e-5

    def test_hand_case(self):
        got = dice_loss(Tensor(np.array([0.5, 0.5])), np.array([1.0, 0.0]))
        assert abs(got.item() - 1.0) <= 1e-5

    def test_bounds(self, rng):
        probs = rng.uniform(size=25)
        gt = (rng.uniform(size=25) > 0.5).astype(float)
        v = dice_loss(Tensor(probs), gt).item()
        assert -1e-5 <= v <= 2.0 + 1e-5


class TestAffordanceLoss:
    def test_lambda_zero_equals_focal(self, rng):
        probs = rng.uniform(size=20)
        gt = (rng.uniform(size=20) > 0.5).astype(float)
        a = affordance_loss(Tensor(probs), gt, lambda1=0.0).item()
        b = focal_loss(Tensor(probs), gt).item()
        assert abs(a - b) <= 1e-15

    def test_perfect_prediction_near_zero(self):
        gt = np.array([1.0, 0.0, 1.0])
        assert affordance_loss(Tensor(gt.copy()), gt).item() <= 1e-3

    def test_composition(self, rng):
        probs = rng.uniform(size=20)
        gt = (rng.uniform(size=20) > 0.5).astype(float)
        total = affordance_loss(Tensor(probs), gt, lambda1=1.0).item()
        parts = focal_loss(Tensor(probs), gt).item() + \
            dice_loss(Tensor(probs), gt).item()
        assert abs(total - parts) <= 1e-12


class TestMetrics:
    def test_perfect(self):
        gt = np.array([1.0, 1.0, 0.0, 0.0])
        m = affordance_metrics(gt, gt)
        assert m["iou"] == 1.0 and m["auc"] == 1.0
        assert abs(m["sim"] - 1.0) <= 1e-12 and m["mae"] <= 1e-12

    def test_constant_probs_auc_half(self):
        m = affordance_metrics(np.full(10, 0.5),
                               np.array([1.0] * 5 + [0.0] * 5))
        assert abs(m["auc"] - 0.5) <= 1e-12

    def test_four_point_case(self):
        probs = np.array([0.9, 0.8, 0.2, 0.1])
        gt = np.array([1.0, 1.0, 0.0, 0.0])
        m = affordance_metrics(probs, gt)
        assert m["iou"] == 1.0 and m["auc"] == 1.0
        p = probs / probs.sum()
        g = gt / gt.sum()
        assert abs(m["sim"] - np.minimum(p, g).sum()) <= 1e-12
        assert abs(m["mae"] - np.abs(p - g).sum()) <= 1e-12

    def test_all_negative_gt_absent(self):
        m = affordance_metrics(np.array([0.1, 0.2]), np.array([0.0, 0.0]))
        assert m["auc"] is None

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_auc_monotone_invariance(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.uniform(0.01, 0.99, 20)
        labels = (rng.uniform(size=20) > 0.5).astype(float)
        if labels.sum() in (0, 20):
            return
        a = auc_score(probs, labels)
        b = auc_score(np.sqrt(probs) * 0.7, labels)  # strictly monotone map
        assert abs(a - b) <= 1e-12


class TestPredictAndTrain:
    def _net(self):
        vocab = Vocabulary.from_corpus(["grip the handle of the mug"])
        return AffordanceNet(vocab, dim=16, hidden=16,
                             rng=np.random.default_rng(0)), vocab

    def test_zero_head_gives_half(self, rng):
        net, _ = self._net()
        for p in net.head.params():
            p.data[...] = 0.0
        probs = net.predict(rng.standard_normal((12, 3)),
                            "grip the handle").probs
        assert np.allclose(probs, 0.5, atol=1e-12)

    def test_permutation_equivariance(self, rng):
        net, _ = self._net()
        cloud = rng.standard_normal((15, 3))
        perm = rng.permutation(15)
        a = net.predict(cloud, "grip the handle").probs
        b = net.predict(cloud[perm], "grip the handle").probs
        assert np.allclose(a[perm], b, atol=1e-12)

    def test_probs_validated(self):
        with pytest.raises(ValueError):
            AffordanceMap(np.array([0.5, 1.2]))

    def test_overfit_single_sample(self):
        net, _ = self._net()
        rng = np.random.default_rng(1)
        cloud = rng.standard_normal((24, 3)) * 0.05
        gt = np.zeros(24)
        gt[:8] = 1.0
        data = [(cloud, "grip the handle of the mug", gt)]
        curve = affordance_train(net, data, epochs=200, lr=0.01, seed=0)
        assert curve[-1] < 0.05 * curve[0]

    def test_lr_zero_flat_curve(self):
        net, _ = self._net()
        rng = np.random.default_rng(1)
        cloud = rng.standard_normal((10, 3))
        gt = np.zeros(10)
        gt[:4] = 1.0
        data = [(cloud, "grip the handle", gt)]
        curve = affordance_train(net, data, epochs=5, lr=0.0, seed=0)
        assert np.allclose(curve, curve[0])

    def test_seeded_determinism(self):
        rng = np.random.default_rng(1)
        cloud = rng.standard_normal((10, 3))
        gt = np.zeros(10)
        gt[:4] = 1.0
        data = [(cloud, "grip the handle", gt)]
        curves = []
        for _ in range(2):
            net, _ = self._net()
            curves.append(affordance_train(net, data, epochs=5, lr=0.01,
                                           seed=7))
        assert curves[0] == curves[1]
