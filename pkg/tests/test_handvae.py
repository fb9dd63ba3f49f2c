"""Hand VAE: KL oracle, loss composition, encode/decode contracts."""
import numpy as np
import pytest

from graspkit.engine import Tensor, grad_check
from graspkit.geometry import hand_forward_np, hand_template
from graspkit.geometry.hand import NUM_PARAMS, NUM_VERTS
from graspkit.handvae import (HandVAE, chamfer_diff, kl_divergence, param_mse,
                              vae_loss, vae_train)


def make_vae(latent=8, hidden=32, seed=0):
    return HandVAE(latent_dim=latent, hidden=hidden,
                   rng=np.random.default_rng(seed))


class TestKL:
    def test_standard_normal_zero(self):
        mu = Tensor(np.zeros(6))
        logvar = Tensor(np.zeros(6))
        assert abs(kl_divergence(mu, logvar).item()) <= 1e-15

    def test_closed_form(self, rng):
        mu = rng.standard_normal(5)
        logvar = rng.standard_normal(5)
        got = kl_divergence(Tensor(mu), Tensor(logvar)).item()
        want = 0.5 * np.sum(mu ** 2 + np.exp(logvar) - logvar - 1.0)
        assert abs(got - want) <= 1e-12

    def test_nonnegative(self, rng):
        for _ in range(10):
            mu = rng.standard_normal(4)
            logvar = rng.standard_normal(4)
            assert kl_divergence(Tensor(mu), Tensor(logvar)).item() >= -1e-12


class TestEncodeDecode:
    def test_inference_returns_mu(self, rng):
        vae = make_vae()
        verts = rng.standard_normal((NUM_VERTS, 3)) * 0.05
        z, mu, _ = vae.encode(verts)
        assert np.array_equal(z.data, mu.data)

    def test_zero_sigma_returns_mu(self, rng):
        vae = make_vae()
        verts = rng.standard_normal((NUM_VERTS, 3)) * 0.05
        eps = rng.standard_normal(8)
        z, mu, logvar = vae.encode(verts, eps)
        # force sigma -> 0 by pushing logvar very negative through the data
        manual = mu.data + np.exp(logvar.data * 0.5) * eps
        assert np.allclose(z.data, manual, atol=1e-12)

    def test_wrong_vertex_count(self):
        with pytest.raises(ValueError):
            make_vae().encode(np.zeros((10, 3)))

    def test_zero_decoder_gives_template(self):
        vae = make_vae()
        for p in vae.dec.params():
            p.data[...] = 0.0
        params, verts, _ = vae.decode_mesh(np.zeros(8))
        assert np.allclose(params.data, 0.0)
        assert np.allclose(verts.data, hand_template()["verts"], atol=1e-12)

    def test_gradcheck_through_encode_decode(self, rng):
        vae = make_vae(latent=4, hidden=8)
        verts = Tensor(rng.standard_normal((NUM_VERTS, 3)) * 0.02)

        def build():
            z, mu, logvar = vae.encode(verts)
            pred = vae.decode(z)
            return (pred * pred).sum() * 0.1 + kl_divergence(mu, logvar) * 0.01

        # check a subset of parameters for runtime reasons: the last decoder
        # layer and the first encoder layer biases
        params = [vae.enc.layers[0].b, vae.dec.layers[-1].b]
        assert grad_check(build, params) <= 1e-4


class TestVaeLoss:
    def test_perfect_prediction_zero(self, rng):
        gt_p = rng.standard_normal(NUM_PARAMS)
        gt_v = rng.standard_normal((NUM_VERTS, 3))
        loss = vae_loss(Tensor(gt_p.copy()), Tensor(gt_v.copy()), gt_p, gt_v,
                        Tensor(np.zeros(8)), Tensor(np.zeros(8)))
        assert abs(loss.item()) <= 1e-12

    def test_beta_zero_perfect_zero(self, rng):
        gt_p = rng.standard_normal(NUM_PARAMS)
        gt_v = rng.standard_normal((NUM_VERTS, 3))
        mu = Tensor(rng.standard_normal(8))
        logvar = Tensor(rng.standard_normal(8))
        loss = vae_loss(Tensor(gt_p.copy()), Tensor(gt_v.copy()), gt_p, gt_v,
                        mu, logvar, beta_kl=0.0)
        assert abs(loss.item()) <= 1e-12

    def test_known_offset(self, rng):
        gt_p = rng.standard_normal(NUM_PARAMS)
        gt_v = rng.standard_normal((NUM_VERTS, 3))
        delta = 0.37
        loss = vae_loss(Tensor(gt_p + delta), Tensor(gt_v.copy()), gt_p, gt_v,
                        Tensor(np.zeros(8)), Tensor(np.zeros(8)),
                        lambda_mesh=0.0, beta_kl=0.0, lambda_param=1.0)
        from graspkit.handvae import PARAM_WEIGHTS
        want = delta ** 2 * PARAM_WEIGHTS.mean()
        assert abs(loss.item() - want) <= 1e-9

    def test_param_mse_weighting(self, rng):
        gt = np.zeros(NUM_PARAMS)
        pred = np.zeros(NUM_PARAMS)
        pred[0] = 1.0  # translation entry carries extra weight
        from graspkit.handvae import PARAM_WEIGHTS
        got = param_mse(Tensor(pred), gt).item()
        assert abs(got - PARAM_WEIGHTS[0] / NUM_PARAMS) <= 1e-12

    def test_chamfer_diff_matches_geometry(self, rng):
        from graspkit.geometry import chamfer
        a = rng.standard_normal((30, 3))
        b = rng.standard_normal((30, 3))
        got = chamfer_diff(Tensor(a), b).item()
        assert abs(got - chamfer(a, b)) <= 1e-12


class TestVaeTrain:
    def _dataset(self, n=4, seed=0):
        rng = np.random.default_rng(seed)
        data = []
        for _ in range(n):
            p = rng.standard_normal(NUM_PARAMS) * 0.1
            verts, _ = hand_forward_np(p)
            data.append((p, verts))
        return data

    def test_lr_zero_flat(self):
        vae = make_vae()
        curve = vae_train(vae, self._dataset(), epochs=3, lr=0.0,
                          lambda_mesh=0.0)
        assert np.allclose(curve, curve[0])

    def test_seeded_determinism(self):
        curves = []
        for _ in range(2):
            vae = make_vae()
            curves.append(vae_train(vae, self._dataset(), epochs=3, lr=1e-3,
                                    lambda_mesh=0.0, seed=5))
        assert curves[0] == curves[1]

    def test_loss_decreases_overfit(self):
        vae = make_vae(latent=16, hidden=64)
        curve = vae_train(vae, self._dataset(), epochs=300, lr=3e-3,
                          lambda_mesh=0.0, beta_kl=1e-4, seed=0)
        assert curve[-1] < 0.1 * curve[0]

    def test_batched_path_matches_persample_start(self):
        # both dispatch paths should start from the same initial loss scale
        data = self._dataset()
        a = vae_train(make_vae(), data, epochs=1, lr=0.0, lambda_mesh=0.0)
        b = vae_train(make_vae(), data, epochs=1, lr=0.0, lambda_mesh=1.0,
                      beta_kl=1e-3)
        assert a[0] <= b[0] + 1e-6  # mesh term only adds loss
