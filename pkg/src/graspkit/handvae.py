"""Variational autoencoder between hand vertices and the compact grasp latent.

Encoder: flattened vertices -> (mu, log-variance); decoder: latent -> the 61
hand parameters, which the hand layer turns back into a mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor
from .geometry import NUM_PARAMS, NUM_VERTS, hand_forward
from .geometry.kernels import nearest_neighbor_indices
from .nn import MLP


@dataclass
class LatentCode:
    z: np.ndarray
    role: str = "clean"  # clean | noisy | denoised | refined

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent code contains non-finite values")


# Squared-error weights per parameter. Translation needs millimeter accuracy,
# so its (meter-scale) components get weight 20^2 to put a 1 mm error on the
# same footing as a 0.02 rad joint error.
PARAM_WEIGHTS = np.ones(NUM_PARAMS)
PARAM_WEIGHTS[:3] = 400.0


class HandVAE:
    def __init__(self, latent_dim=64, hidden=256, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.latent_dim = latent_dim
        in_dim = NUM_VERTS * 3
        self.enc = MLP([in_dim, hidden, 2 * latent_dim], rng)
        self.dec = MLP([latent_dim, hidden, NUM_PARAMS], rng)

    def encode(self, verts, eps=None):
        """verts: (778, 3). Returns (z, mu, logvar); z == mu when eps is None."""
        v = verts if isinstance(verts, Tensor) else Tensor(np.asarray(verts))
        if v.shape != (NUM_VERTS, 3):
            raise ValueError(f"expected ({NUM_VERTS}, 3) vertices, got {v.shape}")
        h = self.enc(v.reshape(-1))
        mu = h[:self.latent_dim]
        logvar = h[self.latent_dim:]
        if eps is None:
            return mu, mu, logvar
        z = mu + (logvar * 0.5).exp() * Tensor(np.asarray(eps))
        return z, mu, logvar

    def decode(self, z):
        """Latent -> 61 hand parameters (angles clamped downstream)."""
        zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z))
        return self.dec(zt)

    def decode_mesh(self, z):
        """Latent -> (params, vertices, keypoints) through the hand layer."""
        params = self.decode(z)
        verts, kps = hand_forward(params)
        return params, verts, kps

    def params(self):
        return self.enc.params() + self.dec.params()


def kl_divergence(mu, logvar):
    """KL(q(z) || N(0, I)) for a diagonal Gaussian."""
    return 0.5 * (mu * mu + logvar.exp() - logvar - 1.0).sum()


def chamfer_diff(pred_verts, gt_verts):
    """Differentiable symmetric chamfer; NN correspondence is held fixed."""
    gt = np.asarray(gt_verts, dtype=np.float64)
    pv = pred_verts if isinstance(pred_verts, Tensor) else Tensor(np.asarray(pred_verts))
    idx_ab = nearest_neighbor_indices(pv.data, gt)
    idx_ba = nearest_neighbor_indices(gt, pv.data)
    d_ab = pv - Tensor(gt[idx_ab])
    d_ba = pv.gather_rows(idx_ba) - Tensor(gt)
    return (d_ab * d_ab).sum(axis=1).mean() + (d_ba * d_ba).sum(axis=1).mean()


def param_mse(pred_params, gt_params):
    """Mean squared parameter error with the per-parameter weights applied."""
    gt = np.asarray(gt_params, dtype=np.float64)
    d = pred_params - Tensor(gt)
    w = Tensor(np.broadcast_to(PARAM_WEIGHTS, gt.shape).copy())
    return (d * d * w).mean()


def vae_loss(pred_params, pred_verts, gt_params, gt_verts, mu, logvar,
             lambda_param=1.0, lambda_mesh=1.0, beta_kl=1e-3):
    rec = lambda_param * param_mse(pred_params, gt_params)
    if lambda_mesh != 0.0:
        rec = rec + lambda_mesh * chamfer_diff(pred_verts, gt_verts)
    return rec + beta_kl * kl_divergence(mu, logvar)


def vae_train(vae, dataset, epochs=120, lr=1e-3, batch_size=4, seed=0,
              lambda_param=1.0, lambda_mesh=1.0, beta_kl=1e-3, lr_decay=1.0):
    """Seeded training over (gt_params, gt_verts) pairs; returns loss curve.

    lr_decay multiplies the learning rate each epoch. With lambda_mesh == 0
    the hand layer is skipped and whole minibatches go through the MLPs as
    stacked matrices, which is much faster than the per-sample path.

    The returned curve records, after every epoch, the loss on a fixed probe
    subset evaluated at z = mu (no sampling noise). That makes the curve a
    deterministic function of the weights: lr = 0 gives a flat curve even
    though training itself draws fresh reparameterization noise each step.
    """
    from .affordance import TrainingError
    from .engine import Adam

    if not dataset:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(seed)
    opt = Adam(vae.params(), lr)
    if lambda_mesh == 0.0:
        return _vae_train_batched(vae, dataset, epochs, batch_size, rng, opt,
                                  lambda_param, beta_kl, lr, lr_decay)

    probe = list(range(min(4, len(dataset))))

    def probe_loss():
        total = 0.0
        for i in probe:
            gt_params, gt_verts = dataset[i]
            z, mu, logvar = vae.encode(gt_verts)
            params, verts, _ = vae.decode_mesh(z)
            total += vae_loss(params, verts, gt_params, gt_verts, mu, logvar,
                              lambda_param, lambda_mesh, beta_kl).item()
        return total / len(probe)

    curve = []
    for epoch in range(epochs):
        opt.lr = lr * lr_decay ** epoch
        order = rng.permutation(len(dataset))
        for b0 in range(0, len(order), batch_size):
            idxs = order[b0:b0 + batch_size]
            total = None
            for i in idxs:
                gt_params, gt_verts = dataset[i]
                eps = rng.standard_normal(vae.latent_dim)
                z, mu, logvar = vae.encode(gt_verts, eps=eps)
                params, verts, _ = vae.decode_mesh(z)
                loss = vae_loss(params, verts, gt_params, gt_verts, mu, logvar,
                                lambda_param, lambda_mesh, beta_kl)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(idxs))
            if not np.isfinite(total.item()):
                raise TrainingError("VAE training diverged (non-finite loss)")
            total.backward()
            opt.step()
        curve.append(probe_loss())
    return curve


def _vae_train_batched(vae, dataset, epochs, batch_size, rng, opt,
                       lambda_param, beta_kl, lr, lr_decay):
    from .affordance import TrainingError

    gt_v = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for _, v in dataset])
    gt_p = np.stack([np.asarray(p, dtype=np.float64) for p, _ in dataset])
    L = vae.latent_dim
    probe = np.arange(min(8, len(dataset)))

    def probe_loss():
        h = vae.enc(Tensor(gt_v[probe]))
        mu, logvar = h[:, :L], h[:, L:]
        pred = vae.dec(mu)
        loss = (lambda_param * param_mse(pred, gt_p[probe])
                + (beta_kl / len(probe)) * kl_divergence(mu, logvar))
        return loss.item()

    curve = []
    for epoch in range(epochs):
        opt.lr = lr * lr_decay ** epoch
        order = rng.permutation(len(dataset))
        for b0 in range(0, len(order), batch_size):
            idxs = order[b0:b0 + batch_size]
            h = vae.enc(Tensor(gt_v[idxs]))
            mu, logvar = h[:, :L], h[:, L:]
            eps = rng.standard_normal((len(idxs), L))
            z = mu + (logvar * 0.5).exp() * Tensor(eps)
            pred = vae.dec(z)
            loss = (lambda_param * param_mse(pred, gt_p[idxs])
                    + (beta_kl / len(idxs)) * kl_divergence(mu, logvar))
            if not np.isfinite(loss.item()):
                raise TrainingError("VAE training diverged (non-finite loss)")
            loss.backward()
            opt.step()
        curve.append(probe_loss())
    return curve
