"""Post-denoising latent refinement with cross-attention and dual residuals,
plus the reconstruction/physical losses used to train it.

The refiner treats each feature vector as a length-1 token sequence: the
instruction feature queries the geometry feature through multi-head attention
(softmax weight over a single key is exactly 1; mixing happens in the value
and output projections). Two residual paths preserve the instruction feature
after attention and the incoming latent after the MLP.
"""

from __future__ import annotations

import numpy as np

from .engine import Tensor, concat
from .geometry import TriangleMesh
from .geometry.kernels import closest_point_on_mesh, inside_mesh, point_mesh_distances
from .handvae import chamfer_diff
from .nn import Linear, mse


class MultiHeadAttention:
    """Standard scaled dot-product attention over (query, keys=values)."""

    def __init__(self, dim, heads=4, rng=None):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def weights_and_output(self, query, keys):
        """query: (d,), keys: (S, d). Returns (attn weights (H, S), out (d,))."""
        q = query if isinstance(query, Tensor) else Tensor(query)
        k = keys if isinstance(keys, Tensor) else Tensor(keys)
        if k.data.ndim == 1:
            k = k.reshape(1, -1)
        s = k.shape[0]
        qh = self.wq(q).reshape(self.heads, self.head_dim)
        kh = self.wk(k).reshape(s, self.heads, self.head_dim).transpose(1, 0, 2)
        vh = self.wv(k).reshape(s, self.heads, self.head_dim).transpose(1, 0, 2)
        scores = (kh * qh.reshape(self.heads, 1, self.head_dim)).sum(axis=2)
        attn = (scores * (1.0 / np.sqrt(self.head_dim))).softmax(axis=-1)  # (H, S)
        mixed = (attn.reshape(self.heads, s, 1) * vh).sum(axis=1)  # (H, dh)
        return attn, self.wo(mixed.reshape(self.dim))

    def __call__(self, query, keys):
        _, out = self.weights_and_output(query, keys)
        return out

    def params(self):
        return self.wq.params() + self.wk.params() + self.wv.params() + self.wo.params()


class LatentRefiner:
    def __init__(self, dim=64, heads=4, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.mha = MultiHeadAttention(dim, heads, rng)
        self.mlp_1 = Linear(dim, dim, rng)
        self.mlp_2 = Linear(dim, dim, rng)

    def refine(self, h_hat, bundle):
        """Refine a denoised latent against the condition bundle.

        f_spatial = Norm(f_pg + f_pa) + h_hat
        f_align   = Attention(f_I, f_spatial, f_spatial) + f_I
        out       = Norm(MLP(f_align) + h_hat)
        """
        h = h_hat if isinstance(h_hat, Tensor) else Tensor(np.asarray(h_hat))
        if h.shape != (self.dim,):
            raise ValueError(f"latent dim mismatch: {h.shape} vs ({self.dim},)")
        f_spatial = (bundle.f_object + bundle.f_afford).layernorm() + h
        f_align = self.mha(bundle.f_text, f_spatial) + bundle.f_text
        return (self.mlp_2(self.mlp_1(f_align).relu()) + h).layernorm()

    def params(self):
        return self.mha.params() + self.mlp_1.params() + self.mlp_2.params()


# -- differentiable point-to-hand distances -----------------------------------


def point_mesh_dist_diff(obj_points, verts, faces, eps=1e-18):
    """Per-point distance to the mesh with gradients w.r.t. ``verts``.

    The closest triangle and barycentric coordinates are found numerically and
    held fixed; the distance to that co-moving surface point stays exact and
    differentiable almost everywhere.
    """
    obj_points = np.asarray(obj_points, dtype=np.float64)
    snapshot = TriangleMesh(verts.data if isinstance(verts, Tensor) else np.asarray(verts),
                            faces)
    _, fidx, _, bary = closest_point_on_mesh(obj_points, snapshot)
    tri = faces[fidx]  # (N, 3)
    v = verts if isinstance(verts, Tensor) else Tensor(np.asarray(verts))
    q = (v.gather_rows(tri[:, 0]) * Tensor(bary[:, 0:1])
         + v.gather_rows(tri[:, 1]) * Tensor(bary[:, 1:2])
         + v.gather_rows(tri[:, 2]) * Tensor(bary[:, 2:3]))
    diff = Tensor(obj_points) - q
    return ((diff * diff).sum(axis=1) + eps).sqrt()


# -- physical losses ----------------------------------------------------------


def consistency_loss(pred_mesh, gt_mesh, obj_points, tau=0.005, lambda_c=1.0):
    """Negative overlap ratio of predicted vs ground-truth contact sets.

    Piecewise constant in the inputs (an indicator ratio), so it is evaluated
    numerically; contributes 0 when the ground truth has no contacts.
    """
    obj_points = np.asarray(obj_points, dtype=np.float64)
    d_gt = point_mesh_distances(obj_points, gt_mesh)
    gt_contacts = d_gt < tau
    if not gt_contacts.any():
        return 0.0
    d_pred = point_mesh_distances(obj_points, pred_mesh)
    both = np.logical_and(d_pred < tau, gt_contacts).sum()
    return -lambda_c * float(both) / float(gt_contacts.sum())


def contact_map_loss(pred_verts, faces, obj_points, contact_masks):
    """Min-over-masks mean distance from masked object points to the hand.

    ``contact_masks``: (N, T) binary columns, each with at least one positive.
    Differentiable w.r.t. ``pred_verts``.
    """
    masks = np.asarray(contact_masks, dtype=np.float64)
    if masks.ndim == 1:
        masks = masks[:, None]
    if np.any(masks.sum(axis=0) == 0):
        raise ValueError("every contact mask column needs at least one positive")
    d = point_mesh_dist_diff(obj_points, pred_verts, faces)
    per_mask_np = (masks * d.data[:, None]).sum(axis=0) / masks.sum(axis=0)
    best = int(np.argmin(per_mask_np))  # min selection held fixed for the gradient
    col = masks[:, best]
    return (Tensor(col) * d).sum() * (1.0 / col.sum())


def penetration_loss(pred_verts, faces, obj_points, lambda_p=1.0):
    """Sum of hand-surface distances over object points inside the hand."""
    obj_points = np.asarray(obj_points, dtype=np.float64)
    snapshot = TriangleMesh(pred_verts.data if isinstance(pred_verts, Tensor)
                            else np.asarray(pred_verts), faces)
    inside = inside_mesh(obj_points, snapshot)
    if not inside.any():
        return Tensor(0.0)
    d = point_mesh_dist_diff(obj_points[inside], pred_verts, faces)
    return lambda_p * d.sum()


def total_refine_loss(pred_params, pred_verts, faces, gt_params, gt_verts,
                      gt_mesh, obj_points, contact_masks, lambdas=None,
                      tau=0.005, lambda_c=1.0, lambda_p=1.0):
    """Reconstruction + physical objective for refiner training.

    ``lambdas``: (param, mesh, consistency, contact, penetration) weights.
    """
    l1, l2, l3, l4, l5 = lambdas if lambdas is not None else (1.0, 1.0, 1.0, 1.0, 1.0)
    loss = l1 * mse(pred_params, Tensor(np.asarray(gt_params)))
    if l2 != 0.0:
        loss = loss + l2 * chamfer_diff(pred_verts, gt_verts)
    if l3 != 0.0:
        pred_mesh = TriangleMesh(pred_verts.data, faces)
        loss = loss + l3 * consistency_loss(pred_mesh, gt_mesh, obj_points,
                                            tau, lambda_c)
    if l4 != 0.0:
        loss = loss + l4 * contact_map_loss(pred_verts, faces, obj_points,
                                            contact_masks)
    if l5 != 0.0:
        loss = loss + l5 * penetration_loss(pred_verts, faces, obj_points, lambda_p)
    return loss


def refiner_train(refiner, frozen, dataset, schedule, epochs=20, lr=1e-3,
                  batch_size=4, seed=0, lambdas=None, tau=0.005,
                  lambda_c=1.0, lambda_p=1.0, t_max=None):
    """Train the refiner while the diffusion stack stays frozen.

    ``frozen``: object with .vae, .denoiser, .cond_encoder (weights untouched).
    ``dataset``: sequence of dicts with keys gt_params, gt_verts, gt_mesh,
    obj_points, contact_masks, instruction, afford_points4.
    Returns the loss curve. The corruption timestep is drawn uniformly from
    [0, t_max); t_max defaults to the full schedule. Capping t_max keeps the
    training inputs near the latent manifold, which matches what the refiner
    actually sees after a full reverse pass at inference time.
    """
    from .affordance import TrainingError
    from .engine import Adam
    from .diffusion import forward_noise, latent_from_noise
    from .geometry import hand_forward

    if not dataset:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(seed)
    if t_max is None:
        t_max = schedule.steps
    if not 0 < t_max <= schedule.steps:
        raise TrainingError("t_max must be in [1, schedule.steps]")
    was_trainable = _freeze(frozen)
    try:
        opt = Adam(refiner.params(), lr)
        faces = None
        curve = []
        for _ in range(epochs):
            order = rng.permutation(len(dataset))
            losses = []
            for b0 in range(0, len(order), batch_size):
                idxs = order[b0:b0 + batch_size]
                total = None
                for i in idxs:
                    rec = dataset[i]
                    bundle = frozen.cond_encoder(rec["instruction"], rec["obj_points"],
                                                 rec["afford_points4"])
                    z0, _, _ = frozen.vae.encode(rec["gt_verts"])
                    t = int(rng.integers(t_max))
                    eps = rng.standard_normal(frozen.vae.latent_dim)
                    z_t = forward_noise(z0.data, t, eps, schedule)
                    eps_hat = frozen.denoiser(z_t, bundle.concat(), t)
                    h_hat = latent_from_noise(Tensor(z_t), eps_hat, t, schedule)
                    h_ref = refiner.refine(h_hat, bundle)
                    params, verts, _ = frozen.vae.decode_mesh(h_ref)
                    if faces is None:
                        from .geometry.hand import hand_template
                        faces = hand_template()["faces"]
                    loss = total_refine_loss(params, verts, faces, rec["gt_params"],
                                             rec["gt_verts"], rec["gt_mesh"],
                                             rec["obj_points"], rec["contact_masks"],
                                             lambdas, tau, lambda_c, lambda_p)
                    total = loss if total is None else total + loss
                total = total * (1.0 / len(idxs))
                if not np.isfinite(total.item()):
                    raise TrainingError("refiner training diverged (non-finite loss)")
                losses.append(total.item())
                total.backward()
                opt.step()
            curve.append(float(np.mean(losses)))
        return curve
    finally:
        _unfreeze(frozen, was_trainable)


def _freeze(frozen):
    flags = []
    for p in _frozen_params(frozen):
        flags.append(p.requires_grad)
        p.requires_grad = False
        p.grad = None
    return flags


def _unfreeze(frozen, flags):
    for p, flag in zip(_frozen_params(frozen), flags):
        p.requires_grad = flag


def _frozen_params(frozen):
    return frozen.vae.params() + frozen.denoiser.params() + frozen.cond_encoder.params()
