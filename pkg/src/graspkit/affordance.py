"""Per-point affordance prediction, its focal+dice objective, and map metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import POINT_SCALE, TextEncoder, Vocabulary
from .engine import Tensor, concat
from .nn import MLP

PROB_CLAMP = 1e-7
DICE_EPS = 1e-6


class TrainingError(RuntimeError):
    pass


@dataclass
class AffordanceMap:
    probs: np.ndarray  # (N,) in [0, 1]
    gt_mask: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.min() < 0 or self.probs.max() > 1:
            raise ValueError("affordance probabilities must lie in [0, 1]")
        if self.gt_mask is not None and len(self.gt_mask) != len(self.probs):
            raise ValueError("ground-truth mask length mismatch")


class AffordanceNet:
    """Pointwise MLP features + broadcast text feature -> per-point sigmoid."""

    def __init__(self, vocab, dim=64, hidden=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab = vocab
        self.text = TextEncoder(len(vocab), dim, rng)
        self.point_mlp = MLP([3, hidden, hidden], rng)
        self.head = MLP([hidden + dim, hidden, 1], rng)
        self.dim = dim

    def forward(self, points, instruction):
        """points: (N, 3) or batched (B, N, 3) with one shared instruction."""
        x = points if isinstance(points, Tensor) else Tensor(points)
        feat = self.point_mlp(x * POINT_SCALE).relu()
        f_text = self.text(self.vocab.encode(instruction))
        n = x.data.shape[-2]
        if x.data.ndim == 2:
            tiled = f_text.reshape(1, -1) * Tensor(np.ones((n, 1)))
        else:
            tiled = f_text.reshape(1, 1, -1) * Tensor(np.ones((x.data.shape[0], n, 1)))
        logits = self.head(concat([feat, tiled], axis=-1))
        return logits.reshape(x.data.shape[:-1]).sigmoid()

    def predict(self, points, instruction):
        return AffordanceMap(self.forward(points, instruction).data)

    def params(self):
        return self.text.params() + self.point_mlp.params() + self.head.params()


# -- losses -------------------------------------------------------------------


def _clamped(probs):
    p = probs if isinstance(probs, Tensor) else Tensor(np.asarray(probs, dtype=np.float64))
    return p.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)


def focal_loss(probs, gt, alpha=0.25, gamma=2.0):
    """Class-balanced focusing loss, averaged over all points in the batch."""
    p = _clamped(probs)
    g = Tensor(np.asarray(gt, dtype=np.float64))
    if g.shape != p.shape:
        raise ValueError(f"probability/label shape mismatch {p.shape} vs {g.shape}")
    pos = ((1.0 - p) ** gamma) * g * p.log() * alpha
    neg = (p ** gamma) * (1.0 - g) * (1.0 - p).log() * (1.0 - alpha)
    return -(pos + neg).mean() if p.data.ndim == 1 else -(pos + neg).reshape(-1).mean()


def dice_loss(probs, gt):
    """Symmetric (positive + negative) soft-Dice loss, averaged over samples."""
    p = _clamped(probs)
    g = Tensor(np.asarray(gt, dtype=np.float64))
    if g.shape != p.shape:
        raise ValueError(f"probability/label shape mismatch {p.shape} vs {g.shape}")
    if p.data.ndim == 1:
        p = p.reshape(1, -1)
        g = g.reshape(1, -1)
    dice_pos = (2.0 * (p * g).sum(axis=1)) / (p.sum(axis=1) + g.sum(axis=1) + DICE_EPS)
    pn, gn = 1.0 - p, 1.0 - g
    dice_neg = (2.0 * (pn * gn).sum(axis=1)) / (pn.sum(axis=1) + gn.sum(axis=1) + DICE_EPS)
    return (2.0 - dice_pos - dice_neg).mean()


def affordance_loss(probs, gt, lambda1=1.0, alpha=0.25, gamma=2.0):
    return focal_loss(probs, gt, alpha, gamma) + lambda1 * dice_loss(probs, gt)


# -- metrics ------------------------------------------------------------------


def auc_score(probs, labels):
    """Rank-statistic AUC with midrank tie handling; None if one class only."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(probs, kind="mergesort")
    ranks = np.empty(len(probs))
    sorted_p = probs[order]
    i = 0
    r = 1.0
    while i < len(probs):
        j = i
        while j + 1 < len(probs) and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def affordance_metrics(probs, gt_mask, threshold=0.5, normalize=True):
    """IoU@threshold, AUC, SIM, and MAE for one predicted map."""
    probs = np.asarray(probs, dtype=np.float64)
    gt = np.asarray(gt_mask).astype(np.float64)
    if gt.sum() == 0:
        return {"iou": None, "auc": None, "sim": None, "mae": None}
    pred = probs >= threshold
    inter = np.logical_and(pred, gt > 0.5).sum()
    union = np.logical_or(pred, gt > 0.5).sum()
    iou = float(inter / union) if union else 1.0
    if normalize:
        y = gt / gt.sum()
        m = probs / probs.sum() if probs.sum() > 0 else np.full_like(probs, 1 / len(probs))
    else:
        y, m = gt, probs
    return {
        "iou": iou,
        "auc": auc_score(probs, gt > 0.5),
        "sim": float(np.minimum(y, m).sum()),
        "mae": float(np.abs(y - m).sum()),
    }


# -- training -----------------------------------------------------------------


def affordance_train(net, dataset, epochs=60, lr=1e-2, batch_size=8, seed=0,
                     lambda1=1.0, alpha=0.25, gamma=2.0, optimizer_cls=None):
    """Seeded minibatch training; returns the per-epoch mean loss curve.

    ``dataset``: sequence of (points (N,3), instruction, gt mask (N,)).
    """
    from .engine import Adam

    if not dataset:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(seed)
    opt = (optimizer_cls or Adam)(net.params(), lr)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for b0 in range(0, len(order), batch_size):
            total = None
            idxs = order[b0:b0 + batch_size]
            for i in idxs:
                pts, instr, gt = dataset[i]
                probs = net.forward(np.asarray(pts), instr)
                loss = affordance_loss(probs, gt, lambda1, alpha, gamma)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(idxs))
            if not np.isfinite(total.item()):
                raise TrainingError("affordance training diverged (non-finite loss)")
            losses.append(total.item() * len(idxs))
            total.backward()
            opt.step()
        curve.append(float(np.sum(losses) / len(order)))
    return curve
