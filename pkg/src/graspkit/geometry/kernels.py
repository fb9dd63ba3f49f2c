"""Geometric kernels: FPS, chamfer, point-mesh distance, inside tests."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import GeometryError, PointCloud, TriangleMesh


def _pts(x):
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)


def fps_sample(cloud, n, seed=0):
    """Farthest point sampling; the first point is drawn by the seeded RNG.

    Returns (points, indices). Deterministic for a fixed seed.
    """
    pts = _pts(cloud)
    if n > len(pts):
        raise GeometryError(f"cannot sample {n} from {len(pts)} points")
    rng = np.random.default_rng(seed)
    chosen = np.empty(n, dtype=np.intp)
    chosen[0] = rng.integers(len(pts))
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for i in range(1, n):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(pts - pts[chosen[i]], axis=1))
    return pts[chosen], chosen


def chamfer(a, b):
    """Symmetric mean of squared nearest-neighbor distances."""
    pa, pb = _pts(a), _pts(b)
    if len(pa) == 0 or len(pb) == 0:
        raise GeometryError("chamfer requires non-empty clouds")
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float(np.mean(da ** 2) + np.mean(db ** 2))


def nearest_neighbor_indices(a, b):
    """For each point of a, the index of its nearest neighbor in b."""
    _, idx = cKDTree(_pts(b)).query(_pts(a))
    return idx


def closest_point_on_mesh(points, mesh, chunk=4096):
    """Exact closest point on any triangle of ``mesh`` for each query point.

    Returns (distances, face indices, closest points, barycentric coords).
    """
    pts = _pts(points)
    tri = mesh.triangles()
    best_d2 = np.full(len(pts), np.inf)
    best_f = np.zeros(len(pts), dtype=np.intp)
    best_q = np.zeros((len(pts), 3))
    best_b = np.zeros((len(pts), 3))
    fchunk = max(1, int(2e6 // max(len(pts), 1)))
    for f0 in range(0, len(tri), fchunk):
        t = tri[f0:f0 + fchunk]
        q, bary = _closest_point_triangles(pts, t)  # (P, Fc, 3)
        d2 = np.sum((q - pts[:, None, :]) ** 2, axis=2)
        fi = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        d2min = d2[rows, fi]
        upd = d2min < best_d2
        best_d2[upd] = d2min[upd]
        best_f[upd] = fi[upd] + f0
        best_q[upd] = q[rows, fi][upd]
        best_b[upd] = bary[rows, fi][upd]
    return np.sqrt(best_d2), best_f, best_q, best_b


def _closest_point_triangles(p, tri):
    """Closest point on each triangle for each p (Ericson, vectorized).

    p: (P, 3); tri: (F, 3, 3). Returns points (P, F, 3) and barycentric (P, F, 3).
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = p[:, None, :] - a[None, :, :]
    d1 = np.einsum("fk,pfk->pf", ab, ap)
    d2 = np.einsum("fk,pfk->pf", ac, ap)
    bp = p[:, None, :] - b[None, :, :]
    d3 = np.einsum("fk,pfk->pf", ab, bp)
    d4 = np.einsum("fk,pfk->pf", ac, bp)
    cp = p[:, None, :] - c[None, :, :]
    d5 = np.einsum("fk,pfk->pf", ab, cp)
    d6 = np.einsum("fk,pfk->pf", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        t_ab = np.clip(np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0), 0, 1)
        t_ac = np.clip(np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0), 0, 1)
        denom_bc = (d4 - d3) + (d5 - d6)
        t_bc = np.clip(np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0), 0, 1)

    u_ = 1.0 - v - w
    bary = np.stack([u_, v, w], axis=2)
    # region masks, applied in priority order
    m_a = (d1 <= 0) & (d2 <= 0)
    m_b = (d3 >= 0) & (d4 <= d3)
    m_c = (d6 >= 0) & (d5 <= d6)
    m_ab = (~m_a) & (~m_b) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    m_ac = (~m_a) & (~m_c) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    m_bc = (~m_b) & (~m_c) & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    bary = np.where(m_bc[..., None],
                    np.stack([np.zeros_like(t_bc), 1 - t_bc, t_bc], axis=2), bary)
    bary = np.where(m_ac[..., None],
                    np.stack([1 - t_ac, np.zeros_like(t_ac), t_ac], axis=2), bary)
    bary = np.where(m_ab[..., None],
                    np.stack([1 - t_ab, t_ab, np.zeros_like(t_ab)], axis=2), bary)
    one = np.ones_like(d1)
    zero = np.zeros_like(d1)
    bary = np.where(m_c[..., None], np.stack([zero, zero, one], axis=2), bary)
    bary = np.where(m_b[..., None], np.stack([zero, one, zero], axis=2), bary)
    bary = np.where(m_a[..., None], np.stack([one, zero, zero], axis=2), bary)
    q = np.einsum("pfi,fik->pfk", bary, tri)
    return q, bary


def point_mesh_distances(points, mesh):
    """Unsigned distance from each point to the closest triangle."""
    d, _, _, _ = closest_point_on_mesh(points, mesh)
    return d


def winding_numbers(points, mesh, chunk=None):
    """Generalized winding number of each point w.r.t. the mesh surface."""
    pts = _pts(points)
    tri = mesh.triangles()
    if chunk is None:
        chunk = max(16, int(2e6 // max(len(tri), 1)))
    w = np.zeros(len(pts))
    for i0 in range(0, len(pts), chunk):
        p = pts[i0:i0 + chunk]
        a = tri[None, :, 0] - p[:, None]
        b = tri[None, :, 1] - p[:, None]
        c = tri[None, :, 2] - p[:, None]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        num = np.einsum("pfk,pfk->pf", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pfk,pfk->pf", a, b) * lc
               + np.einsum("pfk,pfk->pf", b, c) * la
               + np.einsum("pfk,pfk->pf", c, a) * lb)
        w[i0:i0 + chunk] = np.sum(2.0 * np.arctan2(num, den), axis=1) / (4 * np.pi)
    return w


def inside_mesh(points, mesh):
    """Winding-number inside test; boundary points classify as outside."""
    if not mesh.watertight:
        raise GeometryError("inside test requires a watertight mesh")
    return winding_numbers(points, mesh) > 0.5


def contact_mask(hand_mesh, obj_points, tau):
    """True where an object point lies within ``tau`` of the hand surface."""
    if tau <= 0:
        raise GeometryError("contact threshold must be positive")
    return point_mesh_distances(obj_points, hand_mesh) < tau
