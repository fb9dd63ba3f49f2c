"""Procedural articulated hand: 61 parameters -> fixed-topology 778-vertex mesh.

Parameter vector layout:
  [0:3]   global translation (m)
  [3:6]   global rotation, axis-angle (rad)
  [6:51]  15 joint rotations (5 fingers x 3 joints x axis-angle), clamped to [-pi, pi]
  [51:61] 10 shape coefficients (dimensionless)

The hand rests in the x-y plane, wrist at the origin, fingers fanning toward
+y, palm normal +z; positive flexion about each joint's in-plane axis curls
the fingers toward +z. Geometry is a closed ellipsoid palm plus five closed
capsule fingers (128 + 5 x 130 = 778 vertices), skinned with at most two
bones per vertex. The whole forward map is differentiable with respect to
all 61 parameters through the tensor engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..engine import Tensor, concat, stack
from .mesh import GeometryError, TriangleMesh, _lat_long_faces

NUM_PARAMS = 61
NUM_VERTS = 778
NUM_KEYPOINTS = 21
NUM_JOINTS = 15

_PALM_RINGS, _PALM_SEGS = 14, 9
_FINGER_RINGS, _FINGER_SEGS = 16, 8
_PALM_VERTS = _PALM_RINGS * _PALM_SEGS + 2  # 128
_FINGER_VERTS = _FINGER_RINGS * _FINGER_SEGS + 2  # 130

_PALM_RADII = np.array([0.040, 0.052, 0.014])
_PALM_CENTER = np.array([0.0, 0.010, 0.0])

# per finger: base position, unit direction (in-plane), phalanx lengths, radii
_FINGERS = [
    ("thumb", [-0.040, 0.016, 0.0], [-0.72, 0.6940, 0.0], [0.034, 0.028, 0.024], [0.0105, 0.0085]),
    ("index", [-0.028, 0.056, 0.0], [-0.10, 0.9950, 0.0], [0.036, 0.024, 0.020], [0.0090, 0.0070]),
    ("middle", [-0.009, 0.060, 0.0], [0.00, 1.0000, 0.0], [0.040, 0.026, 0.022], [0.0092, 0.0072]),
    ("ring", [0.010, 0.058, 0.0], [0.10, 0.9950, 0.0], [0.036, 0.024, 0.020], [0.0088, 0.0068]),
    ("pinky", [0.028, 0.050, 0.0], [0.20, 0.9798, 0.0], [0.028, 0.020, 0.017], [0.0078, 0.0060]),
]

_BLEND = 0.006  # skinning blend half-width around joint boundaries (m)

_Z = np.array([0.0, 0.0, 1.0])
_G = [Tensor(np.array([[0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]])),
      Tensor(np.array([[0, 0, 1.0], [0, 0, 0], [-1.0, 0, 0]])),
      Tensor(np.array([[0, -1.0, 0], [1.0, 0, 0], [0, 0, 0]]))]
_I3 = Tensor(np.eye(3))


@dataclass
class HandParams:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (NUM_PARAMS,):
            raise GeometryError(f"hand parameters must have length {NUM_PARAMS}")
        self.values = self.values.copy()
        self.values[3:51] = np.clip(self.values[3:51], -np.pi, np.pi)

    @staticmethod
    def zeros():
        return HandParams(np.zeros(NUM_PARAMS))


@dataclass
class HandMesh:
    mesh: TriangleMesh
    keypoints: np.ndarray  # (21, 3): wrist, then per finger base/mid/distal/tip

    @property
    def vertices(self):
        return self.mesh.vertices


def _capsule_rings(lengths, radii):
    """Axial stations and radii for one finger capsule, ordered tip -> base."""
    total = float(np.sum(lengths))
    r_base, r_tip = radii
    stations = []
    for i in (3, 2, 1):  # tip hemisphere
        phi = 0.5 * np.pi * i / 4
        stations.append((total + r_tip * np.sin(phi), r_tip * np.cos(phi)))
    for i in range(9, -1, -1):  # shaft
        t = i / 9
        stations.append((total * t, r_base + (r_tip - r_base) * t))
    for i in (1, 2, 3):  # base hemisphere
        phi = 0.5 * np.pi * i / 4
        stations.append((-r_base * np.cos(phi), r_base * np.sin(phi)))
    return total, r_base, r_tip, stations


def _skin_weights(a, boundaries):
    """Blend weights over 3 bones from the axial coordinate."""
    c1, c2 = boundaries
    w = np.zeros((len(a), 3))
    t1 = np.clip((a - (c1 - _BLEND)) / (2 * _BLEND), 0.0, 1.0)
    t2 = np.clip((a - (c2 - _BLEND)) / (2 * _BLEND), 0.0, 1.0)
    w[:, 0] = 1.0 - t1
    w[:, 1] = t1 * (1.0 - t2)
    w[:, 2] = t1 * t2
    return w


@lru_cache(maxsize=1)
def hand_template():
    """Deterministic rest-pose template shared by every HandParams."""
    verts = np.zeros((NUM_VERTS, 3))
    faces = []
    # palm: ellipsoid offsets stored relative to the wrist origin
    k = 0
    verts[k] = _PALM_CENTER + np.array([0, 0, _PALM_RADII[2]])
    k += 1
    for i in range(1, _PALM_RINGS + 1):
        phi = np.pi * i / (_PALM_RINGS + 1)
        for j in range(_PALM_SEGS):
            th = 2 * np.pi * j / _PALM_SEGS
            verts[k] = _PALM_CENTER + _PALM_RADII * np.array(
                [np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)])
            k += 1
    verts[k] = _PALM_CENTER + np.array([0, 0, -_PALM_RADII[2]])
    k += 1
    faces.append(_lat_long_faces(_PALM_RINGS, _PALM_SEGS, _PALM_VERTS - 1))

    fingers = []
    for name, base, d, lengths, radii in _FINGERS:
        base = np.array(base)
        d = np.array(d) / np.linalg.norm(d)
        e1 = np.cross(d, _Z)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(d, e1)  # (e1, e2, d) right-handed
        total, r_base, r_tip, stations = _capsule_rings(lengths, radii)
        v0 = k
        axial = np.zeros(_FINGER_VERTS)
        radial = np.zeros((_FINGER_VERTS, 3))
        axial[0] = total + r_tip  # tip pole
        kk = 1
        for a, rho in stations:
            for j in range(_FINGER_SEGS):
                th = 2 * np.pi * j / _FINGER_SEGS
                axial[kk] = a
                radial[kk] = rho * (np.cos(th) * e1 + np.sin(th) * e2)
                kk += 1
        axial[kk] = -r_base  # base pole
        verts[v0:v0 + _FINGER_VERTS] = base + axial[:, None] * d + radial
        faces.append(_lat_long_faces(_FINGER_RINGS, _FINGER_SEGS, _FINGER_VERTS - 1) + v0)
        boundaries = (float(lengths[0]), float(lengths[0] + lengths[1]))
        fingers.append({
            "name": name,
            "slice": (v0, v0 + _FINGER_VERTS),
            "base": base,
            "dir": d,
            "flex_axis": e1,
            "lengths": np.asarray(lengths, dtype=np.float64),
            "axial": axial,
            "axial_dir": np.outer(axial, d),  # (n, 3) precomputed a*d
            "radial": radial,
            "weights": _skin_weights(axial, boundaries),
        })
        k += _FINGER_VERTS
    assert k == NUM_VERTS
    return {
        "verts": verts,
        "faces": np.concatenate(faces),
        "palm": verts[:_PALM_VERTS].copy(),
        "fingers": fingers,
    }


def rotation_from_axis_angle(w):
    """Rodrigues rotation matrix as a differentiable (3,3) Tensor."""
    theta = ((w * w).sum() + 1e-24).sqrt()
    a = theta.sin() / theta
    b = (1.0 - theta.cos()) / (theta * theta)
    kmat = w[0] * _G[0] + w[1] * _G[1] + w[2] * _G[2]
    return _I3 + a * kmat + b * (kmat @ kmat)


def hand_forward(params):
    """Pose the hand. Returns (vertices (778,3), keypoints (21,3)) Tensors.

    ``params`` may be a Tensor (for gradients) or any array-like.
    """
    p = params if isinstance(params, Tensor) else Tensor(np.asarray(params, dtype=np.float64))
    if p.shape != (NUM_PARAMS,):
        raise GeometryError(f"expected {NUM_PARAMS} hand parameters, got shape {p.shape}")
    tpl = hand_template()
    trans = p[0:3]
    rots = p[3:51].clip(-np.pi, np.pi)
    shape = p[51:61]

    one = Tensor(1.0)
    g = one + 0.1 * shape[0]
    sx = one + 0.1 * shape[1]
    sz = one + 0.1 * shape[2]
    sl = one + 0.1 * shape[3]
    sr = one + 0.1 * shape[4]

    r_glob = rotation_from_axis_angle(rots[0:3])
    r_glob_t = r_glob.transpose()

    palm_scale = stack([sx, one, sz]) * g
    palm = (Tensor(tpl["palm"]) * palm_scale) @ r_glob_t + trans

    blocks = [palm]
    keypoints = [trans]
    for f, fin in enumerate(tpl["fingers"]):
        sl_f = sl * (one + 0.1 * shape[5 + f]) * g
        base = Tensor(fin["base"]) * (stack([sx, one, one]) * g)
        lengths = fin["lengths"]
        d = Tensor(fin["dir"])
        joints = [base + (sl_f * float(c)) * d
                  for c in np.concatenate([[0.0], np.cumsum(lengths)])]
        rest = base + Tensor(fin["axial_dir"]) * sl_f + Tensor(fin["radial"]) * (sr * g)

        r_acc, p_acc = r_glob, trans
        bone_pos = []
        kp = [r_glob @ joints[0] + trans]
        for k in range(3):
            r_loc = rotation_from_axis_angle(rots[3 + (f * 3 + k) * 3: 6 + (f * 3 + k) * 3])
            j = joints[k]
            p_acc = r_acc @ (j - r_loc @ j) + p_acc
            r_acc = r_acc @ r_loc
            bone_pos.append((r_acc, p_acc))
            kp.append(r_acc @ joints[k + 1] + p_acc)
        keypoints.extend(kp)

        w = fin["weights"]
        parts = []
        for k, (r_k, p_k) in enumerate(bone_pos):
            parts.append(Tensor(w[:, k:k + 1]) * (rest @ r_k.transpose() + p_k))
        blocks.append(parts[0] + parts[1] + parts[2])

    verts = concat(blocks, axis=0)
    kps = stack(keypoints, axis=0)
    return verts, kps


def hand_forward_np(params):
    """Non-differentiating forward pass; returns numpy (verts, keypoints)."""
    v, k = hand_forward(np.asarray(params, dtype=np.float64))
    return v.data, k.data


def hand_mesh(params):
    """Pose the hand and wrap the result as a HandMesh."""
    if isinstance(params, HandParams):
        params = params.values
    v, k = hand_forward_np(params)
    tpl = hand_template()
    return HandMesh(TriangleMesh(v, tpl["faces"], watertight=True), k)


def flexion_params(base_params, finger, angle, joint_weights=(1.0, 0.8, 0.6)):
    """Curl one finger by ``angle`` about its flexion axis (helper for synthesis)."""
    tpl = hand_template()
    axis = tpl["fingers"][finger]["flex_axis"]
    out = np.asarray(base_params, dtype=np.float64).copy()
    for k, wk in enumerate(joint_weights):
        j = finger * 3 + k
        out[6 + 3 * j: 9 + 3 * j] = axis * angle * wk
    return out
