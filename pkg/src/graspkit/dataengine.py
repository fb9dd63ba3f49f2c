"""Synthetic hand-object corpus generation and the self-training annotator.

Objects are closed procedural meshes with labeled parts (body, handle, cap,
pump). Grasps are synthesized by placing the palm against the class's target
part and bisecting each finger's flexion angle to first contact. The
annotation engine seeds labels on a fraction of the corpus and grows coverage
with confidence-thresholded pseudo-labels from a point-cloud classifier.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import (TriangleMesh, box, cylinder, merge_meshes, sample_surface,
                       save_obj, save_ply, torus, uv_sphere)
from .geometry.hand import NUM_PARAMS, flexion_params, hand_mesh, hand_template
from .geometry.kernels import contact_mask, inside_mesh, point_mesh_distances

AFFORDANCE_CLASSES = ["Handle-grasp", "No-grasp", "Press", "Lift", "Wrap-grasp",
                      "Twist", "Support", "Pull", "Lever", "Null"]

OBJECT_KINDS = ["sphere", "box", "cylinder", "mug", "bottle", "dispenser"]


class DataEngineError(Exception):
    pass


# -- procedural objects -------------------------------------------------------
# All objects stand on z=0 with +z up, desk scale (meters).


def make_object(kind, scale=1.0, segments=24):
    if kind == "sphere":
        r = 0.030 * scale
        m = uv_sphere(radius=r, rings=segments, segments=segments, center=(0, 0, r))
        return TriangleMesh(m.vertices, m.faces, True, {"body": np.arange(len(m.faces))})
    if kind == "box":
        s = 0.055 * scale
        m = box(size=(s, s, s), center=(0, 0, s / 2))
        return TriangleMesh(m.vertices, m.faces, True, {"body": np.arange(len(m.faces))})
    if kind == "cylinder":
        r, h = 0.024 * scale, 0.110 * scale
        m = cylinder(radius=r, height=h, segments=segments, center=(0, 0, h / 2))
        return TriangleMesh(m.vertices, m.faces, True, {"body": np.arange(len(m.faces))})
    if kind == "mug":
        r, h = 0.034 * scale, 0.090 * scale
        body = cylinder(radius=r, height=h, segments=segments, center=(0, 0, h / 2))
        handle = torus(major_radius=0.024 * scale, minor_radius=0.007 * scale,
                       segments=segments, tube_segments=12,
                       center=(r + 0.012 * scale, 0, h / 2), plane="xz")
        return merge_meshes([("body", body), ("handle", handle)])
    if kind == "bottle":
        r, h = 0.028 * scale, 0.120 * scale
        body = cylinder(radius=r, height=h, segments=segments, center=(0, 0, h / 2))
        cap = cylinder(radius=0.013 * scale, height=0.024 * scale, segments=segments,
                       center=(0, 0, h + 0.012 * scale))
        return merge_meshes([("body", body), ("cap", cap)])
    if kind == "dispenser":
        s, h = 0.050 * scale, 0.110 * scale
        body = box(size=(s, s, h), center=(0, 0, h / 2))
        pump = cylinder(radius=0.010 * scale, height=0.030 * scale, segments=segments,
                        center=(0, 0, h + 0.015 * scale))
        return merge_meshes([("body", body), ("pump", pump)])
    raise DataEngineError(f"unknown object kind: {kind!r}")


# class -> {kind: target part}; None target means the hand never touches.
CLASS_COMPAT = {
    "Handle-grasp": {"mug": "handle"},
    "No-grasp": {k: None for k in OBJECT_KINDS},
    "Press": {"dispenser": "pump", "bottle": "cap"},
    "Lift": {"sphere": "body", "box": "body", "cylinder": "body"},
    "Wrap-grasp": {"cylinder": "body", "bottle": "body", "sphere": "body"},
    "Twist": {"bottle": "cap"},
    "Support": {"sphere": "body", "box": "body"},
    "Pull": {"mug": "handle", "box": "body"},
    "Lever": {"dispenser": "pump"},
    "Null": {k: None for k in OBJECT_KINDS},
}

# default kind per class, chosen so every class has a distinct scene geometry
DEFAULT_KIND = {
    "Handle-grasp": "mug", "No-grasp": "sphere", "Press": "dispenser",
    "Lift": "box", "Wrap-grasp": "cylinder", "Twist": "bottle",
    "Support": "sphere", "Pull": "box", "Lever": "dispenser", "Null": "cylinder",
}

# approach: outward unit vector from the target to where the hand sits; the
# palm normal points back against it. fingers: which digits join the closure.
# press = extra flexion past first contact, the grip pressure real grasp
# corpora exhibit (their GT penetration volumes are well above zero). Kept
# small for Wrap-grasp so the sphere example stays under half a cm^3.
_GRASP_STYLE = {
    "Handle-grasp": dict(approach=(1, 0, 0), fingers=(0, 1, 2), preflex=0.25, press=0.12),
    "Press": dict(approach=(0, 0, 1), fingers=(1,), preflex=0.9, press=0.12,
                  palm_press=0.003),
    "Lift": dict(approach=(0, 0, 1), fingers=(0, 1, 2, 3, 4), preflex=0.1, press=0.06),
    "Wrap-grasp": dict(approach=(-1, 0, 0), fingers=(0, 1, 2, 3, 4), preflex=0.1, press=0.015),
    "Twist": dict(approach=(0, 0, 1), fingers=(0, 1), preflex=0.3, press=0.18),
    "Support": dict(approach=(0, 0, -1), fingers=(), preflex=0.15, press=0.0,
                    palm_press=0.004),
    "Pull": dict(approach=(0, -1, 0), fingers=(0, 1, 2, 3), preflex=0.2, press=0.06),
    "Lever": dict(approach=(0, -1, 0), fingers=(0, 1), preflex=0.3, press=0.18),
    "No-grasp": dict(approach=(-1, 0, 0), fingers=(), preflex=0.0, press=0.0),
    "Null": dict(approach=(-1, 0, 0), fingers=(), preflex=0.0, press=0.0),
}

TOUCH_TAU = 0.005  # contact threshold shared with the geometry losses (m)
_STANDOFF_FAR = 0.12  # hover distance for the no-contact classes (m)


@dataclass
class GraspSample:
    kind: str
    class_name: str
    mesh: TriangleMesh
    cloud: np.ndarray            # (N, 3)
    afford_mask: np.ndarray      # (N,) 1 on the target part
    contact_mask: np.ndarray     # (N,) 1 where the final hand is within tau
    hand_params: np.ndarray      # (61,)
    instruction: str
    seed: int
    provenance: str = "gt"       # "gt" | "pseudo"
    confidence: float = None

    def __post_init__(self):
        if self.class_name not in AFFORDANCE_CLASSES:
            raise DataEngineError(f"unknown class {self.class_name!r}")
        n = len(self.cloud)
        if len(self.afford_mask) != n or len(self.contact_mask) != n:
            raise DataEngineError("mask length does not match cloud")
        if self.hand_params.shape != (NUM_PARAMS,):
            raise DataEngineError("hand parameters must have length 61")

    def hand_cloud(self, n, seed=0):
        """Hand-surface samples for classifier input."""
        hm = hand_mesh(self.hand_params)
        return sample_surface(hm.mesh, n, np.random.default_rng(seed))


def _part_target(mesh, part):
    """Centroid and outward direction of a part's surface."""
    fidx = mesh.parts[part]
    tris = mesh.vertices[mesh.faces[fidx]]
    centroid = tris.mean(axis=(0, 1))
    return centroid


def _orient_palm(approach):
    """Rotation vector turning the template (+z palm normal, +y fingers)
    so the palm faces along ``approach``."""
    a = np.asarray(approach, dtype=np.float64)
    a = a / np.linalg.norm(a)
    # pick a finger direction orthogonal to the approach
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(a, up)) > 0.9:
        up = np.array([0.0, 1.0, 0.0])
    y_new = up - np.dot(up, a) * a
    y_new /= np.linalg.norm(y_new)
    x_new = np.cross(y_new, a)
    rot = np.stack([x_new, y_new, a], axis=1)  # columns are images of x, y, z
    return Rotation.from_matrix(rot).as_rotvec()


def _place_hand(target, approach, standoff, shape=None):
    """61 parameters with the palm center ``standoff`` from ``target`` along
    ``approach`` (palm normal pointing at the target)."""
    a = np.asarray(approach, dtype=np.float64)
    a = a / np.linalg.norm(a)
    params = np.zeros(NUM_PARAMS)
    params[3:6] = _orient_palm(-a)  # palm normal faces against the approach ray
    rot = Rotation.from_rotvec(params[3:6])
    palm_center = np.array([0.0, 0.010, 0.0])
    params[0:3] = target + a * standoff - rot.apply(palm_center)
    if shape is not None:
        params[51:61] = shape
    return params


def _flex_all(params, fingers, angles):
    out = params
    for f, ang in zip(fingers, angles):
        out = flexion_params(out, f, ang)
    return out


def _collides(params, obj_mesh, obj_points):
    """Symmetric penetration test: hand vertices inside the object, or dense
    object surface samples inside the hand (catches thin parts like handles
    slipping between hand vertices)."""
    hm = hand_mesh(params)
    if inside_mesh(hm.vertices, obj_mesh).any():
        return True
    lo, hi = hm.mesh.aabb()
    near = np.all((obj_points > lo - 1e-9) & (obj_points < hi + 1e-9), axis=1)
    return near.any() and inside_mesh(obj_points[near], hm.mesh).any()


def _finger_faces(f):
    tpl = hand_template()
    faces = tpl["faces"]
    lo = 128 + f * 130  # palm verts, then one capsule per finger
    hi = lo + 130
    sel = np.all((faces >= lo) & (faces < hi), axis=1)
    return faces[sel] - lo, lo, hi


def _bisect_closure(params, fingers, preflex, obj_mesh, obj_points,
                    hi_angle=1.45, iters=14):
    """Flex each finger in turn to its own first-contact angle (bisection).

    Only the moving finger is collision-tested (its capsule is a closed
    submesh); the rest of the hand was already validated at placement time.
    Returns the per-finger flexion angles (including the preflex)."""
    angles = [preflex] * len(fingers)

    def penetrates(i, a):
        trial = list(angles)
        trial[i] = a
        hm = hand_mesh(_flex_all(params, fingers, trial))
        faces, lo_v, hi_v = _finger_faces(fingers[i])
        fverts = hm.mesh.vertices[lo_v:hi_v]
        if inside_mesh(fverts, obj_mesh).any():
            return True
        capsule = TriangleMesh(fverts, faces, watertight=True)
        blo, bhi = capsule.aabb()
        near = np.all((obj_points > blo - 1e-9) & (obj_points < bhi + 1e-9), axis=1)
        return near.any() and inside_mesh(obj_points[near], capsule).any()

    for i in range(len(fingers)):
        lo, hi = preflex, preflex + hi_angle
        if penetrates(i, lo):
            angles[i] = lo
            continue
        if not penetrates(i, hi):
            angles[i] = hi
            continue
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if penetrates(i, mid):
                hi = mid
            else:
                lo = mid
        angles[i] = lo
    return angles


def gen_synthetic_pair(kind, class_name, seed, n_points=256):
    """One deterministic (object, grasp) pair for the given class."""
    if class_name not in CLASS_COMPAT:
        raise DataEngineError(f"unknown class {class_name!r}")
    compat = CLASS_COMPAT[class_name]
    if kind not in compat:
        raise DataEngineError(f"class {class_name!r} incompatible with kind {kind!r}")
    rng = np.random.default_rng(seed)
    scale = 1.0 + rng.uniform(-0.08, 0.08)
    mesh = make_object(kind, scale)
    cloud, fidx = sample_surface(mesh, n_points, rng, return_face_idx=True)

    part = compat[kind]
    if part is None:
        afford = np.zeros(n_points)
        target = mesh.vertices.mean(axis=0)
    else:
        part_faces = np.zeros(len(mesh.faces), dtype=bool)
        part_faces[mesh.parts[part]] = True
        afford = part_faces[fidx].astype(np.float64)
        target = _part_target(mesh, part)

    style = _GRASP_STYLE[class_name]
    shape = rng.normal(0, 0.3, 10).clip(-1, 1)
    if part is None:
        params = _place_hand(target, style["approach"], _STANDOFF_FAR, shape)
    else:
        dense = sample_surface(mesh, 1024, np.random.default_rng(seed + 7))
        standoff = _fit_standoff(target, style, mesh, dense, shape)
        standoff -= style.get("palm_press", 0.0)
        params = _place_hand(target, style["approach"], standoff, shape)
        fingers = style["fingers"]
        if fingers:
            angles = _bisect_closure(params, fingers, style["preflex"], mesh, dense)
            angles = [min(a + style["press"], style["preflex"] + 1.45) for a in angles]
            params = _flex_all(params, fingers, angles)
    hm = hand_mesh(params)
    touch = contact_mask(hm.mesh, cloud, TOUCH_TAU).astype(np.float64)
    instruction = generate_instruction(class_name, kind, seed)
    return GraspSample(kind, class_name, mesh, cloud, afford, touch,
                       np.asarray(params, dtype=np.float64), instruction, seed)


def _fit_standoff(target, style, obj_mesh, obj_points, shape,
                  lo=0.012, hi=0.09, iters=14):
    """Closest palm standoff that keeps the open hand out of the object."""

    def penetrates(s):
        p = _place_hand(target, style["approach"], s, shape)
        if style["preflex"] > 0 and style["fingers"]:
            p = _flex_all(p, style["fingers"], [style["preflex"]] * len(style["fingers"]))
        return _collides(p, obj_mesh, obj_points)

    if not penetrates(lo):
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if penetrates(mid):
            lo = mid
        else:
            hi = mid
    return hi


# -- instruction templates ----------------------------------------------------

INSTRUCTION_TEMPLATES = {
    "Handle-grasp": [
        "Grip the handle of the {object}.",
        "Take hold of the {object} by its handle.",
        "Grab the {object} handle firmly.",
        "Hold the {object} by the handle.",
        "Curl your fingers around the handle of the {object}.",
    ],
    "No-grasp": [
        "Do not grasp the {object}.",
        "Keep your hand away from the {object}.",
        "Leave the {object} untouched.",
        "Hover near the {object} without touching it.",
        "Avoid contact with the {object}.",
    ],
    "Press": [
        "Press the {object} to pour.",
        "Push down on the top of the {object}.",
        "Press the {object} with your fingertip.",
        "Depress the {object} from above.",
        "Give the {object} a firm press.",
    ],
    "Lift": [
        "Lift the {object} off the table.",
        "Pick the {object} up from above.",
        "Raise the {object} with a top grasp.",
        "Lift the {object} straight up.",
        "Take the {object} and lift it.",
    ],
    "Wrap-grasp": [
        "Wrap your hand around the {object}.",
        "Close your fingers around the {object}.",
        "Encircle the {object} with your hand.",
        "Wrap your palm and fingers around the {object}.",
        "Get a full wrap grip on the {object}.",
    ],
    "Twist": [
        "Twist the cap of the {object}.",
        "Unscrew the top of the {object}.",
        "Twist the {object} open.",
        "Rotate the cap on the {object}.",
        "Give the {object} cap a twist.",
    ],
    "Support": [
        "Support the {object} from below.",
        "Hold your palm under the {object}.",
        "Balance the {object} on your open hand.",
        "Carry the {object} on your palm.",
        "Steady the {object} from underneath.",
    ],
    "Pull": [
        "Pull the {object} toward you.",
        "Drag the {object} closer.",
        "Pull on the {object} gently.",
        "Tug the {object} in your direction.",
        "Pull the {object} across the table.",
    ],
    "Lever": [
        "Push the lever on the {object} sideways.",
        "Flick the {object} lever.",
        "Move the lever of the {object}.",
        "Operate the {object} by its lever.",
        "Tip the lever on the {object}.",
    ],
    "Null": [
        "Ignore the {object}.",
        "No action on the {object}.",
        "Rest your hand near the {object}.",
        "The {object} needs no interaction.",
        "Skip the {object}.",
    ],
}


def generate_instruction(class_name, object_name, seed):
    """Seeded template pick; the object name always appears in the result."""
    if class_name not in INSTRUCTION_TEMPLATES:
        raise DataEngineError(f"unknown class {class_name!r}")
    templates = INSTRUCTION_TEMPLATES[class_name]
    return templates[seed % len(templates)].format(object=object_name)


# -- manifest and corpus writing ----------------------------------------------


@dataclass
class ManifestRecord:
    path: str
    kind: str
    class_name: str
    split: str
    provenance: str
    seed: int
    confidence: float = None


@dataclass
class Manifest:
    root: str
    seed: int
    records: list = field(default_factory=list)
    rounds_run: int = 0
    warning: str = None

    def save(self, path):
        payload = {
            "root": self.root, "seed": self.seed, "rounds_run": self.rounds_run,
            "warning": self.warning,
            "records": [vars(r) for r in self.records],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            p = json.load(fh)
        m = cls(p["root"], p["seed"], rounds_run=p["rounds_run"], warning=p["warning"])
        m.records = [ManifestRecord(**r) for r in p["records"]]
        return m


def save_sample(sample, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    save_obj(os.path.join(out_dir, "object.obj"), sample.mesh)
    save_ply(os.path.join(out_dir, "cloud.ply"), sample.cloud)
    save_obj(os.path.join(out_dir, "hand.obj"), hand_mesh(sample.hand_params).mesh)
    np.savetxt(os.path.join(out_dir, "params.csv"), sample.hand_params[None],
               delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(out_dir, "affordance.csv"),
               np.stack([sample.afford_mask, sample.contact_mask], axis=1),
               delimiter=",", fmt="%.17g", header="affordance,contact", comments="")
    meta = {"kind": sample.kind, "class": sample.class_name,
            "instruction": sample.instruction, "seed": sample.seed,
            "provenance": sample.provenance, "confidence": sample.confidence}
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


# -- self-training annotation -------------------------------------------------


@dataclass
class SigmaPolicy:
    """Accept a pseudo-label when max softmax clears mu + n_sigma * std of the
    labeled validation confidences, capped so a perfect classifier still
    accepts (the cap keeps the bound attainable)."""

    n_sigma: float = 2.0
    cap: float = 0.99

    def bound(self, val_confidences):
        c = np.asarray(val_confidences, dtype=np.float64)
        return min(self.cap, float(c.mean() + self.n_sigma * c.std()))


@dataclass
class ImpossiblePolicy:
    """Fixed threshold, useful for forcing zero acceptance in tests."""

    threshold: float = 1.01

    def bound(self, val_confidences):
        return self.threshold


def _classifier_inputs(samples, n_hand=128):
    return [(s.hand_cloud(n_hand, seed=s.seed), s.cloud) for s in samples]


def pseudo_label_round(labeled, unlabeled, policy=None, classifier=None,
                       epochs=300, lr=3e-3, seed=0, n_hand=128):
    """One self-training round: fit on labeled, accept confident unlabeled.

    Accepted samples are returned with provenance="pseudo", predicted class,
    and stored confidence. Returns (accepted, rejected, stats).
    """
    from .metrics import GraspClassifier, classifier_train

    if not labeled:
        raise DataEngineError("pseudo_label_round needs a non-empty labeled set")
    policy = policy if policy is not None else SigmaPolicy()
    if classifier is None:
        classifier = GraspClassifier(n_points=128, dim=128,
                                     rng=np.random.default_rng(seed))
    train = [(h, o, AFFORDANCE_CLASSES.index(s.class_name))
             for (h, o), s in zip(_classifier_inputs(labeled, n_hand), labeled)]
    classifier_train(classifier, train, epochs=epochs, lr=lr, seed=seed)
    val_conf = [classifier.predict(h, o, seed=i)[1]
                for i, (h, o, _) in enumerate(train)]
    bound = policy.bound(val_conf)
    accepted, rejected = [], []
    for i, ((h, o), s) in enumerate(zip(_classifier_inputs(unlabeled, n_hand),
                                        unlabeled)):
        pred, conf = classifier.predict(h, o, seed=1000 + i)
        if conf >= bound:
            ns = copy.copy(s)
            ns.class_name = AFFORDANCE_CLASSES[pred]
            ns.provenance = "pseudo"
            ns.confidence = conf
            accepted.append(ns)
        else:
            rejected.append(s)
    stats = {"bound": bound, "n_accepted": len(accepted),
             "n_rejected": len(rejected), "val_conf_mean": float(np.mean(val_conf))}
    return accepted, rejected, stats


def run_engine(out_dir, classes=None, per_class=4, seed=0, seed_label_frac=0.5,
               max_rounds=10, policy=None, n_points=256, write_samples=True):
    """Generate the corpus, grow labels by self-training, write the manifest.

    Samples keep their construction-time class for generation; the label the
    engine "knows" is only the seed fraction, the rest is recovered by the
    pseudo-label loop. Returns the Manifest.
    """
    classes = classes if classes is not None else list(AFFORDANCE_CLASSES)
    rng = np.random.default_rng(seed)
    samples = []
    for ci, cls in enumerate(classes):
        for j in range(per_class):
            s = gen_synthetic_pair(DEFAULT_KIND[cls], cls,
                                   seed=int(seed + ci * 1000 + j), n_points=n_points)
            samples.append(s)

    # seed labels are stratified by class so every class is represented
    labeled, unlabeled = [], []
    for ci in range(len(classes)):
        idxs = rng.permutation(per_class) + ci * per_class
        n_seed = int(round(seed_label_frac * per_class))
        labeled.extend(samples[i] for i in idxs[:n_seed])
        unlabeled.extend(samples[i] for i in idxs[n_seed:])
    total = len(samples)

    rounds = 0
    warning = None
    while unlabeled and rounds < max_rounds:
        accepted, unlabeled, stats = pseudo_label_round(
            labeled, unlabeled, policy=policy, seed=seed + rounds)
        labeled = labeled + accepted
        rounds += 1
        assert len(labeled) + len(unlabeled) == total
        if not accepted and unlabeled:
            warning = (f"no acceptances in round {rounds}; "
                       f"{len(unlabeled)} samples left unlabeled")
            break
    if unlabeled and warning is None:
        warning = f"round cap reached with {len(unlabeled)} samples unlabeled"

    manifest = Manifest(root=out_dir, seed=seed, rounds_run=rounds, warning=warning)
    splits = _assign_splits(len(labeled), rng)
    os.makedirs(out_dir, exist_ok=True)
    for i, s in enumerate(labeled):
        rel = f"sample_{i:05d}"
        if write_samples:
            save_sample(s, os.path.join(out_dir, rel))
        manifest.records.append(ManifestRecord(
            path=rel, kind=s.kind, class_name=s.class_name, split=splits[i],
            provenance=s.provenance, seed=s.seed, confidence=s.confidence))
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def _assign_splits(n, rng, fractions=(0.7, 0.15, 0.15)):
    names = ["train", "val", "test"]
    counts = [int(round(f * n)) for f in fractions]
    counts[0] = n - counts[1] - counts[2]
    bag = sum(([nm] * c for nm, c in zip(names, counts)), [])
    rng.shuffle(bag)
    return bag


def load_external_dataset(root):
    """Converter stub for user-provided hand-object datasets.

    Expected layout (not implemented): one directory per sample containing
    object.obj (watertight object mesh), hand.obj (posed hand mesh),
    params.csv (61 hand parameters), cloud.ply (object surface points),
    affordance.csv (per-point affordance and contact columns), and meta.json
    with at least {"class": ..., "instruction": ...}.
    """
    raise NotImplementedError("external dataset ingestion is documented but not "
                              "implemented; generate a corpus with run_engine")
