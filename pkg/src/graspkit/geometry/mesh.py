"""Triangle meshes, point clouds, procedural object primitives, and file I/O.

All coordinates are meters. Generated primitives are closed (every edge is
shared by exactly two faces); multi-part objects are unions of closed
components, which keeps winding-number inside tests valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FMT = "%.17g"  # 17 significant digits round-trips float64 exactly


class GeometryError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise GeometryError(f"point cloud must be (N>=1, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("point cloud contains non-finite coordinates")


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    watertight: bool = True
    parts: dict = field(default_factory=dict)  # part name -> face index array

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")

    def triangles(self):
        return self.vertices[self.faces]

    def face_areas(self):
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def aabb(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def translated(self, offset):
        return TriangleMesh(self.vertices + np.asarray(offset), self.faces,
                            self.watertight, dict(self.parts))

    def check_closed(self):
        """Every undirected edge must appear in exactly two faces."""
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                self.faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def merge_meshes(parts):
    """Union of named closed meshes; remembers face ranges per part."""
    verts, faces, part_map = [], [], {}
    voff = foff = 0
    for name, mesh in parts:
        verts.append(mesh.vertices)
        faces.append(mesh.faces + voff)
        part_map[name] = np.arange(foff, foff + len(mesh.faces))
        voff += len(mesh.vertices)
        foff += len(mesh.faces)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces), True, part_map)


# -- primitives ---------------------------------------------------------------


def uv_sphere(radius=0.05, rings=12, segments=16, center=(0, 0, 0), radii=None):
    """Lat-long sphere (or ellipsoid via ``radii``), closed, (rings*segments+2) verts."""
    r3 = np.array(radii if radii is not None else (radius,) * 3, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    verts = [center + np.array([0, 0, r3[2]])]
    for i in range(1, rings + 1):
        phi = np.pi * i / (rings + 1)
        for j in range(segments):
            th = 2 * np.pi * j / segments
            verts.append(center + r3 * np.array(
                [np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)]))
    verts.append(center + np.array([0, 0, -r3[2]]))
    verts = np.array(verts)
    faces = _lat_long_faces(rings, segments, len(verts) - 1)
    return TriangleMesh(verts, faces)


def _lat_long_faces(rings, segments, last):
    faces = []
    for j in range(segments):
        faces.append([0, 1 + j, 1 + (j + 1) % segments])
    for i in range(rings - 1):
        a = 1 + i * segments
        b = a + segments
        for j in range(segments):
            j2 = (j + 1) % segments
            faces.append([a + j, b + j, b + j2])
            faces.append([a + j, b + j2, a + j2])
    a = 1 + (rings - 1) * segments
    for j in range(segments):
        faces.append([last, a + (j + 1) % segments, a + j])
    return np.array(faces, dtype=np.int64)


def box(size=(0.1, 0.1, 0.1), center=(0, 0, 0)):
    s = np.asarray(size, dtype=np.float64) / 2
    c = np.asarray(center, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                       dtype=np.float64)
    verts = c + corners * s
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ], dtype=np.int64)
    return TriangleMesh(verts, faces)


def cylinder(radius=0.03, height=0.1, segments=16, center=(0, 0, 0), axis=2):
    """Closed cylinder along the given axis, caps fanned from center points."""
    c = np.asarray(center, dtype=np.float64)
    ring = np.array([[np.cos(2 * np.pi * j / segments), np.sin(2 * np.pi * j / segments)]
                     for j in range(segments)]) * radius
    lo, hi = -height / 2, height / 2
    verts = []
    for h in (lo, hi):
        for xy in ring:
            v = np.zeros(3)
            v[axis] = h
            v[(axis + 1) % 3] = xy[0]
            v[(axis + 2) % 3] = xy[1]
            verts.append(c + v)
    bot_c, top_c = np.zeros(3), np.zeros(3)
    bot_c[axis], top_c[axis] = lo, hi
    verts.append(c + bot_c)
    verts.append(c + top_c)
    verts = np.array(verts)
    n = segments
    faces = []
    for j in range(n):
        j2 = (j + 1) % n
        faces.append([j, n + j2, n + j])        # side
        faces.append([j, j2, n + j2])
        faces.append([2 * n, j2, j])            # bottom cap
        faces.append([2 * n + 1, n + j, n + j2])  # top cap
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def torus(major_radius=0.03, minor_radius=0.008, segments=20, tube_segments=10,
          center=(0, 0, 0), plane="xz"):
    """Closed torus; ``plane`` picks the plane of the major circle."""
    c = np.asarray(center, dtype=np.float64)
    verts = []
    for i in range(segments):
        u = 2 * np.pi * i / segments
        for j in range(tube_segments):
            v = 2 * np.pi * j / tube_segments
            rr = major_radius + minor_radius * np.cos(v)
            if plane == "xz":
                p = np.array([rr * np.cos(u), minor_radius * np.sin(v), rr * np.sin(u)])
            else:  # "xy"
                p = np.array([rr * np.cos(u), rr * np.sin(u), minor_radius * np.sin(v)])
            verts.append(c + p)
    verts = np.array(verts)
    faces = []
    for i in range(segments):
        i2 = (i + 1) % segments
        for j in range(tube_segments):
            j2 = (j + 1) % tube_segments
            a = i * tube_segments + j
            b = i2 * tube_segments + j
            faces.append([a, b, i2 * tube_segments + j2])
            faces.append([a, i2 * tube_segments + j2, i * tube_segments + j2])
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


# -- surface sampling ---------------------------------------------------------


def sample_surface(mesh, n, rng, return_face_idx=False):
    """Area-weighted uniform sampling of the mesh surface."""
    areas = mesh.face_areas()
    probs = areas / areas.sum()
    fidx = rng.choice(len(probs), size=n, p=probs)
    tri = mesh.vertices[mesh.faces[fidx]]
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    if return_face_idx:
        return pts, fidx
    return pts


# -- file formats -------------------------------------------------------------


def save_obj(path, mesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %s %s %s\n" % tuple(FMT % x for x in v))
        for f in mesh.faces:
            fh.write("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))


def load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def save_ply(path, cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write("end_header\n")
        for p in pts:
            fh.write("%s %s %s\n" % tuple(FMT % x for x in p))


def load_ply(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    try:
        start = lines.index("end_header") + 1
    except ValueError:
        raise GeometryError(f"{path}: not an ascii PLY file")
    pts = [[float(x) for x in ln.split()[:3]] for ln in lines[start:] if ln.strip()]
    return PointCloud(np.array(pts))


def save_cloud_csv(path, cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    with open(path, "w") as fh:
        fh.write("x,y,z\n")
        for p in pts:
            fh.write("%s,%s,%s\n" % tuple(FMT % x for x in p))


def load_cloud_csv(path):
    data = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64)
    return PointCloud(np.atleast_2d(data))
