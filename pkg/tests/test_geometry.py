"""Geometry kernels against brute-force and analytic oracles."""
import numpy as np
import pytest

from graspkit.geometry import (GeometryError, box, chamfer, closest_point_on_mesh,
                               contact_mask, cylinder, fps_sample, hand_forward,
                               hand_forward_np, hand_mesh, hand_template,
                               inside_mesh, merge_meshes, penetration_volume,
                               point_mesh_distances, sample_surface, uv_sphere)
from graspkit.geometry.hand import NUM_KEYPOINTS, NUM_PARAMS, NUM_VERTS


class TestChamfer:
    def test_identical_zero(self, rng):
        a = rng.standard_normal((30, 3))
        assert chamfer(a, a) == 0.0

    def test_hand_case(self):
        a = np.array([[0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0]])
        assert abs(chamfer(a, b) - 2.0) <= 1e-15

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((50, 3))
        b = rng.standard_normal((60, 3))
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        oracle = d2.min(axis=1).mean() + d2.min(axis=0).mean()
        assert abs(chamfer(a, b) - oracle) <= 1e-12

    def test_symmetry_nonnegative(self, rng):
        a = rng.standard_normal((20, 3))
        b = rng.standard_normal((25, 3))
        assert chamfer(a, b) == chamfer(b, a) >= 0

    def test_empty_rejected(self):
        with pytest.raises(GeometryError):
            chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


class TestFPS:
    def test_n_equals_full_set(self, rng):
        pts = rng.standard_normal((12, 3))
        out, idx = fps_sample(pts, 12, seed=0)
        assert sorted(map(tuple, out)) == sorted(map(tuple, pts))
        assert sorted(idx) == list(range(12))

    def test_square_corners(self):
        sq = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
        for seed in range(8):
            out, _ = fps_sample(sq, 2, seed=seed)
            gap = np.linalg.norm(out[0] - out[1])
            assert abs(gap - np.sqrt(2)) <= 1e-12

    def test_collinear_greedy(self):
        line = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [10, 0, 0]], float)
        for seed in range(20):
            out, _ = fps_sample(line, 3, seed=seed)
            if out[0][0] == 0.0:
                xs = sorted(p[0] for p in out)
                assert xs == [0.0, 2.0, 10.0] or xs == [0.0, 1.0, 10.0]
                assert 10.0 in xs

    def test_n_too_large(self, rng):
        with pytest.raises(GeometryError):
            fps_sample(rng.standard_normal((4, 3)), 5)

    def test_greedy_rule_exhaustive(self, rng):
        # each added point maximizes min distance to the chosen prefix
        pts = rng.standard_normal((8, 3))
        out, _ = fps_sample(pts, 5, seed=3)
        chosen = [out[0]]
        for nxt in out[1:]:
            dmin = lambda q: min(np.linalg.norm(q - c) for c in chosen)
            best = max(dmin(p) for p in pts)
            assert dmin(nxt) >= best - 1e-12
            chosen.append(nxt)


class TestPointMeshDistance:
    def test_point_on_vertex(self):
        m = box((0.1, 0.1, 0.1))
        d = point_mesh_distances(m.vertices[:1], m)
        assert d[0] <= 1e-12

    def test_height_above_triangle(self):
        # one large triangle in the xy plane
        from graspkit.geometry import TriangleMesh
        verts = np.array([[-5, -5, 0], [5, -5, 0], [0, 5, 0]], float)
        m = TriangleMesh(verts, np.array([[0, 1, 2]]))
        d = point_mesh_distances(np.array([[0.0, 0.0, 0.7]]), m)
        assert abs(d[0] - 0.7) <= 1e-12

    def test_against_dense_surface_samples(self, rng):
        m = uv_sphere(radius=0.06, rings=24, segments=32)
        pts = rng.uniform(-0.1, 0.1, (40, 3))
        dense = sample_surface(m, 60000, np.random.default_rng(1))
        d = point_mesh_distances(pts, m)
        oracle = np.sqrt(((pts[:, None] - dense[None]) ** 2).sum(-1)).min(1)
        assert np.all(np.abs(d - oracle) <= 1e-3)


class TestInsideMesh:
    def test_cube_center_inside(self):
        m = box((1.0, 1.0, 1.0))
        assert inside_mesh(np.array([[0.0, 0.0, 0.0]]), m)[0]

    def test_far_point_outside(self):
        m = box((1.0, 1.0, 1.0))
        assert not inside_mesh(np.array([[2.0, 0.0, 0.0]]), m)[0]

    def test_sphere_oracle_agreement(self, rng):
        r = 0.05
        m = uv_sphere(radius=r, rings=24, segments=32)
        pts = rng.uniform(-1.5 * r, 1.5 * r, (1000, 3))
        got = inside_mesh(pts, m)
        true = np.linalg.norm(pts, axis=1) < r
        # disagreement allowed only within one facet of the surface
        facet = 2 * np.pi * r / 32
        dist = np.abs(np.linalg.norm(pts, axis=1) - r)
        bad = (got != true) & (dist > facet)
        assert bad.mean() <= 0.001


class TestPenetrationVolume:
    def test_disjoint_zero(self):
        a = box((0.05, 0.05, 0.05), center=(0, 0, 0))
        b = box((0.05, 0.05, 0.05), center=(0.2, 0, 0))
        assert penetration_volume(a, b, 0.002) == 0.0

    def test_box_slab_analytic(self):
        a = box((0.1, 0.1, 0.1), center=(0, 0, 0))
        b = box((0.1, 0.1, 0.1), center=(0.08, 0, 0))
        got = penetration_volume(a, b, 0.001)
        assert abs(got - 200.0) <= 0.05 * 200.0

    def test_resolution_convergence(self):
        a = box((0.1, 0.1, 0.1), center=(0, 0, 0))
        b = box((0.1, 0.1, 0.1), center=(0.08, 0, 0))
        v1 = penetration_volume(a, b, 0.001)
        v2 = penetration_volume(a, b, 0.002)
        assert abs(v1 - v2) <= 0.05 * max(v1, v2)

    def test_monotone_under_deeper_overlap(self):
        a = box((0.1, 0.1, 0.1), center=(0, 0, 0))
        vols = [penetration_volume(a, box((0.1, 0.1, 0.1), center=(dx, 0, 0)),
                                   0.002)
                for dx in (0.09, 0.07, 0.05, 0.03)]
        assert all(v2 >= v1 - 1e-9 for v1, v2 in zip(vols, vols[1:]))


class TestContactMask:
    def test_huge_tau_all_true(self):
        m = box((0.1, 0.1, 0.1))
        pts = np.random.default_rng(0).uniform(-1, 1, (20, 3))
        assert contact_mask(m, pts, 10.0).all()

    def test_tiny_tau_all_false(self):
        m = box((0.1, 0.1, 0.1))
        pts = np.full((5, 3), 0.5)
        assert not contact_mask(m, pts, 1e-9).any()

    def test_equals_threshold_recompute(self, rng):
        m = uv_sphere(radius=0.05)
        pts = rng.uniform(-0.08, 0.08, (50, 3))
        mask = contact_mask(m, pts, 0.005)
        d = point_mesh_distances(pts, m)
        assert np.array_equal(mask, d < 0.005)


class TestHandModel:
    def test_template_counts(self):
        t = hand_template()
        assert t["verts"].shape == (NUM_VERTS, 3)
        assert NUM_PARAMS == 61 and NUM_KEYPOINTS == 21

    def test_zero_pose_is_template(self):
        verts, kps = hand_forward_np(np.zeros(NUM_PARAMS))
        assert np.allclose(verts, hand_template()["verts"], atol=1e-12)

    def test_pure_translation(self):
        p = np.zeros(NUM_PARAMS)
        p[:3] = [0.1, 0.0, 0.0]
        verts, _ = hand_forward_np(p)
        assert np.allclose(verts - hand_template()["verts"],
                           [0.1, 0.0, 0.0], atol=1e-12)

    def test_global_rotation_equivariance(self, rng):
        from scipy.spatial.transform import Rotation
        axis_angle = rng.standard_normal(3) * 0.5
        p = np.zeros(NUM_PARAMS)
        verts0, _ = hand_forward_np(p)
        p[3:6] = axis_angle
        verts1, _ = hand_forward_np(p)
        R = Rotation.from_rotvec(axis_angle).as_matrix()
        assert np.max(np.abs(verts0 @ R.T - verts1)) <= 1e-9

    def test_differentiable_forward_matches_np(self, rng):
        from graspkit.engine import Tensor
        p = rng.standard_normal(NUM_PARAMS) * 0.1
        verts_np, kps_np = hand_forward_np(p)
        out = hand_forward(Tensor(p))
        verts_t, kps_t = out[0], out[1]
        assert np.allclose(verts_t.data, verts_np, atol=1e-10)
        assert np.allclose(kps_t.data, kps_np, atol=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_vertex_gradients_match_fd(self, seed):
        from graspkit.engine import Tensor
        rng = np.random.default_rng(seed)
        p = Tensor(rng.standard_normal(NUM_PARAMS) * 0.1, requires_grad=True)
        w = rng.standard_normal((NUM_VERTS, 3))

        def loss():
            verts = hand_forward(p)[0]
            return (verts * Tensor(w)).sum()

        loss().backward()
        g = p.grad.copy()
        h = 1e-6
        idxs = rng.choice(NUM_PARAMS, 12, replace=False)
        for i in idxs:
            p.data[i] += h
            hi = loss().item()
            p.data[i] -= 2 * h
            lo = loss().item()
            p.data[i] += h
            num = (hi - lo) / (2 * h)
            assert abs(g[i] - num) / max(1e-8, abs(num)) <= 1e-4

    def test_hand_mesh_watertight(self):
        m = hand_mesh(np.zeros(NUM_PARAMS)).mesh
        edges = {}
        for f in m.faces:
            for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = tuple(sorted(e))
                edges[key] = edges.get(key, 0) + 1
        assert all(c == 2 for c in edges.values())


class TestPrimitives:
    @pytest.mark.parametrize("mesh", [uv_sphere(0.05), box((0.1, 0.08, 0.06)),
                                      cylinder(0.03, 0.1)])
    def test_watertight_and_nondegenerate(self, mesh):
        edges = {}
        for f in mesh.faces:
            for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                edges[tuple(sorted(e))] = edges.get(tuple(sorted(e)), 0) + 1
        assert all(c == 2 for c in edges.values())
        v = mesh.vertices
        areas = 0.5 * np.linalg.norm(
            np.cross(v[mesh.faces[:, 1]] - v[mesh.faces[:, 0]],
                     v[mesh.faces[:, 2]] - v[mesh.faces[:, 0]]), axis=1)
        assert np.all(areas > 1e-12)

    def test_sphere_volume(self):
        m = uv_sphere(radius=0.05, rings=32, segments=48)
        from graspkit.geometry import voxelize_inside
        occ, origin, res = None, None, 0.002
        vol = penetration_volume(m, m, res)
        true = 4.0 / 3.0 * np.pi * 5 ** 3
        assert abs(vol - true) <= 0.08 * true


class TestIO:
    def test_obj_roundtrip(self, tmp_path, rng):
        from graspkit.geometry import load_obj, save_obj
        m = uv_sphere(0.04, rings=6, segments=8)
        path = str(tmp_path / "m.obj")
        save_obj(path, m)
        m2 = load_obj(path)
        assert np.array_equal(m.vertices, m2.vertices)
        assert np.array_equal(m.faces, m2.faces)

    def test_ply_roundtrip(self, tmp_path, rng):
        from graspkit.geometry import load_ply, save_ply
        pts = rng.standard_normal((17, 3))
        path = str(tmp_path / "c.ply")
        save_ply(path, pts)
        assert np.array_equal(load_ply(path).points, pts)

    def test_cloud_csv_roundtrip(self, tmp_path, rng):
        from graspkit.geometry import load_cloud_csv, save_cloud_csv
        pts = rng.standard_normal((9, 3))
        path = str(tmp_path / "c.csv")
        save_cloud_csv(path, pts)
        assert np.array_equal(load_cloud_csv(path).points, pts)
