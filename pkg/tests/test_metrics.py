import numpy as np
import pytest

from maskprune.mesh_core import PointCloud, TriangleMesh
from maskprune.metrics import (
    SurfaceDistance,
    chamfer_distance,
    closest_points_on_triangles,
    evaluate_3d,
    f_score,
    iou_2d,
    metro,
    nearest_neighbors,
)
from maskprune.scenes import make_icosphere, make_torus

from oracles import brute_force_nn, point_triangle_distance

PLANE = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


class TestIoU2D:
    def test_identical(self):
        m = np.array([[1, 0], [1, 1]], float)
        assert iou_2d(m, m) == 1.0

    def test_disjoint(self):
        assert iou_2d(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == 0.0

    def test_half(self):
        assert iou_2d(np.array([[1.0], [1.0]]), np.array([[1.0], [0.0]])) == 0.5

    def test_soft_inputs_binarized(self):
        assert iou_2d(np.array([[0.6, 0.4]]), np.array([[0.5, 0.0]])) == 1.0

    def test_empty_union(self):
        assert iou_2d(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


class TestChamfer:
    def test_identical(self):
        p = np.random.default_rng(0).random((50, 3))
        assert chamfer_distance(p, p) == 0.0

    def test_hand(self):
        assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == 2.0

    def test_accepts_point_cloud(self):
        a = PointCloud([[0, 0, 0], [0, 0, 2]])
        assert chamfer_distance(a, [[0, 0, 1]]) == pytest.approx(1.0 + 1.0)


class TestFScore:
    def test_identical(self):
        p = np.random.default_rng(1).random((40, 3))
        assert f_score(p, p) == 100.0

    def test_far(self):
        assert f_score(np.zeros((3, 3)), np.ones((4, 3))) == 0.0

    def test_half_overlap(self):
        b = np.random.default_rng(2).random((20, 3))
        a = np.concatenate([b, b + 10.0])
        assert f_score(a, b) == pytest.approx(100 * 2 * 0.5 / 1.5)

    def test_threshold_is_squared(self):
        # distance 0.03 -> squared 0.0009 < 0.001 is a hit; 0.035 is not
        assert f_score([[0, 0, 0]], [[0.03, 0, 0]]) == 100.0
        assert f_score([[0, 0, 0]], [[0.035, 0, 0]]) == 0.0


class TestNearestNeighbors:
    def test_against_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            q = rng.normal(size=(rng.integers(1, 200), 3))
            r = rng.normal(size=(rng.integers(1, 200), 3))
            idx, d = nearest_neighbors(q, r)
            bi, bd = brute_force_nn(q, r)
            assert np.array_equal(d, bd)
            # ties may pick a different index at the same distance
            assert np.array_equal(bd[idx != bi], d[idx != bi])

    def test_empty(self):
        with pytest.raises(ValueError):
            nearest_neighbors(np.zeros((0, 3)), np.zeros((2, 3)))


class TestPointTriangle:
    def test_against_oracle(self):
        rng = np.random.default_rng(4)
        n = 2000
        a, b, c = rng.normal(size=(3, n, 3))
        p = rng.normal(size=(n, 3)) * 2
        q = closest_points_on_triangles(p, a, b, c)
        got = np.linalg.norm(p - q, axis=1)
        want = np.array([point_triangle_distance(p[i], a[i], b[i], c[i]) for i in range(n)])
        assert np.allclose(got, want, atol=1e-10)

    def test_degenerate_triangle(self):
        a = np.array([[0.0, 0, 0]])
        q = closest_points_on_triangles(np.array([[2.0, 1, 0]]), a, a, a)
        assert np.allclose(q, a)

    def test_surface_distance_against_exhaustive(self):
        mesh = make_torus(0.35, 0.12, 12, 8)
        p = np.random.default_rng(5).uniform(-0.7, 0.7, size=(300, 3))
        got = SurfaceDistance(mesh).query(p)
        tri = mesh.triangles()
        want = [min(point_triangle_distance(x, *t) for t in tri) for x in p]
        assert np.allclose(got, want, atol=1e-10)


class TestMetro:
    def test_self(self):
        m = make_icosphere(2, 0.5)
        assert metro(m, m, 2000) <= 1e-9

    def test_offset_plane(self):
        h = 0.05
        assert metro(PLANE, PLANE.transformed(offset=(0, 0, h)), 10_000) == pytest.approx(h, rel=0.01)

    def test_symmetric(self):
        a, b = make_icosphere(2, 0.4), make_torus()
        assert metro(a, b, 3000, seed=9) == metro(b, a, 3000, seed=9)


class TestEvaluate3D:
    def test_self(self):
        m = make_torus()
        r = evaluate_3d(m, m, 3000)
        assert r["chamfer"] == 0.0 and r["fscore"] == 100.0 and r["metro"] <= 1e-9

    def test_distinct_shapes(self):
        r = evaluate_3d(make_torus(), make_icosphere(3, 0.4), 3000)
        assert r["chamfer"] > 0 and r["metro"] > 0
        assert r["chamfer"] == pytest.approx(r["chamfer_raw"] * 1e3)


class TestInvariants:
    def test_chamfer_scales_quadratically(self):
        rng = np.random.default_rng(7)
        a, b = rng.random((80, 3)), rng.random((60, 3))
        assert chamfer_distance(3 * a, 3 * b) == pytest.approx(9 * chamfer_distance(a, b), rel=1e-12)

    def test_fscore_monotone_in_threshold(self):
        rng = np.random.default_rng(8)
        a, b = rng.random((100, 3)), rng.random((100, 3))
        vals = [f_score(a, b, t) for t in np.geomspace(1e-5, 1.0, 30)]
        assert all(np.diff(vals) >= 0)

    def test_metro_below_max_directed(self):
        from maskprune.mesh_core import sample_surface
        from maskprune.metrics import directed_surface_distance

        a, b = make_icosphere(2, 0.4), make_torus()
        pa, pb = sample_surface(a, 2000, 0), sample_surface(b, 2000, 0)
        worst = max(directed_surface_distance(pa, b).max(), directed_surface_distance(pb, a).max())
        assert metro(a, b, 2000) <= worst
