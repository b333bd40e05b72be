import numpy as np
import pytest
from PIL import Image
import shapely
from shapely.geometry import Polygon

from maskprune.camera import CameraPose, ScreenTriangles, project
from maskprune.scenes import make_icosphere, make_torus
from maskprune.soft_raster import (
    DEFAULT_PROB_CUTOFF,
    FragmentBuffer,
    MaskFormatError,
    aggregate_mask,
    binarize,
    face_soft_maps,
    influence_radius,
    load_mask,
    rasterize_topk,
    save_mask,
    signed_sq_distance,
    soft_probability,
)

from oracles import face_probability_maps

SIGMA = 5e-7


def _screen(ndc, depth=None):
    ndc = np.asarray(ndc, dtype=np.float64).reshape(-1, 3, 2)
    if depth is None:
        depth = np.ones(ndc.shape[:2])
    return ScreenTriangles(ndc, np.asarray(depth, dtype=np.float64), np.zeros(len(ndc), bool))


def _square(z, half=0.5):
    # two triangles covering [-half, half]^2 at constant depth z
    a, b, c, d = (-half, -half), (half, -half), (half, half), (-half, half)
    return [[a, b, c], [a, c, d]], [[z] * 3, [z] * 3]


class TestProbability:
    def test_edge_is_half(self):
        assert abs(soft_probability(0.0, SIGMA) - 0.5) <= 1e-12

    def test_deep_inside(self):
        assert soft_probability(0.01 ** 2, SIGMA) > 1 - 1e-6

    def test_strictly_inside_unit_interval(self):
        # far outside underflows to 0 but is never stored; deep inside is clamped below 1
        p = soft_probability(np.array([-1e-5, 0.0, 1e-5, 1.0]), SIGMA)
        assert np.all((p > 0) & (p < 1))

    def test_influence_radius(self):
        r = influence_radius(SIGMA)
        assert soft_probability(-r * r, SIGMA) == pytest.approx(DEFAULT_PROB_CUTOFF, rel=1e-9)


class TestSignedDistance:
    def test_against_shapely(self):
        rng = np.random.default_rng(0)
        tris = rng.uniform(-1, 1, size=(300, 3, 2))
        px, py = rng.uniform(-1.2, 1.2, size=(2, 300))
        signed, bary = signed_sq_distance(px, py, tris)
        for i in range(len(tris)):
            poly = Polygon(tris[i])
            d = shapely.distance(poly.exterior, shapely.points(px[i], py[i]))
            inside = shapely.contains_xy(poly, px[i], py[i])
            assert abs(abs(signed[i]) - d * d) < 1e-12
            if d > 1e-9:
                assert (signed[i] > 0) == inside
        assert np.allclose(bary.sum(axis=1), 1.0)
        assert np.all(bary >= 0)

    def test_degenerate_has_no_inside(self):
        tri = np.array([[[0, 0], [1, 0], [2, 0]]], dtype=float)
        s, _ = signed_sq_distance(np.array([0.5]), np.array([0.0]), tri)
        assert s[0] <= 0


class TestRasterize:
    def test_topk_keeps_nearest(self):
        ndc, depth = [], []
        for z in (4.0, 2.0, 3.0, 1.0):
            n, d = _square(z)
            ndc += n
            depth += d
        frag = rasterize_topk(_screen(ndc, depth), k=2, image_size=(8, 8))
        center = 4 * 8 + 4
        sel = frag.pixel == center
        assert frag.depth[sel].tolist() == [1.0, 2.0]
        assert frag.slot[sel].tolist() == [0, 1]

    def test_depth_tie_goes_to_lower_face(self):
        n, d = _square(1.0)
        frag = rasterize_topk(_screen(n + n, d + d), k=1, image_size=(4, 4))
        # faces 0/2 and 1/3 coincide; the lower index wins every pixel
        assert set(frag.face.tolist()) <= {0, 1}

    def test_sorted_and_bounded(self):
        pose = CameraPose(20.0, 30.0, image_size=(64, 64))
        frag = rasterize_topk(project(make_torus(), pose), k=5, image_size=(64, 64))
        key = frag.pixel * 10 + frag.slot
        assert np.all(np.diff(key) > 0)
        same = frag.pixel[1:] == frag.pixel[:-1]
        assert np.all(frag.depth[1:][same] >= frag.depth[:-1][same])
        assert np.all((frag.prob > 0) & (frag.prob < 1))
        assert frag.slot.max() < 5

    def test_dense_views(self):
        n, d = _square(2.0)
        frag = rasterize_topk(_screen(n, d), k=3, image_size=(4, 4))
        assert frag.pix_to_face.shape == (3, 4, 4)
        assert frag.pix_to_face[2, 0, 0] == -1 and frag.zbuf[2, 0, 0] == -1
        assert frag.probs[0, 1, 1] > 0.99

    def test_workers_do_not_change_result(self, monkeypatch):
        import maskprune.soft_raster as sr

        monkeypatch.setattr(sr, "_CHUNK_PAIRS", 5000)
        tris = project(make_icosphere(2, 0.5), CameraPose(image_size=(48, 48)))
        a = sr.rasterize_topk(tris, image_size=(48, 48), workers=1)
        b = sr.rasterize_topk(tris, image_size=(48, 48), workers=4)
        for name in ("pixel", "slot", "face", "depth", "prob"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_culled_faces_skipped(self):
        n, d = _square(1.0)
        tris = ScreenTriangles(np.asarray(n, float), np.asarray(d, float), np.array([True, False]))
        frag = rasterize_topk(tris, image_size=(8, 8))
        assert set(frag.face.tolist()) == {1}


class TestFaceSoftMaps:
    def test_regroup(self):
        frag = FragmentBuffer(3, (2, 3), np.array([0, 1, 1, 2, 3, 5]), np.array([0, 0, 1, 0, 2, 0]),
                              np.array([7, 2, 7, 7, 7, 7]), np.ones(6), np.full(6, 0.5))
        maps = face_soft_maps(frag)
        assert maps.faces.tolist() == [2, 7]
        assert np.diff(maps.ptr).tolist() == [1, 5]
        assert maps.dense_map(7).ravel().tolist() == [0.5, 0.5, 0.5, 0.5, 0, 0.5]

    def test_empty(self):
        e = np.zeros(0, dtype=np.int64)
        maps = face_soft_maps(FragmentBuffer(3, (2, 2), e, e, e, np.zeros(0), np.zeros(0)))
        assert len(maps) == 0
        assert np.array_equal(aggregate_mask(maps), np.zeros((2, 2)))

    def test_face_count_matches_brute_force(self):
        pose = CameraPose(10.0, 25.0, image_size=(96, 96))
        mesh = make_icosphere(0, 0.5)
        maps = face_soft_maps(rasterize_topk(project(mesh, pose), image_size=(96, 96)))
        oracle = face_probability_maps(mesh, pose, SIGMA)
        touched = {f for f, m in oracle.items() if np.any(m >= DEFAULT_PROB_CUTOFF)}
        assert set(maps.faces.tolist()) == touched


class TestAggregate:
    def _maps(self, entries, size=(1, 2)):
        # entries: (pixel, face, prob)
        pix, face, prob = (np.array(x) for x in zip(*entries))
        frag = FragmentBuffer(4, size, pix, np.zeros(len(pix), np.int64), face, np.ones(len(pix)), prob)
        return face_soft_maps(frag)

    def test_single_face_identity(self):
        maps = self._maps([(0, 3, 0.3), (1, 3, 0.9)])
        assert aggregate_mask(maps).ravel().tolist() == pytest.approx([0.3, 0.9], abs=1e-15)

    def test_two_halves(self):
        maps = self._maps([(0, 0, 0.5), (0, 1, 0.5)])
        assert aggregate_mask(maps)[0, 0] == pytest.approx(0.75, abs=1e-15)

    def test_exclude_all(self):
        maps = self._maps([(0, 0, 0.5), (1, 1, 0.2)])
        assert np.array_equal(aggregate_mask(maps, [0, 1]), np.zeros((1, 2)))

    def test_exclusion_matches_product(self):
        maps = self._maps([(0, 0, 0.5), (0, 1, 0.4), (0, 2, 0.2)])
        assert aggregate_mask(maps, [1])[0, 0] == pytest.approx(1 - 0.5 * 0.8)


class TestMaskIO:
    def test_all_white(self, tmp_path):
        Image.fromarray(np.full((4, 5), 255, np.uint8)).save(tmp_path / "m.png")
        m = load_mask(tmp_path / "m.png")
        assert m.shape == (4, 5) and np.all(m == 1.0)

    def test_linear_map(self, tmp_path):
        Image.fromarray(np.full((2, 2), 128, np.uint8)).save(tmp_path / "m.png")
        assert load_mask(tmp_path / "m.png")[0, 0] == 128 / 255

    def test_rgb_needs_luma(self, tmp_path):
        Image.fromarray(np.full((2, 2, 3), 255, np.uint8)).save(tmp_path / "c.png")
        with pytest.raises(MaskFormatError):
            load_mask(tmp_path / "c.png")
        assert np.allclose(load_mask(tmp_path / "c.png", luma=True), 1.0)

    @pytest.mark.parametrize("bits", [8, 16])
    def test_round_trip(self, tmp_path, bits):
        m = np.array([[0.0, 0.25], [0.5, 1.0]])
        save_mask(m, tmp_path / "m.png", bits=bits)
        back = load_mask(tmp_path / "m.png")
        scale = 255 if bits == 8 else 65535
        assert np.max(np.abs(back - m)) <= 0.5 / scale + 1e-12


class TestBinarize:
    def test_half(self):
        assert binarize(np.array([0.4, 0.6])).tolist() == [0, 1]

    def test_zero_threshold(self):
        assert np.all(binarize(np.array([0.0, 0.3, 1.0]), 0.0) == 1)
