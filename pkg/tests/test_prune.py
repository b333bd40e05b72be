import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskprune.camera import CameraPose
from maskprune.mesh_core import TriangleMesh
from maskprune.metrics import iou_2d
from maskprune.prune import (
    IoUScoreTable,
    RenderSettings,
    combine_decisions,
    decide,
    face_iou_scores,
    prune_faces,
    quantile_threshold,
    refine_multi_view,
    render_face_maps,
)
from maskprune.scenes import render_gt_mask, sphere_vs_torus
from maskprune.soft_raster import FragmentBuffer, aggregate_mask, face_soft_maps


def _maps(dense_by_face, size):
    """FaceSoftMapSet from ``{face: dense map}``; zeros are left out."""
    pix, face, prob = [], [], []
    for f, m in sorted(dense_by_face.items()):
        idx = np.flatnonzero(np.asarray(m).ravel())
        pix += idx.tolist()
        face += [f] * len(idx)
        prob += np.asarray(m, float).ravel()[idx].tolist()
    n = len(pix)
    frag = FragmentBuffer(8, size, np.array(pix, np.int64), np.zeros(n, np.int64),
                          np.array(face, np.int64), np.ones(n), np.array(prob))
    return face_soft_maps(frag)


class TestScores:
    def test_hand_example(self):
        maps = _maps({0: [[0.2, 0.8]]}, (1, 2))
        t = face_iou_scores(maps, np.array([[1.0, 0.0]]))
        assert t.gamma[0] == pytest.approx(0.2)
        assert t.Gamma[0] == pytest.approx(1.8)
        assert t.scores[0] == pytest.approx(1 / 9)

    def test_identical_is_one(self):
        d = np.array([[0.3, 0.7, 0.9]])
        t = face_iou_scores(_maps({4: d}, (1, 3)), d)
        assert t.scores[0] == pytest.approx(1.0)

    def test_disjoint_is_zero(self):
        t = face_iou_scores(_maps({0: [[1.0, 0.0]]}, (1, 2)), np.array([[0.0, 1.0]]))
        assert t.scores[0] == 0.0

    def test_matches_dense_formula(self):
        rng = np.random.default_rng(5)
        dense = {f: rng.random((6, 7)) * (rng.random((6, 7)) < 0.4) for f in range(5)}
        alpha = rng.random((6, 7))
        t = face_iou_scores(_maps(dense, (6, 7)), alpha)
        for i, f in enumerate(t.faces):
            d = dense[f]
            assert t.gamma[i] == pytest.approx(np.minimum(d, alpha).sum())
            assert t.Gamma[i] == pytest.approx(np.maximum(d, alpha).sum())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            face_iou_scores(_maps({0: [[1.0, 0.0]]}, (1, 2)), np.zeros((2, 2)))


class TestQuantile:
    def test_hand_value(self):
        assert quantile_threshold([0.4, 0.1, 0.3, 0.2], 0.5) == pytest.approx(0.25)

    def test_extremes(self):
        s = [0.3, 0.9, 0.1]
        assert quantile_threshold(s, 0.0) == 0.1
        assert quantile_threshold(s, 1.0) == 0.9

    def test_matches_numpy_linear(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            s = rng.random(rng.integers(1, 40))
            tau = rng.random()
            assert quantile_threshold(s, tau) == pytest.approx(np.quantile(s, tau), abs=1e-15)

    def test_invalid(self):
        with pytest.raises(ValueError):
            quantile_threshold([], 0.5)
        with pytest.raises(ValueError):
            quantile_threshold([1.0], 1.5)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60),
           st.floats(0, 1), st.floats(0, 1))
    def test_monotone_and_bracketed(self, scores, t1, t2):
        lo, hi = sorted((t1, t2))
        a = quantile_threshold(scores, lo)
        b = quantile_threshold(scores, hi)
        assert a <= b
        assert min(scores) <= a <= max(scores)


def _table(scores):
    scores = np.asarray(scores, float)
    return IoUScoreTable(np.arange(len(scores)), scores, np.ones(len(scores)))


class TestDecide:
    def test_tau_zero_prunes_nothing(self):
        d = decide(_table([0.5, 0.1, 0.9]), 0.0, 3)
        assert d.pruned == frozenset()

    def test_constant_scores_never_prune(self):
        for tau in np.linspace(0, 1, 11):
            assert decide(_table([0.3] * 8), tau, 8).pruned == frozenset()

    def test_strict_threshold(self):
        d = decide(_table([0.1, 0.2, 0.3, 0.4]), 0.5, 4)
        assert d.threshold == pytest.approx(0.25)
        assert d.pruned == {0, 1} and d.kept == {2, 3}

    def test_off_screen_faces_exempt(self):
        table = IoUScoreTable(np.array([1, 3]), np.array([0.0, 1.0]), np.ones(2))
        d, refined = prune_faces(TriangleMesh(np.zeros((3, 3)), [[0, 1, 2]] * 5), table, 1.0)
        assert d.off_screen == {0, 2, 4}
        assert d.pruned == {1}
        assert refined.n_faces == 4

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_nested_prune_sets(self, scores):
        prev = frozenset()
        for tau in np.linspace(0, 1, 21):
            cur = decide(_table(scores), float(tau), len(scores)).pruned
            assert prev <= cur
            prev = cur


class TestSphereTorus:
    def test_refinement_improves_silhouette(self):
        sphere, torus, pose = sphere_vs_torus()
        gt = render_gt_mask(torus, pose)
        maps = render_face_maps(sphere, pose)
        d, refined = prune_faces(sphere, face_iou_scores(maps, gt), 0.05)
        assert refined.n_faces < sphere.n_faces
        assert iou_2d(aggregate_mask(maps, d.pruned), gt) > iou_2d(aggregate_mask(maps), gt)


class TestMultiView:
    def test_modes(self):
        sphere, torus, _ = sphere_vs_torus()
        poses = [CameraPose(0.0, 0.0, image_size=(96, 96)), CameraPose(180.0, 0.0, image_size=(96, 96))]
        views = [(p, render_gt_mask(torus, p)) for p in poses]
        cfg = RenderSettings()
        per = refine_multi_view(sphere, views, 0.05, "per-view", cfg)
        uni = refine_multi_view(sphere, views, 0.05, "union", cfg)
        inter = refine_multi_view(sphere, views, 0.05, "intersection", cfg)
        p0, p1 = (d.pruned for d in per.decisions)
        assert uni.pruned == p0 | p1
        seen0, seen1 = (d.pruned | d.kept for d in per.decisions)
        both = seen0 & seen1
        assert inter.pruned & both == p0 & p1
        assert inter.pruned - both == (p0 - seen1) | (p1 - seen0)
        assert per.mesh is None and len(per.meshes) == 2
        assert uni.mesh.n_faces == sphere.n_faces - len(uni.pruned)

    def test_intersection_ignores_unseen_views(self):
        from maskprune.prune import PruneDecision

        a = PruneDecision(0.1, 0.5, frozenset({1, 2}), frozenset({3}), frozenset())
        b = PruneDecision(0.1, 0.5, frozenset({2}), frozenset({1}), frozenset())
        c = PruneDecision(0.1, 0.5, frozenset(), frozenset(), frozenset({1, 2, 3, 4}))
        assert combine_decisions([a, b, c], "intersection") == {2}
        assert combine_decisions([a, b, c], "union") == {1, 2}

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            refine_multi_view(TriangleMesh(np.zeros((3, 3)), [[0, 1, 2]]), [], 0.05, "both")
