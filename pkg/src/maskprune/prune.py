"""Per-face soft IoU scoring, quantile thresholding and face pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from maskprune.camera import CameraPose, project
from maskprune.mesh_core import TriangleMesh, remove_faces
from maskprune.soft_raster import (
    DEFAULT_K,
    DEFAULT_PROB_CUTOFF,
    DEFAULT_SIGMA,
    FaceSoftMapSet,
    check_mask,
    face_soft_maps,
    rasterize_topk,
)

DEFAULT_TAU = 0.05
MODES = ("per-view", "union", "intersection")


@dataclass(frozen=True, eq=False)
class IoUScoreTable:
    """Soft intersection (``gamma``) and union (``Gamma``) mass per rendered face."""

    faces: np.ndarray
    gamma: np.ndarray
    Gamma: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.Gamma > 0, self.gamma / self.Gamma, 0.0)

    def __len__(self) -> int:
        return len(self.faces)


@dataclass(frozen=True, eq=False)
class PruneDecision:
    threshold: float
    tau: float
    pruned: frozenset
    kept: frozenset
    off_screen: frozenset
    table: IoUScoreTable | None = None


def face_iou_scores(maps: FaceSoftMapSet, gt) -> IoUScoreTable:
    """Soft IoU of every face map against ``gt`` over the full image.

    Pixels outside a face's sparse support read as 0, so they add nothing
    to the intersection and ``gt`` itself to the union.
    """
    gt = check_mask(gt)
    if gt.shape != tuple(maps.image_size):
        raise ValueError(f"mask shape {gt.shape} does not match render size {maps.image_size}")
    flat = gt.ravel()
    n = len(maps.faces)
    owner = np.repeat(np.arange(n), np.diff(maps.ptr))
    a = flat[maps.pixels]
    d = maps.values
    gamma = np.bincount(owner, weights=np.minimum(d, a), minlength=n)
    on_support = np.bincount(owner, weights=np.maximum(d, a) - a, minlength=n)
    Gamma = flat.sum() + on_support
    return IoUScoreTable(maps.faces, gamma, Gamma)


def quantile_threshold(scores: Sequence[float], tau: float) -> float:
    """Linear-interpolation quantile of ``scores`` at level ``tau``.

    The result is clamped to the bracketing order statistics so that it is
    exactly nondecreasing in ``tau`` despite rounding.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("cannot take a quantile of an empty score list")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    h = (s.size - 1) * tau
    lo = math.floor(h)
    hi = min(lo + 1, s.size - 1)
    t = s[lo] + (h - lo) * (s[hi] - s[lo])
    return float(min(max(t, s[lo]), s[hi]))


def decide(table: IoUScoreTable, tau: float, n_faces: int) -> PruneDecision:
    scores = table.scores
    if len(scores):
        t = quantile_threshold(scores, tau)
        pruned_mask = scores < t
    else:
        t = float("nan")
        pruned_mask = np.zeros(0, dtype=bool)
    faces = table.faces
    off = np.setdiff1d(np.arange(n_faces), faces)
    return PruneDecision(
        threshold=t,
        tau=tau,
        pruned=frozenset(faces[pruned_mask].tolist()),
        kept=frozenset(faces[~pruned_mask].tolist()),
        off_screen=frozenset(off.tolist()),
        table=table,
    )


def prune_faces(mesh: TriangleMesh, table: IoUScoreTable, tau: float = DEFAULT_TAU):
    """Prune rendered faces scoring strictly below the ``tau`` quantile.

    Faces absent from ``table`` (never rendered in this view) are kept.
    Returns ``(decision, refined_mesh)``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    decision = decide(table, tau, mesh.n_faces)
    return decision, remove_faces(mesh, sorted(decision.pruned))


@dataclass(frozen=True)
class RenderSettings:
    k: int = DEFAULT_K
    sigma: float = DEFAULT_SIGMA
    prob_cutoff: float = DEFAULT_PROB_CUTOFF
    cull_backfaces: bool = False
    workers: int | None = None


def render_face_maps(mesh: TriangleMesh, pose: CameraPose,
                     settings: RenderSettings = RenderSettings()) -> FaceSoftMapSet:
    tris = project(mesh, pose, cull_backfaces=settings.cull_backfaces)
    frag = rasterize_topk(tris, settings.k, settings.sigma, pose.image_size,
                          settings.prob_cutoff, settings.workers)
    return face_soft_maps(frag)


@dataclass(frozen=True, eq=False)
class MultiViewResult:
    """Outcome of :func:`refine_multi_view`.

    ``meshes`` holds one refined mesh per view. In ``per-view`` mode they
    differ and ``mesh`` is None; otherwise every view gets the combined
    refinement, which is also available as ``mesh``.
    """

    mode: str
    decisions: tuple[PruneDecision, ...]
    meshes: tuple[TriangleMesh, ...]
    pruned: frozenset | None
    mesh: TriangleMesh | None


def refine_multi_view(
    mesh: TriangleMesh,
    views: Sequence[tuple[CameraPose, np.ndarray]],
    tau: float = DEFAULT_TAU,
    mode: str = "per-view",
    settings: RenderSettings = RenderSettings(),
) -> MultiViewResult:
    """Prune ``mesh`` against several (pose, mask) pairs.

    ``per-view`` prunes each view independently. ``union`` removes faces
    flagged in any view; ``intersection`` removes faces flagged in every
    view where they were rendered.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not views:
        raise ValueError("need at least one view")
    decisions = []
    for pose, gt in views:
        maps = render_face_maps(mesh, pose, settings)
        decisions.append(decide(face_iou_scores(maps, gt), tau, mesh.n_faces))
    decisions = tuple(decisions)

    if mode == "per-view":
        meshes = tuple(remove_faces(mesh, sorted(d.pruned)) for d in decisions)
        return MultiViewResult(mode, decisions, meshes, None, None)
    pruned = combine_decisions(decisions, mode)
    refined = remove_faces(mesh, sorted(pruned))
    return MultiViewResult(mode, decisions, (refined,) * len(decisions), pruned, refined)


def combine_decisions(decisions: Sequence[PruneDecision], mode: str) -> frozenset:
    """Faces to remove under ``union`` or ``intersection`` of per-view decisions."""
    if mode == "union":
        return frozenset().union(*(d.pruned for d in decisions))
    if mode != "intersection":
        raise ValueError(f"cannot combine decisions in mode {mode!r}")
    flagged: dict[int, int] = {}
    seen: dict[int, int] = {}
    for d in decisions:
        for f in d.pruned | d.kept:
            seen[f] = seen.get(f, 0) + 1
        for f in d.pruned:
            flagged[f] = flagged.get(f, 0) + 1
    return frozenset(f for f, c in flagged.items() if c == seen[f])
