"""One-view refinement: render, score, prune and re-aggregate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maskprune.camera import CameraPose
from maskprune.mesh_core import TriangleMesh
from maskprune.metrics import iou_2d
from maskprune.prune import (
    DEFAULT_TAU,
    IoUScoreTable,
    PruneDecision,
    RenderSettings,
    face_iou_scores,
    prune_faces,
    render_face_maps,
)
from maskprune.soft_raster import FaceSoftMapSet, aggregate_mask


@dataclass(frozen=True, eq=False)
class ViewRefinement:
    pose: CameraPose
    maps: FaceSoftMapSet
    table: IoUScoreTable
    decision: PruneDecision
    refined: TriangleMesh
    alpha_hat: np.ndarray
    alpha_hat_refined: np.ndarray
    iou_before: float
    iou_after: float

    def summary(self, n_faces: int) -> dict:
        return {
            "azimuth": self.pose.azimuth,
            "elevation": self.pose.elevation,
            "n_faces": n_faces,
            "n_rendered": len(self.maps),
            "n_pruned": len(self.decision.pruned),
            "threshold": self.decision.threshold,
            "tau": self.decision.tau,
            "iou_before": self.iou_before,
            "iou_after": self.iou_after,
        }


def refine_view(mesh: TriangleMesh, pose: CameraPose, gt: np.ndarray, tau: float = DEFAULT_TAU,
                settings: RenderSettings = RenderSettings(), maps: FaceSoftMapSet | None = None
                ) -> ViewRefinement:
    """Prune ``mesh`` against one ground-truth mask; ``maps`` may be reused across taus."""
    if maps is None:
        maps = render_face_maps(mesh, pose, settings)
    table = face_iou_scores(maps, gt)
    decision, refined = prune_faces(mesh, table, tau)
    alpha = aggregate_mask(maps)
    alpha_r = aggregate_mask(maps, decision.pruned) if decision.pruned else alpha
    return ViewRefinement(pose, maps, table, decision, refined, alpha, alpha_r,
                          iou_2d(alpha, gt), iou_2d(alpha_r, gt))
