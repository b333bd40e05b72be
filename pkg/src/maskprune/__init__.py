"""Mask-guided face pruning for triangle meshes.

Soft-rasterize a mesh into per-face probability maps, score every rendered
face against a 2D alpha mask, prune the worst ones and measure the result.
"""

from maskprune.camera import CameraPose, project, turntable_poses, view_matrix
from maskprune.mesh_core import (
    MeshError,
    PointCloud,
    TriangleMesh,
    load_obj,
    normalize_unit,
    remove_faces,
    sample_surface,
    save_obj,
)
from maskprune.prune import (
    IoUScoreTable,
    PruneDecision,
    face_iou_scores,
    prune_faces,
    quantile_threshold,
    refine_multi_view,
)
from maskprune.soft_raster import (
    FaceSoftMapSet,
    FragmentBuffer,
    aggregate_mask,
    binarize,
    face_soft_maps,
    load_mask,
    rasterize_topk,
    save_mask,
)

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "FaceSoftMapSet",
    "FragmentBuffer",
    "IoUScoreTable",
    "MeshError",
    "PointCloud",
    "PruneDecision",
    "TriangleMesh",
    "aggregate_mask",
    "binarize",
    "face_iou_scores",
    "face_soft_maps",
    "load_mask",
    "load_obj",
    "normalize_unit",
    "project",
    "prune_faces",
    "quantile_threshold",
    "rasterize_topk",
    "refine_multi_view",
    "remove_faces",
    "sample_surface",
    "save_mask",
    "save_obj",
    "turntable_poses",
    "view_matrix",
]
