"""2D IoU, Chamfer distance, F-score and a sampled METRO surface distance.

Conventions: Chamfer is the sum of the two mean squared nearest-neighbour
distances; reports multiply it by ``CD_SCALE``. The F-score threshold
bounds *squared* nearest distances, so the default 0.001 corresponds to a
Euclidean radius of about 0.0316.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from maskprune.mesh_core import MeshError, PointCloud, TriangleMesh, sample_surface

CD_SCALE = 1e3
DEFAULT_FSCORE_THRESHOLD = 0.001
DEFAULT_SAMPLES = 10_000


@dataclass(frozen=True)
class MetricReport:
    iou2d: float
    chamfer: float
    fscore: float
    metro: float
    chamfer_raw: float

    def as_dict(self) -> dict:
        return asdict(self)


def iou_2d(pred, gt, bin_threshold: float = 0.5) -> float:
    a = np.asarray(pred) >= bin_threshold
    b = np.asarray(gt) >= bin_threshold
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def _points(x) -> np.ndarray:
    p = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("point cloud is empty")
    return p


def nearest_neighbors(query, reference) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest reference point and the squared distance to it."""
    q = _points(query)
    r = _points(reference)
    _, idx = cKDTree(r).query(q, k=1)
    # squared distance recomputed from coordinates, summed x + y + z in order
    diff = q - r[idx]
    return idx, diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]


def chamfer_distance(a, b) -> float:
    """Symmetric Chamfer distance on squared distances (unscaled)."""
    _, da = nearest_neighbors(a, b)
    _, db = nearest_neighbors(b, a)
    return float(da.mean() + db.mean())


def f_score(a, b, dist_threshold: float = DEFAULT_FSCORE_THRESHOLD) -> float:
    """F-score in percent; a point hits when its squared nearest distance is below the threshold."""
    if not dist_threshold > 0:
        raise ValueError("dist_threshold must be > 0")
    _, da = nearest_neighbors(a, b)
    _, db = nearest_neighbors(b, a)
    precision = float(np.mean(da < dist_threshold))
    recall = float(np.mean(db < dist_threshold))
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on triangle ``(a, b, c)`` to ``p``, row by row.

    Classifies each point into the Voronoi region of a vertex, an edge or
    the face interior.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)

    # degenerate triangles can leave NaNs; fall back to the nearest corner
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        corners = np.stack([a[bad], b[bad], c[bad]], axis=1)
        dist = np.linalg.norm(corners - p[bad, None, :], axis=2)
        out[bad] = corners[np.arange(bad.sum()), dist.argmin(axis=1)]
    return out


class SurfaceDistance:
    """Exact point-to-surface distance queries against a triangle mesh.

    Triangles are bucketed by bounding-sphere radius (powers of two) and
    each bucket indexes its sphere centers in a KD-tree. A query first
    takes an upper bound from the nearest center in every bucket, then
    tests only triangles whose sphere can come within that bound.
    """

    def __init__(self, mesh: TriangleMesh):
        if mesh.n_faces == 0:
            raise MeshError("mesh has no faces")
        tri = mesh.triangles()
        self._tri = tri
        centers = tri.mean(axis=1)
        radii = np.linalg.norm(tri - centers[:, None, :], axis=2).max(axis=1)
        level = np.floor(np.log2(np.maximum(radii, 1e-300))).astype(np.int64)
        self._buckets = []
        for lv in np.unique(level):
            ids = np.flatnonzero(level == lv)
            self._buckets.append((ids, cKDTree(centers[ids]), float(radii[ids].max()),
                                  centers[ids], radii[ids]))

    def query(self, points) -> np.ndarray:
        """Euclidean distance from each point to the surface."""
        p = _points(points)
        n = len(p)
        tri = self._tri
        upper = np.full(n, np.inf)
        for ids, tree, _, _, _ in self._buckets:
            _, j = tree.query(p, k=1)
            t = tri[ids[j]]
            q = closest_points_on_triangles(p, t[:, 0], t[:, 1], t[:, 2])
            np.minimum(upper, np.linalg.norm(p - q, axis=1), out=upper)
        best = upper.copy()
        for ids, tree, rmax, centers, radii in self._buckets:
            hits = tree.query_ball_point(p, upper + rmax)
            counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=n)
            if counts.sum() == 0:
                continue
            local = np.fromiter((i for h in hits for i in h), dtype=np.int64, count=int(counts.sum()))
            owner = np.repeat(np.arange(n), counts)
            gap = np.linalg.norm(p[owner] - centers[local], axis=1) - radii[local]
            keep = gap <= upper[owner]
            owner, local = owner[keep], local[keep]
            t = tri[ids[local]]
            q = closest_points_on_triangles(p[owner], t[:, 0], t[:, 1], t[:, 2])
            np.minimum.at(best, owner, np.linalg.norm(p[owner] - q, axis=1))
        return best


def directed_surface_distance(points, mesh: TriangleMesh) -> np.ndarray:
    return SurfaceDistance(mesh).query(points)


def metro(mesh_a: TriangleMesh, mesh_b: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Mean of the two directed mean sample-to-surface distances.

    Both meshes are sampled with the same ``seed``, which makes the result
    symmetric in its arguments and (up to rounding) 0 for identical meshes.
    """
    pa = sample_surface(mesh_a, n, seed)
    pb = sample_surface(mesh_b, n, seed)
    ab = directed_surface_distance(pa, mesh_b).mean()
    ba = directed_surface_distance(pb, mesh_a).mean()
    return float(0.5 * (ab + ba))


def evaluate_3d(pred: TriangleMesh, ref: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0,
                fscore_threshold: float = DEFAULT_FSCORE_THRESHOLD) -> dict:
    """Chamfer, F-score and METRO between two meshes from one shared sampling."""
    pa = sample_surface(pred, n, seed)
    pb = sample_surface(ref, n, seed)
    cd = chamfer_distance(pa, pb)
    da = directed_surface_distance(pa, ref).mean()
    db = directed_surface_distance(pb, pred).mean()
    return {
        "chamfer": cd * CD_SCALE,
        "chamfer_raw": cd,
        "fscore": f_score(pa, pb, fscore_threshold),
        "metro": float(0.5 * (da + db)),
    }
