"""Synthetic meshes with known topology and their hard ground-truth masks."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from maskprune.camera import CameraPose, pixel_centers, project
from maskprune.mesh_core import TriangleMesh, merge_meshes, save_obj
from maskprune.soft_raster import save_mask

SCENE_KINDS = ("icosphere", "torus", "plate_with_holes", "box_grid_chairlike")


def make_icosphere(subdivisions: int = 4, radius: float = 1.0) -> TriangleMesh:
    """Icosphere with ``10 * 4**n + 2`` vertices after ``n`` subdivisions."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = v[i] + v[j]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(radius * np.array(v), np.array(faces))


def make_torus(major_r: float = 0.35, minor_r: float = 0.12,
               segments_u: int = 48, segments_v: int = 24) -> TriangleMesh:
    """Torus around the +Z axis, so its hole faces a camera at azimuth 0."""
    if segments_u < 3 or segments_v < 3:
        raise ValueError("torus needs at least 3 segments in each direction")
    if not 0 < minor_r < major_r:
        raise ValueError("need 0 < minor_r < major_r")
    u = 2 * np.pi * np.arange(segments_u) / segments_u
    v = 2 * np.pi * np.arange(segments_v) / segments_v
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major_r + minor_r * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor_r * np.sin(vv)], axis=-1)
    i, j = np.meshgrid(np.arange(segments_u), np.arange(segments_v), indexing="ij")
    i1 = (i + 1) % segments_u
    j1 = (j + 1) % segments_v
    a = i * segments_v + j
    b = i1 * segments_v + j
    c = i1 * segments_v + j1
    d = i * segments_v + j1
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                            np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(verts.reshape(-1, 3), faces)


def plate_hole_centers(hole_count: int, width: float = 1.0) -> np.ndarray:
    xs = -width / 2 + width * (np.arange(hole_count) + 1) / (hole_count + 1)
    return np.stack([xs, np.zeros(hole_count)], axis=1)


def make_plate_with_holes(hole_count: int = 2, hole_radius: float = 0.1,
                          width: float = 1.0, height: float = 0.6,
                          thickness: float = 0.05, cell: float = 0.025) -> TriangleMesh:
    """Thick plate in the XY plane with round-ish through holes along X.

    The plate is built on a square grid of ``cell``-sized columns; a hole
    removes every column whose center lies within ``hole_radius`` of the
    hole center, so hole outlines are staircases. Faces are oriented
    outward and the result is a closed surface of genus ``hole_count``.
    """
    nx = int(round(width / cell))
    ny = int(round(height / cell))
    if nx < 1 or ny < 1:
        raise ValueError("plate must be at least one cell wide and tall")
    cx = -width / 2 + (np.arange(nx) + 0.5) * width / nx
    cy = -height / 2 + (np.arange(ny) + 0.5) * height / ny
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    solid = np.ones((nx, ny), dtype=bool)
    for hx, hy in plate_hole_centers(hole_count, width):
        solid &= (gx - hx) ** 2 + (gy - hy) ** 2 > hole_radius ** 2
    if hole_count:
        # every hole must stay strictly inside the plate and apart from the others
        padded = np.pad(~solid, 1)
        labels, n = ndimage.label(padded)
        border = set(np.unique(np.concatenate(
            [labels[0], labels[-1], labels[:, 0], labels[:, -1]])).tolist()) - {0}
        if n != hole_count or border:
            raise ValueError("holes overlap each other or the plate border")

    xs = np.linspace(-width / 2, width / 2, nx + 1)
    ys = np.linspace(-height / 2, height / 2, ny + 1)
    zs = (thickness / 2, -thickness / 2)
    vid: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[float, float, float]] = []

    def vertex(i: int, j: int, layer: int) -> int:
        key = (i, j, layer)
        if key not in vid:
            vid[key] = len(verts)
            verts.append((xs[i], ys[j], zs[layer]))
        return vid[key]

    faces = []
    for i in range(nx):
        for j in range(ny):
            if not solid[i, j]:
                continue
            # front (+Z) face counter-clockwise seen from +Z, back reversed
            f = [vertex(i, j, 0), vertex(i + 1, j, 0), vertex(i + 1, j + 1, 0), vertex(i, j + 1, 0)]
            faces += [(f[0], f[1], f[2]), (f[0], f[2], f[3])]
            b = [vertex(i, j, 1), vertex(i + 1, j, 1), vertex(i + 1, j + 1, 1), vertex(i, j + 1, 1)]
            faces += [(b[0], b[2], b[1]), (b[0], b[3], b[2])]

    def filled(i: int, j: int) -> bool:
        return 0 <= i < nx and 0 <= j < ny and bool(solid[i, j])

    for i in range(nx):
        for j in range(ny):
            if not solid[i, j]:
                continue
            # walls on each side facing an empty neighbour; (p, q) runs
            # counter-clockwise around the cell seen from +Z
            sides = (
                ((i, j), (i + 1, j), (i, j - 1)),
                ((i + 1, j), (i + 1, j + 1), (i + 1, j)),
                ((i + 1, j + 1), (i, j + 1), (i, j + 1)),
                ((i, j + 1), (i, j), (i - 1, j)),
            )
            for p, q, nb in sides:
                if filled(*nb):
                    continue
                p0, q0 = vertex(*p, 0), vertex(*q, 0)
                p1, q1 = vertex(*p, 1), vertex(*q, 1)
                faces += [(p0, p1, q1), (p0, q1, q0)]
    return TriangleMesh(np.array(verts), np.array(faces))


def make_box(center, size) -> TriangleMesh:
    c = np.asarray(center, dtype=np.float64)
    s = np.asarray(size, dtype=np.float64) / 2
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]) * s + c
    faces = [
        (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
        (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
        (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),
    ]
    return TriangleMesh(corners, faces)


def make_chairlike(slots: int = 2, slot_radius: float = 0.08) -> TriangleMesh:
    """Seat, four legs and a backrest with through holes, as separate closed parts."""
    back = make_plate_with_holes(slots, slot_radius, width=0.8, height=0.5,
                                 thickness=0.05, cell=0.025)
    back = back.transformed(offset=(0.0, 0.25, -0.375))
    seat = make_box((0.0, 0.0, 0.0), (0.8, 0.05, 0.8))
    legs = [make_box((sx * 0.36, -0.25, sz * 0.36), (0.06, 0.45, 0.06))
            for sx in (-1, 1) for sz in (-1, 1)]
    return merge_meshes([seat, back, *legs])


def render_gt_mask(mesh: TriangleMesh, pose: CameraPose) -> np.ndarray:
    """Hard binary silhouette: a pixel is on when its center lies in any face.

    Coverage uses barycentric edge tests per face bounding box, with points
    on an edge counted as covered. Faces crossing the near plane are
    skipped, like in the soft rasterizer.
    """
    h, w = pose.image_size
    mask = np.zeros((h, w), dtype=bool)
    if mesh.n_faces == 0:
        return mask.astype(np.float64)
    tris = project(mesh, pose)
    xs, ys = pixel_centers(pose.image_size)
    for f in np.flatnonzero(~tris.culled):
        (x0, y0), (x1, y1), (x2, y2) = tris.ndc[f]
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if det == 0.0:
            continue
        cols = np.flatnonzero((xs >= min(x0, x1, x2)) & (xs <= max(x0, x1, x2)))
        rows = np.flatnonzero((ys >= min(y0, y1, y2)) & (ys <= max(y0, y1, y2)))
        if not len(cols) or not len(rows):
            continue
        px, py = np.meshgrid(xs[cols], ys[rows])
        l0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / det
        l1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / det
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        mask[np.ix_(rows, cols)] |= inside
    return mask.astype(np.float64)


# Sphere-against-torus scene. The sphere outline sits just inside the torus
# outline, and the hole is sized so that the faces seen through it stay
# under 5% of the rendered faces: with more, the 0.05 quantile of the
# scores is exactly 0 and the strict threshold prunes nothing.
SPHERE_RADIUS = 0.45
TORUS_PARAMS = {"major_r": 0.31, "minor_r": 0.16, "segments_u": 64, "segments_v": 32}
FRONTAL_POSE = CameraPose(azimuth=0.0, elevation=0.0)


# Solid plate refined against the two-hole plate of the same size.
PLATE_HOLES = {"hole_count": 2, "hole_radius": 0.08}


def solid_vs_holed_plate():
    """``(solid_plate, holed_plate)`` sharing the same grid tessellation."""
    return make_plate_with_holes(0), make_plate_with_holes(**PLATE_HOLES)


def sphere_vs_torus(pose: CameraPose = FRONTAL_POSE):
    """``(sphere, torus, pose)`` for refining a genus-0 guess against a genus-1 mask."""
    return make_icosphere(4, SPHERE_RADIUS), make_torus(**TORUS_PARAMS), pose


def torus_hole_ndc_radius(major_r: float, minor_r: float, pose: CameraPose,
                          samples: int = 20001) -> float:
    """NDC radius of the see-through hole of a Z-axis torus viewed along its axis.

    A ray through the hole passes inside every tube cross-section, so the
    hole edge is the smallest apparent radius ``r / (distance - z)`` over
    the inner half of the tube profile.
    """
    if abs(pose.elevation) > 1e-12 or abs(pose.azimuth % 360.0) > 1e-12:
        raise ValueError("analytic hole radius needs the camera on the +Z axis")
    v = np.linspace(0.5 * np.pi, 1.5 * np.pi, samples)
    r = major_r + minor_r * np.cos(v)
    z = minor_r * np.sin(v)
    slope = np.min(r / (pose.distance - z))
    return float(slope / np.tan(np.radians(pose.fov_y) / 2.0))


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "torus"
    params: dict = field(default_factory=dict)
    poses: tuple[CameraPose, ...] = ()

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")


def build_scene_mesh(spec: SceneSpec) -> TriangleMesh:
    makers = {
        "icosphere": make_icosphere,
        "torus": make_torus,
        "plate_with_holes": make_plate_with_holes,
        "box_grid_chairlike": make_chairlike,
    }
    return makers[spec.kind](**spec.params)


def write_scene(spec: SceneSpec, out_dir: str | os.PathLike) -> Path:
    """Write ``mesh.obj``, one mask PNG per pose and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = build_scene_mesh(spec)
    save_obj(mesh, out / "mesh.obj")
    views = []
    for i, pose in enumerate(spec.poses):
        name = f"mask_{i:03d}.png"
        save_mask(render_gt_mask(mesh, pose), out / name)
        views.append({
            "index": i, "mask": name, "azimuth": pose.azimuth, "elevation": pose.elevation,
            "distance": pose.distance, "image_size": list(pose.image_size), "fov_y": pose.fov_y,
        })
    manifest = {"version": 1, "kind": spec.kind, "params": spec.params,
                "mesh": "mesh.obj", "views": views}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
