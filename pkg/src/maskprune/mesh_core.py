"""Triangle meshes: OBJ I/O, face deletion, normalization and surface sampling."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Invalid mesh data or an operation that cannot be applied to a mesh."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertex positions ``(V, 3)`` and triangle indices ``(F, 3)``.

    Arrays are copied on construction and made read-only.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64)
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be triangles, got shape {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError(
                f"face index out of range [0, {len(v)}): min={f.min()}, max={f.max()}"
            )
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """Corner positions, shape ``(F, 3, 3)``."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces).size
        return int(used - len(self.edges()) + self.n_faces)

    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        if self.n_faces == 0:
            return False
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        _, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        return TriangleMesh(self.vertices * scale + np.asarray(offset, dtype=np.float64), self.faces)

    def compact(self) -> "TriangleMesh":
        """Drop vertices no face references, reindexing faces."""
        used, inverse = np.unique(self.faces, return_inverse=True)
        return TriangleMesh(self.vertices[used], inverse.reshape(-1, 3))

    def same_as(self, other: "TriangleMesh") -> bool:
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(
            self.faces, other.faces
        )


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", _frozen(p))

    def __len__(self) -> int:
        return len(self.points)


def merge_meshes(meshes: Iterable[TriangleMesh]) -> TriangleMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def _resolve_index(token: str, n_vertices: int, lineno: int) -> int:
    # "f 1/2/3" carries texcoord/normal indices after the first slash
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshError(f"line {lineno}: bad face index {token!r}") from None
    if idx > 0:
        resolved = idx - 1
    elif idx < 0:
        resolved = n_vertices + idx
    else:
        raise MeshError(f"line {lineno}: OBJ indices are 1-based, got 0")
    if not 0 <= resolved < n_vertices:
        raise MeshError(
            f"line {lineno}: face index {idx} out of range for {n_vertices} vertices"
        )
    return resolved


def load_obj(path: str | os.PathLike) -> TriangleMesh:
    """Read an ASCII Wavefront OBJ file.

    Only ``v`` and ``f`` records are used. Polygons are fan-triangulated
    around their first corner; 1-based and negative (relative) indices are
    both accepted. Other records are skipped and counted in a log message.
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    ignored = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append((float(rest[0]), float(rest[1]), float(rest[2])))
                except ValueError:
                    raise MeshError(f"line {lineno}: bad vertex coordinate") from None
            elif tag == "f":
                if len(rest) < 3:
                    raise MeshError(f"line {lineno}: face needs at least 3 vertices")
                idx = [_resolve_index(t, len(vertices), lineno) for t in rest]
                for i in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[i], idx[i + 1]))
            else:
                ignored += 1
    if ignored:
        logger.warning("%s: ignored %d unsupported OBJ records", path, ignored)
    return TriangleMesh(
        np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
    )


def save_obj(mesh: TriangleMesh, path: str | os.PathLike) -> None:
    lines = [f"v {x!r} {y!r} {z!r}\n" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces.tolist()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def remove_faces(mesh: TriangleMesh, face_ids: Iterable[int]) -> TriangleMesh:
    """Delete faces by index.

    Vertices are left untouched, so indices stay valid across the pipeline;
    use :meth:`TriangleMesh.compact` before export if orphans matter.
    """
    ids = np.fromiter((int(i) for i in face_ids), dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= mesh.n_faces):
        raise MeshError(f"invalid face id for mesh with {mesh.n_faces} faces")
    keep = np.ones(mesh.n_faces, dtype=bool)
    keep[ids] = False
    return TriangleMesh(mesh.vertices, mesh.faces[keep])


def normalize_unit(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box at the origin and scale its longest side to 1."""
    if mesh.n_vertices == 0:
        raise MeshError("cannot normalize a mesh without vertices")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise MeshError("cannot normalize a mesh with zero extent")
    return TriangleMesh((mesh.vertices - (lo + hi) / 2.0) / extent, mesh.faces)


def sample_surface(mesh: TriangleMesh, n: int, seed: int | None = 0) -> PointCloud:
    """Draw ``n`` points uniformly over the surface area.

    Triangles are picked with probability proportional to area (degenerate
    ones get zero weight), then a uniform point is drawn inside the chosen
    triangle with the square-root barycentric map.
    """
    points, _ = sample_surface_with_faces(mesh, n, seed)
    return PointCloud(points)


def sample_surface_with_faces(
    mesh: TriangleMesh, n: int, seed: int | None = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Sampled points ``(n, 3)`` together with the index of their source face."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas() if mesh.n_faces else np.zeros(0)
    total = areas.sum()
    if not total > 0.0:
        raise MeshError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(mesh.n_faces, size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles()[face_idx]
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    return pts, face_idx
