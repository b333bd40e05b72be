"""Turntable camera poses and perspective projection to NDC.

Conventions
-----------
World space is right-handed with +Y up. A pose at azimuth ``a`` and
elevation ``e`` puts the camera at::

    distance * (cos(e) sin(a), sin(e), cos(e) cos(a))

so azimuth 0 sits on the +Z axis, azimuth rotates about +Y and elevation
lifts toward +Y. The camera always looks at the origin. Camera space
follows the OpenGL layout (x right, y up, looking down -z); depth is
``-z_cam`` and is positive in front of the camera.

NDC spans [-1, 1] on both axes with +y up. Pixel ``(row, col)`` has its
center at ``x = -1 + (2 col + 1) / W`` and ``y = 1 - (2 row + 1) / H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from maskprune.mesh_core import TriangleMesh

DEFAULT_DISTANCE = 2.732
DEFAULT_ELEVATION = 30.0
DEFAULT_IMAGE_SIZE = (224, 224)
DEFAULT_FOV_Y = 30.0
NEAR_PLANE = 1e-6


@dataclass(frozen=True)
class CameraPose:
    azimuth: float = 0.0
    elevation: float = DEFAULT_ELEVATION
    distance: float = DEFAULT_DISTANCE
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    fov_y: float = DEFAULT_FOV_Y

    def __post_init__(self):
        h, w = self.image_size
        object.__setattr__(self, "image_size", (int(h), int(w)))
        if not self.distance > 0:
            raise ValueError(f"camera distance must be > 0, got {self.distance}")
        if h < 1 or w < 1:
            raise ValueError(f"image size must be >= 1, got {self.image_size}")
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError(f"fov_y must be in (0, 180), got {self.fov_y}")

    @property
    def center(self) -> np.ndarray:
        a = math.radians(self.azimuth)
        e = math.radians(self.elevation)
        return self.distance * np.array(
            [math.cos(e) * math.sin(a), math.sin(e), math.cos(e) * math.cos(a)]
        )


@dataclass(frozen=True)
class ScreenTriangles:
    """Projected faces, in input order.

    ``ndc`` is ``(F, 3, 2)``; ``depth`` is the camera-space depth of each
    corner; ``culled`` marks faces the rasterizer must skip.
    """

    ndc: np.ndarray
    depth: np.ndarray
    culled: np.ndarray

    def __len__(self) -> int:
        return len(self.ndc)


def view_matrix(pose: CameraPose) -> np.ndarray:
    """World-to-camera rigid transform as a 4x4 matrix."""
    eye = pose.center
    forward = -eye / np.linalg.norm(eye)
    up = np.array([0.0, 1.0, 0.0])
    if abs(abs(pose.elevation) - 90.0) < 1e-9 or np.linalg.norm(np.cross(forward, up)) < 1e-12:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    rot = np.stack([right, true_up, -forward])
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = -rot @ eye
    return m


def to_camera(points: np.ndarray, pose: CameraPose) -> np.ndarray:
    m = view_matrix(pose)
    return np.asarray(points, dtype=np.float64) @ m[:3, :3].T + m[:3, 3]


def project_points(points: np.ndarray, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """NDC xy ``(N, 2)`` and depth ``(N,)`` of world points."""
    cam = to_camera(points, pose)
    depth = -cam[..., 2]
    h, w = pose.image_size
    fy = 1.0 / math.tan(math.radians(pose.fov_y) / 2.0)
    fx = fy * h / w
    with np.errstate(divide="ignore", invalid="ignore"):
        x = fx * cam[..., 0] / depth
        y = fy * cam[..., 1] / depth
    return np.stack([x, y], axis=-1), depth


def project(mesh: TriangleMesh, pose: CameraPose, cull_backfaces: bool = False) -> ScreenTriangles:
    """Project every face of ``mesh`` to NDC.

    A face with any corner at or behind the near plane is culled, which also
    covers faces entirely behind the camera. With ``cull_backfaces`` faces
    whose corners appear clockwise on screen are culled as well.
    """
    ndc, depth = project_points(mesh.vertices, pose)
    tri_ndc = ndc[mesh.faces] if mesh.n_faces else np.zeros((0, 3, 2))
    tri_depth = depth[mesh.faces] if mesh.n_faces else np.zeros((0, 3))
    culled = np.any(tri_depth <= NEAR_PLANE, axis=1)
    if cull_backfaces and len(tri_ndc):
        e1 = tri_ndc[:, 1] - tri_ndc[:, 0]
        e2 = tri_ndc[:, 2] - tri_ndc[:, 0]
        culled |= (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) <= 0.0
    tri_ndc = np.where(culled[:, None, None], 0.0, tri_ndc)
    return ScreenTriangles(tri_ndc, tri_depth, culled)


def turntable_poses(
    n_views: int,
    elevation: float = DEFAULT_ELEVATION,
    distance: float = DEFAULT_DISTANCE,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    fov_y: float = DEFAULT_FOV_Y,
) -> list[CameraPose]:
    """``n_views`` poses with azimuths evenly spaced over [0, 360)."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    return [
        CameraPose(360.0 * i / n_views, elevation, distance, image_size, fov_y)
        for i in range(n_views)
    ]


def pixel_centers(image_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """NDC x of every column and NDC y of every row."""
    h, w = image_size
    xs = -1.0 + (2.0 * np.arange(w) + 1.0) / w
    ys = 1.0 - (2.0 * np.arange(h) + 1.0) / h
    return xs, ys
