"""Forward soft rasterization of silhouettes.

Every face contributes, at each pixel center it reaches, the probability

    sigmoid(sign * d**2 / sigma)

where ``d`` is the NDC distance from the pixel center to the triangle
boundary and ``sign`` is +1 inside the triangle and -1 outside. Only the
``k`` closest faces by depth are kept per pixel; depth picks the slots but
never weights the probabilities. Pixels where an outside face would
contribute less than ``prob_cutoff`` get no fragment at all.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from PIL import Image
from scipy.special import expit

from maskprune.camera import ScreenTriangles

DEFAULT_K = 30
DEFAULT_SIGMA = 5e-7
DEFAULT_PROB_CUTOFF = 1e-7
# Largest double below 1; inside probabilities saturate to 1.0 otherwise.
PROB_CEIL = float(np.nextafter(1.0, 0.0))
# Upper bound on (face, pixel) candidate pairs evaluated per chunk.
_CHUNK_PAIRS = 1 << 21


@dataclass(frozen=True, eq=False)
class FragmentBuffer:
    """Top-K fragments of one rendered view.

    Fragments are stored flat, sorted by pixel and then by slot. ``slot`` is
    the rank of the fragment among its pixel's fragments (0 = closest).
    The dense ``(K, H, W)`` views are built on demand.
    """

    k: int
    image_size: tuple[int, int]
    pixel: np.ndarray
    slot: np.ndarray
    face: np.ndarray
    depth: np.ndarray
    prob: np.ndarray
    _dense: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.face)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.k, *self.image_size)

    def _scatter(self, name: str, values: np.ndarray, fill, dtype) -> np.ndarray:
        if name not in self._dense:
            out = np.full(self.k * self.image_size[0] * self.image_size[1], fill, dtype=dtype)
            out[self.slot * (self.image_size[0] * self.image_size[1]) + self.pixel] = values
            out = out.reshape(self.shape)
            out.setflags(write=False)
            self._dense[name] = out
        return self._dense[name]

    @property
    def pix_to_face(self) -> np.ndarray:
        """``(K, H, W)`` face index per slot, -1 where empty."""
        return self._scatter("face", self.face, -1, np.int64)

    @property
    def zbuf(self) -> np.ndarray:
        """``(K, H, W)`` camera depth per slot, -1 where empty."""
        return self._scatter("depth", self.depth, -1.0, np.float64)

    @property
    def probs(self) -> np.ndarray:
        """``(K, H, W)`` slot probabilities, 0 where empty."""
        return self._scatter("prob", self.prob, 0.0, np.float64)


@dataclass(frozen=True, eq=False)
class FaceSoftMapSet:
    """Sparse per-face probability maps regrouped from a FragmentBuffer.

    ``faces`` lists the unique rendered faces in increasing order. The map
    of ``faces[j]`` lives in ``pixels[ptr[j]:ptr[j+1]]`` /
    ``values[ptr[j]:ptr[j+1]]``; absent pixels read as 0.
    """

    image_size: tuple[int, int]
    faces: np.ndarray
    ptr: np.ndarray
    pixels: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.faces)

    @property
    def n_pixels(self) -> int:
        return self.image_size[0] * self.image_size[1]

    def entry_faces(self) -> np.ndarray:
        """Face index of every stored entry."""
        return np.repeat(self.faces, np.diff(self.ptr))

    def dense_map(self, face: int) -> np.ndarray:
        j = np.searchsorted(self.faces, face)
        out = np.zeros(self.n_pixels)
        if j < len(self.faces) and self.faces[j] == face:
            s, e = self.ptr[j], self.ptr[j + 1]
            out[self.pixels[s:e]] = self.values[s:e]
        return out.reshape(self.image_size)


def influence_radius(sigma: float, prob_cutoff: float = DEFAULT_PROB_CUTOFF) -> float:
    """NDC distance outside a face where its probability falls to ``prob_cutoff``."""
    return math.sqrt(sigma * math.log((1.0 - prob_cutoff) / prob_cutoff))


def soft_probability(signed_sq_dist: np.ndarray, sigma: float) -> np.ndarray:
    """Sigmoid of ``signed_sq_dist / sigma``, clamped below 1."""
    return np.minimum(expit(np.asarray(signed_sq_dist, dtype=np.float64) / sigma), PROB_CEIL)


def signed_sq_distance(px: np.ndarray, py: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed squared distance from points to 2D triangles, plus clipped barycentrics.

    ``tri`` is ``(N, 3, 2)``, one triangle per point. Positive inside,
    negative outside; degenerate triangles have no inside.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    best = np.full(len(px), np.inf)
    for p0, p1 in ((a, b), (b, c), (c, a)):
        ex = p1[:, 0] - p0[:, 0]
        ey = p1[:, 1] - p0[:, 1]
        wx = px - p0[:, 0]
        wy = py - p0[:, 1]
        ll = ex * ex + ey * ey
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(ll > 0.0, (wx * ex + wy * ey) / ll, 0.0)
        t = np.clip(t, 0.0, 1.0)
        dx = wx - t * ex
        dy = wy - t * ey
        np.minimum(best, dx * dx + dy * dy, out=best)

    # edge functions: w0 is opposite corner a, etc.
    w0 = (c[:, 0] - b[:, 0]) * (py - b[:, 1]) - (c[:, 1] - b[:, 1]) * (px - b[:, 0])
    w1 = (a[:, 0] - c[:, 0]) * (py - c[:, 1]) - (a[:, 1] - c[:, 1]) * (px - c[:, 0])
    w2 = (b[:, 0] - a[:, 0]) * (py - a[:, 1]) - (b[:, 1] - a[:, 1]) * (px - a[:, 0])
    area = w0 + w1 + w2
    inside = (area != 0.0) & (
        ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
    )
    signed = np.where(inside, best, -best)

    bary = np.stack([w0, w1, w2], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        bary = bary / area[:, None]
    bary = np.where(np.isfinite(bary), bary, 1.0 / 3.0)
    bary = np.clip(bary, 0.0, None)
    s = bary.sum(axis=1, keepdims=True)
    bary = np.where(s > 0, bary / np.where(s > 0, s, 1.0), 1.0 / 3.0)
    return signed, bary


def _pixel_ranges(ndc: np.ndarray, radius: float, image_size: tuple[int, int]):
    h, w = image_size
    lo = ndc.min(axis=1) - radius
    hi = ndc.max(axis=1) + radius
    col_lo = np.ceil(((lo[:, 0] + 1.0) * w - 1.0) / 2.0)
    col_hi = np.floor(((hi[:, 0] + 1.0) * w - 1.0) / 2.0)
    row_lo = np.ceil(((1.0 - hi[:, 1]) * h - 1.0) / 2.0)
    row_hi = np.floor(((1.0 - lo[:, 1]) * h - 1.0) / 2.0)
    col_lo = np.clip(col_lo, 0, w).astype(np.int64)
    col_hi = np.clip(col_hi, -1, w - 1).astype(np.int64)
    row_lo = np.clip(row_lo, 0, h).astype(np.int64)
    row_hi = np.clip(row_hi, -1, h - 1).astype(np.int64)
    ncols = np.maximum(col_hi - col_lo + 1, 0)
    nrows = np.maximum(row_hi - row_lo + 1, 0)
    return row_lo, col_lo, nrows, ncols


def _rasterize_chunk(face_ids, tris: ScreenTriangles, row_lo, col_lo, ncols, counts,
                     sigma, prob_cutoff, image_size):
    h, w = image_size
    total = int(counts.sum())
    face = np.repeat(face_ids, counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - starts
    nc = np.repeat(ncols, counts)
    row = np.repeat(row_lo, counts) + local // nc
    col = np.repeat(col_lo, counts) + local % nc
    px = -1.0 + (2.0 * col + 1.0) / w
    py = 1.0 - (2.0 * row + 1.0) / h

    signed, bary = signed_sq_distance(px, py, tris.ndc[face])
    prob = soft_probability(signed, sigma)
    keep = (signed >= 0.0) | (prob >= prob_cutoff)
    inv_z = (bary[keep] / tris.depth[face[keep]]).sum(axis=1)
    return row[keep] * w + col[keep], face[keep], 1.0 / inv_z, prob[keep]


def rasterize_topk(
    tris: ScreenTriangles,
    k: int = DEFAULT_K,
    sigma: float = DEFAULT_SIGMA,
    image_size: tuple[int, int] = (224, 224),
    prob_cutoff: float = DEFAULT_PROB_CUTOFF,
    workers: int | None = None,
) -> FragmentBuffer:
    """Build the top-K fragment buffer of projected faces.

    For every pixel center the faces reaching it are ordered by depth
    (perspective-correct, at the clipped barycentric position), ties going
    to the lower face index, and the first ``k`` are kept. The result does
    not depend on ``workers``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if not 0.0 < prob_cutoff < 0.5:
        raise ValueError("prob_cutoff must be in (0, 0.5)")
    image_size = (int(image_size[0]), int(image_size[1]))

    live = np.flatnonzero(~tris.culled)
    radius = influence_radius(sigma, prob_cutoff)
    row_lo, col_lo, nrows, ncols = _pixel_ranges(tris.ndc[live], radius, image_size)
    counts = nrows * ncols
    nz = counts > 0
    live, row_lo, col_lo, ncols, counts = live[nz], row_lo[nz], col_lo[nz], ncols[nz], counts[nz]

    # chunk boundaries depend only on the input, never on the worker count
    bounds = [0]
    acc = 0
    for i, c in enumerate(counts.tolist()):
        if acc and acc + c > _CHUNK_PAIRS:
            bounds.append(i)
            acc = 0
        acc += c
    bounds.append(len(counts))
    jobs = [slice(s, e) for s, e in zip(bounds[:-1], bounds[1:]) if e > s]

    def run(sl):
        return _rasterize_chunk(live[sl], tris, row_lo[sl], col_lo[sl], ncols[sl], counts[sl],
                                sigma, prob_cutoff, image_size)

    n_workers = workers if workers is not None else min(len(jobs), os.cpu_count() or 1)
    if n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(sl) for sl in jobs]

    if parts:
        pixel, face, depth, prob = (np.concatenate(x) for x in zip(*parts))
    else:
        pixel = face = np.zeros(0, dtype=np.int64)
        depth = prob = np.zeros(0)

    order = np.lexsort((face, depth, pixel))
    pixel, face, depth, prob = pixel[order], face[order], depth[order], prob[order]
    first = np.ones(len(pixel), dtype=bool)
    first[1:] = pixel[1:] != pixel[:-1]
    group_start = np.maximum.accumulate(np.where(first, np.arange(len(pixel)), 0))
    slot = np.arange(len(pixel)) - group_start
    keep = slot < k
    arrays = [a[keep] for a in (pixel, slot, face, depth, prob)]
    for a in arrays:
        a.setflags(write=False)
    return FragmentBuffer(k, image_size, *arrays)


def face_soft_maps(frag: FragmentBuffer) -> FaceSoftMapSet:
    """Regroup fragments by face; probabilities are carried over unchanged."""
    order = np.lexsort((frag.pixel, frag.face))
    face = frag.face[order]
    faces, counts = np.unique(face, return_counts=True)
    ptr = np.zeros(len(faces) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return FaceSoftMapSet(frag.image_size, faces, ptr, frag.pixel[order], frag.prob[order])


def aggregate_mask(maps: FaceSoftMapSet, excluded: Iterable[int] = ()) -> np.ndarray:
    """Combine face maps as ``1 - prod(1 - D_j)`` over faces not excluded."""
    excluded = np.fromiter((int(f) for f in excluded), dtype=np.int64)
    keep = ~np.isin(maps.entry_faces(), excluded)
    log_miss = np.bincount(
        maps.pixels[keep], weights=np.log1p(-maps.values[keep]), minlength=maps.n_pixels
    )
    return (-np.expm1(log_miss)).reshape(maps.image_size)


def check_mask(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"alpha mask must be 2D, got shape {m.shape}")
    if m.size and (m.min() < 0.0 or m.max() > 1.0 or not np.all(np.isfinite(m))):
        raise ValueError("alpha mask values must lie in [0, 1]")
    return m


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(mask) >= threshold).astype(np.float64)


class MaskFormatError(ValueError):
    pass


def load_mask(path: str | os.PathLike, luma: bool = False) -> np.ndarray:
    """Read a grayscale PNG as a float mask in [0, 1].

    8-bit images are divided by 255 and 16-bit ones by 65535. Color images
    are only accepted with ``luma=True`` and are reduced to luminance.
    """
    with Image.open(path) as img:
        mode = img.mode
        if mode in ("RGB", "RGBA", "P", "LA"):
            if not luma:
                raise MaskFormatError(
                    f"{path}: {mode} image is not grayscale (pass luma=True to convert)"
                )
            img = img.convert("L")
            mode = "L"
        if mode in ("1", "L"):
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(img, dtype=np.float64)
            if a.size and (a.min() < 0 or a.max() > 65535):
                raise MaskFormatError(f"{path}: pixel values outside the 16-bit range")
            return a / 65535.0
    raise MaskFormatError(f"{path}: unsupported pixel format {mode}")


def save_mask(mask: np.ndarray, path: str | os.PathLike, bits: int = 8) -> None:
    """Write a mask as a grayscale PNG, rounding half up."""
    m = check_mask(mask)
    if bits == 8:
        Image.fromarray(np.floor(m * 255.0 + 0.5).astype(np.uint8)).save(path)
    elif bits == 16:
        q = np.floor(m * 65535.0 + 0.5).astype(np.uint16)
        Image.fromarray(q).save(path)
    else:
        raise ValueError("bits must be 8 or 16")
