"""Planar projective geometry: homographies, projection, box IoU, two-view DLT.

Points are numpy arrays of shape ``(n, 2)`` (or ``(2,)`` for a single point);
boxes are ``(left, top, right, bottom)``; homographies are 3x3 arrays scaled so
that ``H[2, 2] == 1`` whenever that entry is non-zero.
"""
from __future__ import annotations

from itertools import combinations
from typing import NamedTuple, Protocol

import numpy as np

from .errors import (
    DegenerateBaseline,
    DegenerateConfiguration,
    NoFiniteSolution,
    PointAtInfinity,
)

# triangle area in Hartley-normalised coordinates below which points are collinear
COLLINEAR_AREA = 1e-9
W_EPS = 1e-12


class AABox(NamedTuple):
    left: float
    top: float
    right: float
    bottom: float

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    def corners(self) -> np.ndarray:
        """Corners in TL, TR, BR, BL order."""
        return box_corners(self)


class CameraLike(Protocol):
    @property
    def projection_matrix(self) -> np.ndarray: ...

    @property
    def center(self) -> np.ndarray: ...


def as_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def hartley_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity T moving the centroid to 0 and the mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if d < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return (pts - centroid) * s, T


def _triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _check_no_collinear_triple(normed: np.ndarray, label: str) -> None:
    for i, j, k in combinations(range(len(normed)), 3):
        if _triangle_area(normed[i], normed[j], normed[k]) < COLLINEAR_AREA:
            raise DegenerateConfiguration(f"{label} points {i}, {j}, {k} are collinear")


def _fix_scale(H: np.ndarray) -> np.ndarray:
    if abs(H[2, 2]) > 1e-12 * np.abs(H).max():
        return H / H[2, 2]
    return H / np.linalg.norm(H)


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = len(src)
    A = np.zeros((2 * n, 9))
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    A[0::2, 0] = x
    A[0::2, 1] = y
    A[0::2, 2] = 1.0
    A[0::2, 6] = -u * x
    A[0::2, 7] = -u * y
    A[0::2, 8] = -u
    A[1::2, 3] = x
    A[1::2, 4] = y
    A[1::2, 5] = 1.0
    A[1::2, 6] = -v * x
    A[1::2, 7] = -v * y
    A[1::2, 8] = -v
    return A


def homography_from_correspondences(src, dst) -> np.ndarray:
    """Homography H with ``dst ~ H @ src``.

    Four correspondences are solved exactly (8x8 system, ``h33 = 1`` gauge);
    more are solved in the least-squares sense by SVD of the 2n x 9 DLT matrix.
    Both point sets are Hartley-normalised first in either case.
    """
    src = as_points(src)
    dst = as_points(dst)
    if len(src) != len(dst):
        raise ValueError("src and dst must have the same number of points")
    if len(src) < 4:
        raise ValueError(f"need at least 4 correspondences, got {len(src)}")

    src_n, T_src = hartley_normalization(src)
    dst_n, T_dst = hartley_normalization(dst)
    A = _dlt_rows(src_n, dst_n)

    if len(src) == 4:
        _check_no_collinear_triple(src_n, "source")
        _check_no_collinear_triple(dst_n, "destination")
        M, b = A[:, :8], -A[:, 8]
        h = None
        if np.linalg.cond(M) < 1e12:
            h = np.append(np.linalg.solve(M, b), 1.0)
        if h is None:
            # normalised h33 vanishes: the source centroid maps to infinity
            h = np.linalg.svd(A)[2][-1]
    else:
        _, s, Vt = np.linalg.svd(A)
        if s[-2] < 1e-10 * s[0]:
            raise DegenerateConfiguration("design matrix is rank deficient")
        h = Vt[-1]

    Hn = h.reshape(3, 3)
    H = np.linalg.inv(T_dst) @ Hn @ T_src
    return _fix_scale(H)


def affine_from_correspondences(src, dst) -> np.ndarray:
    """Affine transform (last row ``[0, 0, 1]``) mapping three points exactly."""
    src = as_points(src)
    dst = as_points(dst)
    if len(src) != 3 or len(dst) != 3:
        raise ValueError("affine fit needs exactly 3 correspondences")
    src_n, _ = hartley_normalization(src)
    _check_no_collinear_triple(src_n, "source")
    X = np.column_stack([src, np.ones(3)])
    coeffs = np.linalg.solve(X, dst)  # (3, 2): columns give the two output rows
    H = np.eye(3)
    H[:2, :] = coeffs.T
    return H


def project(h, pts) -> np.ndarray:
    """Apply a homography to points, dividing by the homogeneous coordinate."""
    H = np.asarray(h, dtype=float)
    arr = np.asarray(pts, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    hom = arr @ H[:, :2].T + H[:, 2]
    w = hom[:, 2]
    if np.any(np.abs(w) <= W_EPS):
        raise PointAtInfinity("point maps to infinity")
    out = hom[:, :2] / w[:, None]
    return out[0] if single else out


def box_corners(box) -> np.ndarray:
    l, t, r, b = box
    return np.array([[l, t], [r, t], [r, b], [l, b]], dtype=float)


def bounding_box(pts) -> AABox:
    """Circumscribed axis-aligned rectangle of a point set."""
    arr = np.asarray(pts, dtype=float)
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    return AABox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def iou(a, b) -> float:
    al, at, ar, ab = a
    bl, bt, br, bb = b
    iw = min(ar, br) - max(al, bl)
    ih = min(ab, bb) - max(at, bt)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter
    if union <= 0.0:
        return 0.0
    return float(inter / union)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` box arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def triangulate_dlt(obs1, obs2, cam1: CameraLike, cam2: CameraLike) -> np.ndarray:
    """Linear two-view triangulation of one point.

    Stacks ``x P3 - P1`` and ``y P3 - P2`` for both views and takes the right
    singular vector of the smallest singular value. Rows are scaled to unit
    norm for conditioning.
    """
    if np.linalg.norm(np.asarray(cam1.center) - np.asarray(cam2.center)) < 1e-9:
        raise DegenerateBaseline("camera centers coincide")
    X = triangulate_points(
        np.atleast_2d(obs1), np.atleast_2d(obs2), cam1.projection_matrix, cam2.projection_matrix
    )
    return X[0]


def triangulate_points(obs1, obs2, P1, P2) -> np.ndarray:
    """Batched DLT triangulation: ``(n, 2)`` observations per view -> ``(n, 3)``."""
    obs1 = np.asarray(obs1, dtype=float).reshape(-1, 2)
    obs2 = np.asarray(obs2, dtype=float).reshape(-1, 2)
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    A = np.empty((len(obs1), 4, 4))
    A[:, 0] = obs1[:, 0, None] * P1[2] - P1[0]
    A[:, 1] = obs1[:, 1, None] * P1[2] - P1[1]
    A[:, 2] = obs2[:, 0, None] * P2[2] - P2[0]
    A[:, 3] = obs2[:, 1, None] * P2[2] - P2[1]
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    Xh = np.linalg.svd(A)[2][:, -1, :]
    w = Xh[:, 3]
    if np.any(np.abs(w) <= W_EPS):
        raise NoFiniteSolution("triangulated point is at infinity")
    return Xh[:, :3] / w[:, None]
