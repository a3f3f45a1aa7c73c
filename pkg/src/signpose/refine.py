"""Local boundary refinement against image gradients.

An affine correction of the predicted boundary is searched to maximise the
summed gradient magnitude sampled along the polygon edges. The optimiser is a
derivative-free coordinate ascent: each of the six affine parameters gets a
coarse scan followed by a golden-section polish, and a move is only taken
when it raises the energy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OutOfPatch, SchemaError
from .geometry import as_points

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MIN_PATCH = 8
MARGIN = 2.0


@dataclass
class RefineConfig:
    samples_per_edge: int = 16
    max_iterations: int = 30
    step_tolerance: float = 1e-4
    discard_threshold: float = 5.0
    # scan range for each parameter, as the largest corner displacement in px
    search_radius: float = 24.0
    scan_step: float = 1.0
    smoothing_sigma: float = 1.5

    def __post_init__(self):
        if min(self.samples_per_edge, self.max_iterations) <= 0:
            raise ValueError("sample and iteration counts must be positive")
        if min(self.step_tolerance, self.discard_threshold, self.search_radius, self.scan_step) <= 0:
            raise ValueError("tolerances and radii must be positive")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be non-negative")


@dataclass
class RefineResult:
    boundary: np.ndarray
    accepted: bool
    energy_before: float
    energy_after: float
    iterations: int


def as_patch(patch) -> np.ndarray:
    img = np.asarray(patch, dtype=float)
    if img.ndim != 2 or min(img.shape) < MIN_PATCH:
        raise ValueError(f"patch must be a 2-D array of at least {MIN_PATCH}x{MIN_PATCH}")
    return img


def gradient_magnitude(patch) -> np.ndarray:
    """Central differences inside, one-sided differences on the border."""
    gy, gx = np.gradient(as_patch(patch))
    return np.hypot(gx, gy)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img
    r = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    h, w = img.shape
    p = np.pad(img, r, mode="edge")
    tmp = sum(k[i] * p[:, i:i + w] for i in range(2 * r + 1))
    return sum(k[i] * tmp[i:i + h, :] for i in range(2 * r + 1))


def bilinear(img: np.ndarray, pts) -> np.ndarray:
    """Sub-pixel reads at (x, y) = (column, row); zero outside the image."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    h, w = img.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2)
    y0 = np.minimum(np.floor(yc).astype(int), h - 2)
    fx = xc - x0
    fy = yc - y0
    v = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x0 + 1] * fx * (1 - fy)
         + img[y0 + 1, x0] * (1 - fx) * fy + img[y0 + 1, x0 + 1] * fx * fy)
    return np.where(inside, v, 0.0)


def edge_samples(boundary: np.ndarray, per_edge: int) -> np.ndarray:
    t = (np.arange(per_edge) + 0.5) / per_edge
    a = boundary
    b = np.roll(boundary, -1, axis=0)
    return (a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)


class _AffineEnergy:
    """Energy as a function of 6 affine parameters around the boundary centroid.

    Parameters are (tx, ty, l11, l12, l21, l22); the linear part is scaled by
    the boundary radius so a unit step moves some corner by about one pixel.
    """

    PAD = 2

    def __init__(self, grad: np.ndarray, boundary: np.ndarray, per_edge: int):
        # zero border so clipped out-of-patch reads contribute nothing
        self.grad = np.pad(grad, self.PAD)
        self.hi = np.array(self.grad.shape[::-1], dtype=float) - 1.0 - 1e-9
        self.center = boundary.mean(axis=0)
        self.radius = max(float(np.linalg.norm(boundary - self.center, axis=1).max()), 1.0)
        self.rel = edge_samples(boundary, per_edge) - self.center

    def transform(self, theta: np.ndarray, rel: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(theta)
        L = np.eye(2) + theta[:, 2:].reshape(-1, 2, 2) / self.radius
        return self.center + rel @ L.transpose(0, 2, 1) + theta[:, None, :2]

    def __call__(self, theta) -> np.ndarray:
        p = self.transform(theta, self.rel) + self.PAD
        np.clip(p, 0.0, self.hi, out=p)
        x, y = p[..., 0], p[..., 1]
        x0 = x.astype(int)
        y0 = y.astype(int)
        fx = x - x0
        fy = y - y0
        g = self.grad
        top = g[y0, x0] + fx * (g[y0, x0 + 1] - g[y0, x0])
        bot = g[y0 + 1, x0] + fx * (g[y0 + 1, x0 + 1] - g[y0 + 1, x0])
        return (top + fy * (bot - top)).sum(axis=-1)


def _line_search(energy: _AffineEnergy, theta: np.ndarray, k: int, radius: float, cfg: RefineConfig):
    """Best value of parameter k: grid scan, then golden-section around the best cell."""
    base = theta[k]
    offsets = np.arange(-radius, radius + 0.5 * cfg.scan_step, cfg.scan_step)
    cand = np.repeat(theta[None], len(offsets), axis=0)
    cand[:, k] = base + offsets
    e = energy(cand)
    j = int(np.argmax(e))
    best_x, best_e = cand[j, k], float(e[j])

    t = theta.copy()

    def f(x):
        t[k] = x
        return float(energy(t)[0])

    lo, hi = best_x - cfg.scan_step, best_x + cfg.scan_step
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > cfg.step_tolerance:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    x = 0.5 * (lo + hi)
    fx = f(x)
    if fx > best_e:
        best_x, best_e = x, fx
    return best_x, best_e


def refine_boundary(patch, boundary, cfg: RefineConfig | None = None) -> RefineResult:
    """Fit an affine correction of ``boundary`` (patch pixel coordinates) to the
    patch's edges. The input is returned untouched (``accepted=False``) when any
    corner would move further than ``cfg.discard_threshold``."""
    cfg = cfg or RefineConfig()
    img = as_patch(patch)
    original = boundary
    pts = as_points(boundary)
    h, w = img.shape
    if (pts[:, 0].min() < MARGIN or pts[:, 1].min() < MARGIN
            or pts[:, 0].max() > w - 1 - MARGIN or pts[:, 1].max() > h - 1 - MARGIN):
        raise OutOfPatch(f"boundary must keep a {MARGIN:g} px margin inside the {w}x{h} patch")

    grad = gradient_magnitude(gaussian_blur(img, cfg.smoothing_sigma))
    energy = _AffineEnergy(grad, pts, cfg.samples_per_edge)
    theta = np.zeros(6)
    e0 = e = float(energy(theta)[0])
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        # global scan on the first sweep only; afterwards stay local
        radius = cfg.search_radius if it == 1 else 2 * cfg.scan_step
        biggest = 0.0
        for k in range(6):
            x, ek = _line_search(energy, theta, k, radius, cfg)
            if ek > e:
                biggest = max(biggest, abs(x - theta[k]))
                theta[k] = x
                e = ek
        if biggest < cfg.step_tolerance:
            break

    refined = energy.transform(theta, pts - energy.center)[0]
    moved = float(np.linalg.norm(refined - pts, axis=1).max())
    if moved > cfg.discard_threshold:
        return RefineResult(original, False, e0, e0, it)
    return RefineResult(refined, True, e0, e, it)


def rasterize_polygon(width: int, height: int, poly, supersample: int = 4,
                      foreground: float = 1.0, background: float = 0.0) -> np.ndarray:
    """Anti-aliased fill of a convex polygon; pixel (r, c) covers [c, c+1) x [r, r+1)
    shifted so pixel centres sit at integer coordinates."""
    poly = as_points(poly)
    s = supersample
    off = (np.arange(s) + 0.5) / s - 0.5
    xs = (np.arange(width)[:, None] + off[None, :]).ravel()
    ys = (np.arange(height)[:, None] + off[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    inside = np.ones_like(X, dtype=bool)
    a = poly
    b = np.roll(poly, -1, axis=0)
    orient = np.sign(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))
    for (x0, y0), (x1, y1) in zip(a, b):
        cross = (x1 - x0) * (Y - y0) - (y1 - y0) * (X - x0)
        inside &= cross * orient >= 0
    cover = inside.reshape(height, s, width, s).mean(axis=(1, 3))
    return background + (foreground - background) * cover


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM with maxval <= 255, scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise SchemaError("only binary P5 PGM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise SchemaError("maxval above 255 is not supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).astype(float) / maxval


def write_pgm(path, img) -> None:
    arr = np.clip(np.round(np.asarray(img, dtype=float) * 255), 0, 255).astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())
