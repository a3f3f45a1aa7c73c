"""Annotation-level dataset manipulation: perspective augmentation of images with
large signs, crop augmentation, and pruning of unusable training images."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidWindow, NoLargeSign, RegenerationExhausted
from .geometry import AABox, bounding_box, homography_from_correspondences, project
from .templates import GroundTruthSign

RNG_ALGORITHM = "numpy.PCG64"


@dataclass
class AugmentConfig:
    duplicates_per_image: int = 10
    large_sign_min_side: float = 100.0
    border_margin: float = 1.0
    max_regenerate_attempts: int = 50
    rng_seed: int = 0
    rng_algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if self.duplicates_per_image <= 0 or self.max_regenerate_attempts <= 0:
            raise ValueError("counts must be positive")
        if self.rng_algorithm != RNG_ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {self.rng_algorithm!r}")


@dataclass
class AnnotatedImage:
    width: float
    height: float
    signs: list[GroundTruthSign] = field(default_factory=list)
    image_id: str = ""
    payload: str | None = None


@dataclass
class AugmentSample:
    homography: np.ndarray
    sampled_corners: np.ndarray  # TL, TR, BR, BL in the source image
    regions: list[AABox]
    image: AnnotatedImage
    attempts: int


@dataclass
class PruneVerdict:
    usable: bool
    reason: str  # "ok", "difficult" or "border_touching"


def make_rng(seed: int, image_index: int = 0) -> np.random.Generator:
    """Per-image child generator; the child seed is ``seed XOR image_index``."""
    return np.random.Generator(np.random.PCG64((int(seed) ^ int(image_index)) & (2**64 - 1)))


def touches_border(points, width: float, height: float, margin: float) -> bool:
    p = np.asarray(points, dtype=float)
    dist = np.minimum.reduce([p[:, 0], p[:, 1], width - p[:, 0], height - p[:, 1]])
    return bool(np.any(dist < margin))


def prune_unusable(img: AnnotatedImage, border_margin: float = 1.0) -> PruneVerdict:
    """An image is unusable if any sign is flagged difficult or gets closer
    than ``border_margin`` to the image border."""
    for s in img.signs:
        if s.difficult:
            return PruneVerdict(False, "difficult")
    for s in img.signs:
        if touches_border(s.boundary, img.width, img.height, border_margin):
            return PruneVerdict(False, "border_touching")
    return PruneVerdict(True, "ok")


def sampling_regions(img: AnnotatedImage, sign_box: AABox) -> list[AABox]:
    """Corner regions between each image corner and the matching corner of
    the union of the centred half-size rectangle and the sign box."""
    W, H = img.width, img.height
    u = AABox(
        min(W / 4, sign_box.left), min(H / 4, sign_box.top),
        max(3 * W / 4, sign_box.right), max(3 * H / 4, sign_box.bottom),
    )
    return [
        AABox(0.0, 0.0, u.left, u.top),
        AABox(u.right, 0.0, W, u.top),
        AABox(u.right, u.bottom, W, H),
        AABox(0.0, u.bottom, u.left, H),
    ]


def quad_to_image_homography(quad, width: float, height: float) -> np.ndarray:
    """Homography sending a TL, TR, BR, BL quad onto the full image rectangle."""
    target = np.array([[0, 0], [width, 0], [width, height], [0, height]], dtype=float)
    return homography_from_correspondences(quad, target)


def transform_sign(sign: GroundTruthSign, H: np.ndarray) -> GroundTruthSign:
    return replace(sign, boundary=project(H, sign.boundary), template_vertices=project(H, sign.template_vertices))


def _largest_sign(img: AnnotatedImage, min_side: float) -> GroundTruthSign:
    best, best_side = None, -1.0
    for s in img.signs:
        box = bounding_box(s.boundary)
        side = min(box.width, box.height)
        if side >= min_side and side > best_side:
            best, best_side = s, side
    if best is None:
        raise NoLargeSign(f"no sign with min side >= {min_side:g} px")
    return best


def _outside(points, width, height) -> bool:
    p = np.asarray(points)
    return bool(np.all(p[:, 0] < 0) or np.all(p[:, 0] > width) or np.all(p[:, 1] < 0) or np.all(p[:, 1] > height))


def sample_perspective_augment(img: AnnotatedImage, cfg: AugmentConfig,
                               rng: np.random.Generator | None = None) -> list[AugmentSample]:
    """Draw ``cfg.duplicates_per_image`` perspective-warped copies of the annotations.

    A draw is regenerated when a transformed sign ends up closer than the
    border margin to the image edge; signs mapped completely off-image are
    dropped from that copy.
    """
    if rng is None:
        rng = make_rng(cfg.rng_seed)
    big = _largest_sign(img, cfg.large_sign_min_side)
    regions = sampling_regions(img, bounding_box(big.boundary))
    lo = np.array([[r.left, r.top] for r in regions])
    hi = np.array([[r.right, r.bottom] for r in regions])
    W, Hh = img.width, img.height

    samples = []
    for _ in range(cfg.duplicates_per_image):
        for attempt in range(1, cfg.max_regenerate_attempts + 1):
            corners = lo + rng.random((4, 2)) * (hi - lo)
            H = quad_to_image_homography(corners, W, Hh)
            signs, ok = [], True
            for s in img.signs:
                t = transform_sign(s, H)
                if _outside(t.boundary, W, Hh):
                    continue
                if touches_border(t.boundary, W, Hh, cfg.border_margin):
                    ok = False
                    break
                signs.append(t)
            if ok:
                out = AnnotatedImage(W, Hh, signs, img.image_id, img.payload)
                samples.append(AugmentSample(H, corners, regions, out, attempt))
                break
        else:
            raise RegenerationExhausted(
                f"no valid draw in {cfg.max_regenerate_attempts} attempts for image {img.image_id!r}"
            )
    return samples


def crop_augment(img: AnnotatedImage, window) -> AnnotatedImage:
    """Crop to ``window`` (ltrb); signs not entirely inside are dropped."""
    l, t, r, b = window
    if not (0 <= l < r <= img.width and 0 <= t < b <= img.height):
        raise InvalidWindow(f"window {tuple(window)} is empty or outside the {img.width}x{img.height} image")
    off = np.array([l, t], dtype=float)
    kept = []
    for s in img.signs:
        p = s.boundary
        if np.all((p[:, 0] >= l) & (p[:, 0] <= r) & (p[:, 1] >= t) & (p[:, 1] <= b)):
            kept.append(replace(s, boundary=s.boundary - off, template_vertices=s.template_vertices - off))
    return AnnotatedImage(r - l, b - t, kept, img.image_id, img.payload)
