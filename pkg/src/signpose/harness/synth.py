"""Synthetic scenes and the oracle predictor standing in for the CNN.

The oracle inverts the decoder: it matches ground truth to default boxes the
same way training would and writes logits/offsets that decode back to the
(optionally noise-perturbed) ground-truth template vertices.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..anchors import DefaultBoxes, GridSpec, encode_vertices, generate_default_boxes
from ..augment import AnnotatedImage, make_rng, prune_unusable
from ..detector import PredictionGrid, crop_window
from ..errors import PlacementExhausted
from ..geometry import bounding_box
from ..targets import match
from ..templates import DEFAULT_TEMPLATES, UNIT_SQUARE, GroundTruthSign, ShapeClass, TemplateSet

PLACEMENT_GAP = 2.0


@dataclass
class OracleConfig:
    scene_count: int = 10
    image_width: int = 1280
    image_height: int = 720
    signs_per_image: tuple[int, int] = (1, 4)
    size_range: tuple[float, float] = (20.0, 200.0)
    # rectangle width/height ratio range; other shapes stay square before jitter
    aspect_range: tuple[float, float] = (0.6, 1.6)
    # per-corner jitter as a fraction of the sign size
    jitter_range: tuple[float, float] = (0.0, 0.1)
    shapes: tuple[str, ...] = ()
    sigma_pred: float = 0.0
    logit_margin: float = 10.0
    match_iou: float = 0.5
    max_placement_attempts: int = 200
    rng_seed: int = 0
    grid_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.signs_per_image
        if self.scene_count < 0 or lo < 0 or hi < lo:
            raise ValueError("invalid sign count range")
        if not 0 < self.size_range[0] <= self.size_range[1]:
            raise ValueError("invalid size range")
        if not 0 < self.aspect_range[0] <= self.aspect_range[1]:
            raise ValueError("invalid aspect range")
        if not 0 <= self.jitter_range[0] <= self.jitter_range[1] < 0.25:
            raise ValueError("jitter must lie in [0, 0.25)")
        if self.sigma_pred < 0 or self.logit_margin <= 0:
            raise ValueError("sigma_pred must be >= 0 and logit_margin > 0")

    def make_grid_spec(self, width=None, height=None) -> GridSpec:
        d = {"input_width": width or self.image_width, "input_height": height or self.image_height}
        d.update({k: v for k, v in self.grid_spec.items() if k not in ("input_width", "input_height")})
        return GridSpec.from_dict(d)


def _convex(quad: np.ndarray) -> bool:
    e1 = np.roll(quad, -1, axis=0) - quad
    e2 = np.roll(e1, -1, axis=0)
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    return bool(np.all(cross > 1e-6))


def _boxes_overlap(a, b, gap: float) -> bool:
    return not (a.right + gap <= b.left or b.right + gap <= a.left
                or a.bottom + gap <= b.top or b.bottom + gap <= a.top)


def _place_sign(rng: np.random.Generator, cfg: OracleConfig, shape: str, placed: list,
                templates: TemplateSet) -> GroundTruthSign:
    W, H = cfg.image_width, cfg.image_height
    margin = PLACEMENT_GAP
    for _ in range(cfg.max_placement_attempts):
        size = rng.uniform(*cfg.size_range)
        aspect = rng.uniform(*cfg.aspect_range) if shape == ShapeClass.RECTANGLE else 1.0
        w, h = size * np.sqrt(aspect), size / np.sqrt(aspect)
        jitter = rng.uniform(*cfg.jitter_range)
        offsets = rng.uniform(-1.0, 1.0, (4, 2)) * jitter * size
        if w + 2 * (jitter * size + margin) >= W or h + 2 * (jitter * size + margin) >= H:
            continue
        cx = rng.uniform(w / 2 + jitter * size + margin, W - w / 2 - jitter * size - margin)
        cy = rng.uniform(h / 2 + jitter * size + margin, H - h / 2 - jitter * size - margin)
        quad = (UNIT_SQUARE - 0.5) * [w, h] + [cx, cy] + offsets
        if not _convex(quad):
            continue
        box = bounding_box(quad)
        if box.left < margin or box.top < margin or box.right > W - margin or box.bottom > H - margin:
            continue
        if any(_boxes_overlap(box, p.bbox, margin) for p in placed):
            continue
        return GroundTruthSign.from_quad(shape, quad, templates=templates)
    raise PlacementExhausted(f"could not place a {shape} sign in {cfg.max_placement_attempts} attempts")


def generate_image(cfg: OracleConfig, index: int, templates: TemplateSet = DEFAULT_TEMPLATES) -> AnnotatedImage:
    rng = make_rng(cfg.rng_seed, index)
    shapes = list(cfg.shapes) or templates.shapes
    n = int(rng.integers(cfg.signs_per_image[0], cfg.signs_per_image[1] + 1))
    signs: list[GroundTruthSign] = []
    for _ in range(n):
        shape = shapes[int(rng.integers(len(shapes)))]
        signs.append(_place_sign(rng, cfg, shape, signs, templates))
    img = AnnotatedImage(float(cfg.image_width), float(cfg.image_height), signs, f"synth-{index:05d}")
    assert prune_unusable(img).usable
    return img


def generate_synthetic_dataset(cfg: OracleConfig, templates: TemplateSet = DEFAULT_TEMPLATES) -> list[AnnotatedImage]:
    """``cfg.scene_count`` images of non-overlapping perspective-warped signs."""
    return [generate_image(cfg, i, templates) for i in range(cfg.scene_count)]


def oracle_grid(signs: list[GroundTruthSign], boxes: DefaultBoxes, sigma_pred: float = 0.0,
                logit_margin: float = 10.0, rng: np.random.Generator | None = None,
                templates: TemplateSet = DEFAULT_TEMPLATES, normalize: bool = True,
                match_iou: float = 0.5) -> PredictionGrid:
    """Prediction grid that decodes to ``signs`` (plus per-corner Gaussian noise).

    One noisy quad is drawn per sign and shared by all of its positive boxes,
    so duplicate detections agree exactly.
    """
    n = len(boxes)
    n_cls = len(templates.class_names)
    logits = np.zeros((n, n_cls))
    logits[:, 0] = logit_margin
    dp = np.zeros((n, 8))
    if not signs:
        return PredictionGrid(logits, dp)
    result = match(boxes, signs, match_iou)
    quads = np.stack([s.template_vertices for s in signs])
    if sigma_pred > 0:
        if rng is None:
            rng = np.random.default_rng()
        quads = quads + sigma_pred * rng.standard_normal(quads.shape)
    pos = np.flatnonzero(result.positive)
    gt_idx = result.assignment[pos]
    cls = np.array([templates.class_index(signs[g].shape) for g in gt_idx], dtype=int)
    logits[pos] = 0.0
    logits[pos, cls] = logit_margin
    dp[pos] = encode_vertices(quads[gt_idx], boxes.cxcywh[pos], normalize)
    return PredictionGrid(logits, dp)


def oracle_predict(dataset: list[AnnotatedImage], spec: GridSpec, sigma_pred: float = 0.0,
                   logit_margin: float = 10.0, seed: int = 0, templates: TemplateSet = DEFAULT_TEMPLATES,
                   normalize: bool = True, match_iou: float = 0.5) -> list[dict]:
    """One prediction record per image: ``{"id", "width", "height", "branch", "grid"}``."""
    boxes = generate_default_boxes(spec)
    out = []
    for i, img in enumerate(dataset):
        grid = oracle_grid(img.signs, boxes, sigma_pred, logit_margin, make_rng(seed, i), templates,
                           normalize, match_iou)
        out.append({"id": img.image_id, "width": img.width, "height": img.height, "branch": "full", "grid": grid})
    return out


def _shift_scale(sign: GroundTruthSign, scale: float, offset) -> GroundTruthSign:
    off = np.asarray(offset, dtype=float)
    return GroundTruthSign(sign.shape, sign.boundary * scale + off, sign.template_vertices * scale + off,
                           sign.difficult)


def oracle_predict_crop_resize(dataset: list[AnnotatedImage], spec: GridSpec, sigma_pred: float = 0.0,
                               logit_margin: float = 10.0, seed: int = 0,
                               templates: TemplateSet = DEFAULT_TEMPLATES, normalize: bool = True,
                               match_iou: float = 0.5) -> list[dict]:
    """Crop-branch and half-resolution-branch grids for each image.

    ``spec`` describes the branch input (W/2 x H/2). Signs fully inside the
    centre window appear in the crop branch; every sign appears, halved, in
    the half-resolution branch.
    """
    boxes = generate_default_boxes(spec)
    out = []
    for i, img in enumerate(dataset):
        win = crop_window(int(img.width), int(img.height))
        crop_signs = []
        for s in img.signs:
            b = bounding_box(s.template_vertices)
            if b.left >= win.left and b.top >= win.top and b.right <= win.right and b.bottom <= win.bottom:
                crop_signs.append(_shift_scale(s, 1.0, (-win.left, -win.top)))
        half_signs = [_shift_scale(s, 0.5, (0.0, 0.0)) for s in img.signs]
        rng = make_rng(seed, i)
        for branch, signs in (("crop", crop_signs), ("half", half_signs)):
            grid = oracle_grid(signs, boxes, sigma_pred, logit_margin, rng, templates, normalize, match_iou)
            out.append({"id": img.image_id, "width": img.width, "height": img.height, "branch": branch, "grid": grid})
    return out
