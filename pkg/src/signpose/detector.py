"""Inference post-processing: softmax + vertex decode, NMS, boundary projection,
and merging of the centre-crop / half-resolution detector pair."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .anchors import DefaultBoxes, GridSpec, decode_vertices, generate_default_boxes
from .errors import DegenerateConfiguration, InvalidSpec, MisalignedGrid, PointAtInfinity
from .geometry import AABox, bounding_box, iou
from .targets import softmax
from .templates import DEFAULT_TEMPLATES, TemplateSet, template_vertices_to_boundary

log = logging.getLogger(__name__)


@dataclass
class PredictionGrid:
    logits: np.ndarray  # (n_boxes, n_classes)
    dp: np.ndarray  # (n_boxes, 8)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        self.dp = np.asarray(self.dp, dtype=float)
        if self.logits.ndim != 2 or self.dp.shape != (len(self.logits), 8):
            raise MisalignedGrid("logits must be (n, N) and dp (n, 8)")

    def __len__(self) -> int:
        return len(self.logits)


@dataclass
class Detection:
    shape: str
    score: float
    quad: np.ndarray
    boundary: np.ndarray
    bbox: AABox

    @classmethod
    def from_quad(cls, shape, score, quad, templates: TemplateSet = DEFAULT_TEMPLATES) -> "Detection":
        quad = np.asarray(quad, dtype=float)
        return cls(str(shape), float(score), quad, estimate_boundary(quad, shape, templates), bounding_box(quad))

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "score": self.score,
            "quad": self.quad.tolist(),
            "boundary": self.boundary.tolist(),
            "bbox": list(self.bbox),
        }

    @classmethod
    def from_dict(cls, d) -> "Detection":
        quad = np.asarray(d["quad"], dtype=float)
        boundary = np.asarray(d["boundary"], dtype=float)
        bbox = AABox(*d["bbox"]) if "bbox" in d else bounding_box(quad)
        return cls(str(d["shape"]), float(d["score"]), quad, boundary, bbox)

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0)) -> "Detection":
        off = np.asarray(offset, dtype=float)
        l, t, r, b = self.bbox
        return replace(
            self,
            quad=self.quad * scale + off,
            boundary=self.boundary * scale + off,
            bbox=AABox(l * scale + off[0], t * scale + off[1], r * scale + off[0], b * scale + off[1]),
        )


def estimate_boundary(quad, shape, templates: TemplateSet = DEFAULT_TEMPLATES) -> np.ndarray:
    return template_vertices_to_boundary(quad, shape, templates)


def decode_predictions(grid: PredictionGrid, spec_or_boxes, score_threshold: float = 0.5,
                       templates: TemplateSet = DEFAULT_TEMPLATES, normalize: bool = True) -> list[Detection]:
    """Turn a raw prediction grid into (pre-NMS) detections."""
    boxes = spec_or_boxes
    if isinstance(spec_or_boxes, GridSpec):
        boxes = generate_default_boxes(spec_or_boxes)
    if not isinstance(boxes, DefaultBoxes):
        raise TypeError("expected a GridSpec or DefaultBoxes")
    if len(grid) != len(boxes):
        raise MisalignedGrid(f"grid has {len(grid)} records, spec defines {len(boxes)} boxes")
    n_classes = len(templates.class_names)
    if grid.logits.shape[1] != n_classes:
        raise MisalignedGrid(f"expected {n_classes} logits per box, got {grid.logits.shape[1]}")

    probs = softmax(grid.logits)
    cls = probs[:, 1:].argmax(axis=1) + 1
    score = probs[np.arange(len(probs)), cls]
    keep = np.flatnonzero(score > score_threshold)
    if not len(keep):
        return []
    quads = decode_vertices(grid.dp[keep], boxes.cxcywh[keep], normalize)
    names = templates.class_names
    dets = []
    for i, quad in zip(keep, quads):
        try:
            dets.append(Detection.from_quad(names[cls[i]], score[i], quad, templates))
        except (DegenerateConfiguration, PointAtInfinity):
            log.debug("skipping degenerate quad from box %d", i)
    return dets


def _sort_key(d: Detection):
    return (-d.score, d.bbox.left, d.bbox.top, d.bbox.right, d.bbox.bottom)


def nms(dets, iou_threshold: float = 0.45) -> list[Detection]:
    """Greedy per-class NMS on bounding boxes, highest score first."""
    kept: list[Detection] = []
    by_class: dict[str, list[Detection]] = {}
    for d in sorted(dets, key=_sort_key):
        survivors = by_class.setdefault(d.shape, [])
        if all(iou(d.bbox, k.bbox) <= iou_threshold for k in survivors):
            survivors.append(d)
            kept.append(d)
    return kept


def crop_window(image_w: int, image_h: int) -> AABox:
    """Centred W/2 x H/2 window at native resolution."""
    _check_even(image_w, image_h)
    return AABox(image_w / 4, image_h / 4, 3 * image_w / 4, 3 * image_h / 4)


def crop_resize_pixel_budget(image_w: int, image_h: int) -> dict:
    """Pixels processed by the crop branch, the half-res branch, and in total."""
    _check_even(image_w, image_h)
    crop = (image_w // 2) * (image_h // 2)
    half = (image_w // 2) * (image_h // 2)
    return {"crop": crop, "half": half, "total": crop + half, "full": image_w * image_h}


def _check_even(image_w, image_h):
    if image_w <= 0 or image_h <= 0 or image_w % 2 or image_h % 2:
        raise InvalidSpec("crop-and-resize needs positive, even image dimensions")


def crop_resize_merge(crop_dets, half_dets, image_w: int, image_h: int,
                      iou_threshold: float = 0.45) -> list[Detection]:
    """Map both branches to full-image coordinates and suppress duplicates."""
    win = crop_window(image_w, image_h)
    mapped = [d.transformed(offset=(win.left, win.top)) for d in crop_dets]
    mapped += [d.transformed(scale=2.0) for d in half_dets]
    return nms(mapped, iou_threshold)


def detect(grid: PredictionGrid, boxes, score_threshold: float = 0.5, nms_threshold: float = 0.45,
           templates: TemplateSet = DEFAULT_TEMPLATES, normalize: bool = True) -> list[Detection]:
    return nms(decode_predictions(grid, boxes, score_threshold, templates, normalize), nms_threshold)
