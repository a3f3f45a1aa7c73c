"""Detection metrics: greedy matching, AP / mAP over IoU thresholds, and AVE."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detector import Detection, _sort_key
from .geometry import bounding_box, box_corners, iou
from .templates import GroundTruthSign

TP, FP, IGNORE = "tp", "fp", "ignore"
DEFAULT_SHAPES = ("rectangle", "diamond", "octagon")


def default_thresholds() -> list[float]:
    return [round(0.5 + 0.05 * i, 2) for i in range(10)]


@dataclass
class EvalConfig:
    iou_thresholds: list[float] = field(default_factory=default_thresholds)
    min_side_px: float = 0.0
    ave_match_iou: float = 0.5
    reference_width: float = 1280.0
    shapes: tuple[str, ...] = DEFAULT_SHAPES

    def __post_init__(self):
        if any(not 0 < t < 1 for t in self.iou_thresholds) or not 0 < self.ave_match_iou < 1:
            raise ValueError("IoU thresholds must lie in (0, 1)")


@dataclass
class ImageMatch:
    labels: list[str]  # per detection, in score order
    dets: list[Detection]  # score-sorted
    pairs: list[tuple[Detection, GroundTruthSign]]
    n_gt: dict[str, int]
    fn: int


def is_counted(gt: GroundTruthSign, image_width: float | None, cfg: EvalConfig) -> bool:
    """Difficult signs and signs below the minimum side are not evaluated."""
    if gt.difficult:
        return False
    if cfg.min_side_px > 0:
        box = gt.bbox
        scale = cfg.reference_width / image_width if image_width else 1.0
        if min(box.width, box.height) * scale < cfg.min_side_px:
            return False
    return True


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruthSign], iou_t: float,
                     cfg: EvalConfig | None = None, image_width: float | None = None) -> ImageMatch:
    """Greedy matching in score order.

    Each detection takes the unmatched same-class ground truth of highest IoU
    when that IoU reaches ``iou_t``. A detection landing on a non-counted
    ground truth is neither TP nor FP.
    """
    cfg = cfg or EvalConfig()
    dets = sorted(dets, key=_sort_key)
    counted = [is_counted(g, image_width, cfg) for g in gts]
    taken = [False] * len(gts)
    labels, pairs = [], []
    for d in dets:
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if taken[j] or g.shape != d.shape:
                continue
            v = iou(d.bbox, g.bbox)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= iou_t:
            taken[best] = True
            if counted[best]:
                labels.append(TP)
                pairs.append((d, gts[best]))
            else:
                labels.append(IGNORE)
        else:
            labels.append(FP)
    n_gt: dict[str, int] = {}
    for g, c in zip(gts, counted):
        if c:
            n_gt[g.shape] = n_gt.get(g.shape, 0) + 1
    fn = sum(1 for j, c in enumerate(counted) if c and not taken[j])
    return ImageMatch(labels, dets, pairs, n_gt, fn)


def average_precision(labels: Sequence[str], n_gt: int) -> float | None:
    """All-point interpolated AP from score-ordered TP/FP labels.

    Ignored detections are dropped. Returns None when there is neither a
    ground truth nor a detection.
    """
    labels = [lab for lab in labels if lab != IGNORE]
    if n_gt == 0:
        return None if not labels else 0.0
    if not labels:
        return 0.0
    tp = np.cumsum([lab == TP for lab in labels], dtype=float)
    fp = np.cumsum([lab == FP for lab in labels], dtype=float)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def vertex_error(estimate, truth) -> float:
    e = np.asarray(estimate, dtype=float)
    g = np.asarray(truth, dtype=float)
    if e.shape != g.shape:
        raise ValueError(f"corner sets differ in shape: {e.shape} vs {g.shape}")
    return float(np.mean(np.linalg.norm(e - g, axis=1)))


def average_vertex_error(pairs, mode: str = "boundary") -> float | None:
    """Mean per-pair vertex error over matched (detection, ground truth) pairs.

    ``boundary`` compares boundary corners; ``bbox_corners`` compares the
    ground-truth template vertices with the TL/TR/BR/BL corners of the
    detection's circumscribed rectangle.
    """
    if not pairs:
        return None
    errs = []
    for det, gt in pairs:
        if mode == "boundary":
            errs.append(vertex_error(det.boundary, gt.boundary))
        elif mode == "bbox_corners":
            errs.append(vertex_error(box_corners(bounding_box(det.quad)), gt.template_vertices))
        else:
            raise ValueError(f"unknown AVE mode {mode!r}")
    return float(np.mean(errs))


def _collect(images, iou_t, cfg):
    """Pool score-ordered labels per shape over all images."""
    per_shape: dict[str, list[tuple[float, int, int, str]]] = {}
    n_gt: dict[str, int] = {}
    pairs = []
    for img_idx, (dets, gts, width) in enumerate(images):
        m = match_detections(dets, gts, iou_t, cfg, width)
        for rank, (d, lab) in enumerate(zip(m.dets, m.labels)):
            per_shape.setdefault(d.shape, []).append((-d.score, img_idx, rank, lab))
        for s, n in m.n_gt.items():
            n_gt[s] = n_gt.get(s, 0) + n
        pairs += m.pairs
    for s in per_shape:
        per_shape[s].sort()
    return per_shape, n_gt, pairs


def _normalise_images(images):
    out = []
    for item in images:
        if len(item) == 2:
            dets, gts = item
            width = None
        else:
            dets, gts, width = item
        out.append((list(dets), list(gts), width))
    return out


def map_at(images, iou_t: float, cfg: EvalConfig | None = None) -> tuple[float | None, dict[str, float | None]]:
    cfg = cfg or EvalConfig()
    per_shape, n_gt, _ = _collect(_normalise_images(images), iou_t, cfg)
    aps = {}
    for s in cfg.shapes:
        labels = [row[-1] for row in per_shape.get(s, [])]
        aps[s] = average_precision(labels, n_gt.get(s, 0))
    present = [aps[s] for s in cfg.shapes if n_gt.get(s, 0) > 0]
    return (float(np.mean(present)) if present else None), aps


def map_vs_iou_sweep(images, cfg: EvalConfig | None = None) -> list[dict]:
    """One row per IoU threshold: ``{"iou", "mAP", "ap_<shape>"...}``."""
    cfg = cfg or EvalConfig()
    images = _normalise_images(images)
    rows = []
    for t in cfg.iou_thresholds:
        m, aps = map_at(images, t, cfg)
        row = {"iou": t, "mAP": m}
        row.update({f"ap_{s}": aps[s] for s in cfg.shapes})
        rows.append(row)
    return rows


def sweep_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()


def evaluate(images, cfg: EvalConfig | None = None) -> dict:
    """Full report: per-shape precision/recall/AP/AVE and mAP per IoU.

    ``images`` is an iterable of ``(detections, ground_truths[, image_width])``.
    """
    cfg = cfg or EvalConfig()
    images = _normalise_images(images)
    per_shape, n_gt, pairs = _collect(images, cfg.ave_match_iou, cfg)
    shapes = {}
    for s in cfg.shapes:
        labels = [row[-1] for row in per_shape.get(s, [])]
        tp = labels.count(TP)
        fp = labels.count(FP)
        n = n_gt.get(s, 0)
        shapes[s] = {
            "n_gt": n,
            "tp": tp,
            "fp": fp,
            "fn": n - tp,
            "precision": tp / (tp + fp) if tp + fp else None,
            "recall": tp / n if n else None,
            "ap": {},
            "ave": average_vertex_error([p for p in pairs if p[1].shape == s]),
        }
    sweep = map_vs_iou_sweep(images, cfg)
    for row in sweep:
        for s in cfg.shapes:
            shapes[s]["ap"][f"{row['iou']:.2f}"] = row[f"ap_{s}"]
    return {
        "shapes": shapes,
        "mAP": {f"{row['iou']:.2f}": row["mAP"] for row in sweep},
        "ave": average_vertex_error(pairs),
        "ave_bbox_corners": average_vertex_error(pairs, "bbox_corners"),
        "matched_pairs": [
            {"shape": d.shape, "score": d.score, "det_boundary": d.boundary.tolist(), "gt_boundary": g.boundary.tolist()}
            for d, g in pairs
        ],
    }
