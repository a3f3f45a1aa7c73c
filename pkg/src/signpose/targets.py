"""Training targets: IoU matching, hard negative mining and the overall loss.

The loss is evaluated in numpy with analytic gradients so it can be checked
against finite differences; there is no network to backpropagate into.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .anchors import DefaultBoxes, encode_vertices
from .errors import InconsistentShapes
from .geometry import iou_matrix
from .templates import DEFAULT_TEMPLATES, GroundTruthSign, TemplateSet

NEGATIVE = -1
IGNORED = -2


@dataclass
class MatchResult:
    """Per default box: a ground-truth index (positive), NEGATIVE or IGNORED."""

    assignment: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.assignment >= 0

    @property
    def negative(self) -> np.ndarray:
        return self.assignment == NEGATIVE

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())

    @property
    def num_negative(self) -> int:
        return int(self.negative.sum())

    def to_dict(self) -> dict:
        return {
            "assignment": self.assignment.tolist(),
            "num_positive": self.num_positive,
            "num_negative": self.num_negative,
        }

    @classmethod
    def from_dict(cls, d) -> "MatchResult":
        return cls(np.asarray(d["assignment"], dtype=int))


@dataclass
class LossBreakdown:
    shape_loss: float
    vertex_loss: float
    overall: float
    lambda_shape: float
    lambda_vertex: float


def _gt_boxes(ground_truths) -> np.ndarray:
    if len(ground_truths) == 0:
        return np.zeros((0, 4))
    if isinstance(ground_truths, np.ndarray):
        return ground_truths.reshape(-1, 4)
    return np.array([tuple(g.bbox) if isinstance(g, GroundTruthSign) else tuple(g) for g in ground_truths], dtype=float)


def match(default_boxes, ground_truths, iou_threshold: float = 0.5) -> MatchResult:
    """Assign default boxes to ground truths.

    A box is positive for its highest-IoU ground truth when that IoU exceeds
    the threshold. Each ground truth also claims its single best box (lowest
    index on ties), processed in ground-truth order so a later claim wins.
    ``ground_truths`` may be GroundTruthSign objects or ltrb boxes.
    """
    boxes = default_boxes.ltrb() if isinstance(default_boxes, DefaultBoxes) else np.asarray(default_boxes, float)
    gt = _gt_boxes(ground_truths)
    assignment = np.full(len(boxes), NEGATIVE, dtype=int)
    if len(gt) == 0 or len(boxes) == 0:
        return MatchResult(assignment)
    ious = iou_matrix(boxes, gt)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(len(boxes)), best_gt]
    hit = best_iou > iou_threshold
    assignment[hit] = best_gt[hit]
    for g, b in enumerate(ious.argmax(axis=0)):
        assignment[b] = g
    return MatchResult(assignment)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mine_hard_negatives(result: MatchResult, class_logits, neg_pos_ratio: int = 3,
                        min_negatives: int = 8) -> MatchResult:
    """Keep the ``neg_pos_ratio * K_p`` most confident negatives; ignore the rest.

    Confidence is one minus the background probability. With no positives,
    ``neg_pos_ratio * min_negatives`` negatives are kept instead.
    """
    logits = np.asarray(class_logits, dtype=float)
    if len(logits) != len(result.assignment):
        raise InconsistentShapes("one logit vector per default box is required")
    neg_idx = np.flatnonzero(result.negative)
    k_p = result.num_positive
    k_n = neg_pos_ratio * (k_p if k_p > 0 else min_negatives)
    score = 1.0 - softmax(logits[neg_idx])[:, 0]
    # stable sort on the negated score keeps lower box indices first on ties
    order = np.argsort(-score, kind="stable")
    assignment = result.assignment.copy()
    assignment[neg_idx[order[k_n:]]] = IGNORED
    return MatchResult(assignment)


def smooth_l1(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def shape_softmax_ce(logits, label: int) -> float:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def shape_softmax_ce_grad(logits, label: int) -> np.ndarray:
    g = softmax(logits)
    g[label] -= 1.0
    return g


def build_targets(result: MatchResult, default_boxes: DefaultBoxes, ground_truths: Sequence[GroundTruthSign],
                  templates: TemplateSet = DEFAULT_TEMPLATES, normalize: bool = True):
    """Per-box class labels and encoded vertex offsets (zeros for non-positives)."""
    labels = np.zeros(len(result.assignment), dtype=int)
    target_dp = np.zeros((len(result.assignment), 8))
    pos = np.flatnonzero(result.positive)
    for i in pos:
        gt = ground_truths[result.assignment[i]]
        labels[i] = templates.class_index(gt.shape)
    if len(pos):
        quads = np.stack([ground_truths[result.assignment[i]].template_vertices for i in pos])
        target_dp[pos] = encode_vertices(quads, default_boxes.cxcywh[pos], normalize)
    return labels, target_dp


def _check_shapes(result, pred_dp, pred_logits, labels, target_dp):
    n = len(result.assignment)
    if pred_dp.shape != (n, 8) or target_dp.shape != (n, 8):
        raise InconsistentShapes(f"vertex arrays must be ({n}, 8)")
    if pred_logits.ndim != 2 or len(pred_logits) != n or len(labels) != n:
        raise InconsistentShapes(f"expected {n} logit rows and labels")


def overall_loss(result: MatchResult, pred_dp, pred_logits, labels, target_dp,
                 lambda_shape: float = 1.0, lambda_vertex: float = 1.0) -> LossBreakdown:
    """Shape CE averaged over kept positives+negatives plus smooth-L1 vertex
    loss averaged over positives (vertex term is zero without positives)."""
    pred_dp = np.asarray(pred_dp, dtype=float)
    pred_logits = np.asarray(pred_logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    target_dp = np.asarray(target_dp, dtype=float)
    _check_shapes(result, pred_dp, pred_logits, labels, target_dp)

    pos = result.positive
    used = pos | result.negative
    k_p, k_used = int(pos.sum()), int(used.sum())

    shape_loss = 0.0
    if k_used:
        z = pred_logits[used]
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        shape_loss = float(np.sum(lse - z[np.arange(k_used), labels[used]]) / k_used)
    vertex_loss = 0.0
    if k_p:
        vertex_loss = float(smooth_l1(pred_dp[pos] - target_dp[pos]).sum() / k_p)
    return LossBreakdown(
        shape_loss, vertex_loss,
        lambda_shape * shape_loss + lambda_vertex * vertex_loss,
        lambda_shape, lambda_vertex,
    )


def overall_loss_grad(result: MatchResult, pred_dp, pred_logits, labels, target_dp,
                      lambda_shape: float = 1.0, lambda_vertex: float = 1.0):
    """Gradients of ``overall_loss`` w.r.t. (pred_dp, pred_logits)."""
    pred_dp = np.asarray(pred_dp, dtype=float)
    pred_logits = np.asarray(pred_logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    target_dp = np.asarray(target_dp, dtype=float)
    _check_shapes(result, pred_dp, pred_logits, labels, target_dp)

    pos = result.positive
    used = pos | result.negative
    k_p, k_used = int(pos.sum()), int(used.sum())
    g_dp = np.zeros_like(pred_dp)
    g_logits = np.zeros_like(pred_logits)
    if k_used:
        p = softmax(pred_logits[used])
        p[np.arange(k_used), labels[used]] -= 1.0
        g_logits[used] = lambda_shape * p / k_used
    if k_p:
        g_dp[pos] = lambda_vertex * smooth_l1_grad(pred_dp[pos] - target_dp[pos]) / k_p
    return g_dp, g_logits
