"""Detection and action metrics: greedy IoU matching, PR curves, AP, EER, accuracy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import iou_matrix


def greedy_match(det_boxes, det_scores, gt_boxes, iou_thr: float = 0.5) -> np.ndarray:
    """Ground-truth index claimed by each detection (input order), or -1.

    Detections are visited by descending score (stable); each one claims the
    unmatched ground-truth box of highest IoU if that IoU reaches ``iou_thr``.
    """
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError(f"iou_thr must lie in (0, 1], got {iou_thr}")
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    claim = np.full(len(det_boxes), -1, dtype=np.intp)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return claim
    ov = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    for d in np.argsort(-np.asarray(det_scores, dtype=np.float64), kind="stable"):
        cand = np.where(taken, -1.0, ov[d])
        g = int(np.argmax(cand))
        if cand[g] >= iou_thr:
            claim[d] = g
            taken[g] = True
    return claim


def match_to_gt(det_boxes, det_scores, gt_boxes, iou_thr: float = 0.5) -> np.ndarray:
    """TP flags for each detection (input order) under :func:`greedy_match`."""
    return greedy_match(det_boxes, det_scores, gt_boxes, iou_thr) >= 0


@dataclass(frozen=True)
class PrCurve:
    """Score-descending TP/FP ledger with its precision/recall points."""
    scores: np.ndarray
    tp: np.ndarray
    n_gt: int

    @classmethod
    def from_ledger(cls, tp, n_gt: int, scores=None) -> "PrCurve":
        tp = np.asarray(tp, dtype=bool)
        if scores is None:
            scores = np.arange(len(tp), 0, -1, dtype=np.float64)
        scores = np.asarray(scores, dtype=np.float64)
        order = np.argsort(-scores, kind="stable")
        return cls(scores[order], tp[order], int(n_gt))

    @classmethod
    def from_detections(cls, det_boxes, det_scores, gt_boxes, iou_thr: float = 0.5) -> "PrCurve":
        tp = match_to_gt(det_boxes, det_scores, gt_boxes, iou_thr)
        return cls.from_ledger(tp, len(np.asarray(gt_boxes).reshape(-1, 4)), det_scores)

    @classmethod
    def concat(cls, curves) -> "PrCurve":
        """Pool several images' ledgers into one curve."""
        curves = list(curves)
        scores = np.concatenate([c.scores for c in curves]) if curves else np.zeros(0)
        tp = np.concatenate([c.tp for c in curves]) if curves else np.zeros(0, bool)
        return cls.from_ledger(tp, sum(c.n_gt for c in curves), scores)

    @property
    def recall(self) -> np.ndarray:
        if self.n_gt == 0:
            raise ValueError("recall is undefined without ground truth")
        return np.cumsum(self.tp) / self.n_gt

    @property
    def precision(self) -> np.ndarray:
        return np.cumsum(self.tp) / np.arange(1, len(self.tp) + 1)

    @property
    def interpolated_precision(self) -> np.ndarray:
        """Precision envelope: best precision at any equal-or-higher recall."""
        return np.maximum.accumulate(self.precision[::-1])[::-1]

    def points(self) -> list[tuple[float, float, float]]:
        """(score threshold, precision, recall) per ledger entry."""
        return list(zip(self.scores.tolist(), self.precision.tolist(), self.recall.tolist()))


def average_precision(curve: PrCurve) -> float:
    """All-points interpolated area under the precision-recall curve."""
    if curve.n_gt == 0:
        raise ValueError("average precision is undefined without ground truth")
    if len(curve.tp) == 0:
        return 0.0
    recall = curve.recall
    dr = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(dr * curve.interpolated_precision))


def equal_error_rate(curve: PrCurve) -> float:
    """Value where interpolated precision equals recall.

    Walks the ledger from the highest score, starting from an implicit point
    at zero recall, and interpolates linearly between the two ledger points
    that bracket the first crossing. Raises ``ValueError`` if the curve never
    crosses at positive recall.
    """
    if curve.n_gt == 0:
        raise ValueError("EER is undefined without ground truth")
    if len(curve.tp) == 0 or not curve.tp.any():
        raise ValueError("precision and recall never cross: no true positives")
    prec = curve.interpolated_precision
    rec = curve.recall
    prec = np.concatenate([[prec[0]], prec])
    rec = np.concatenate([[0.0], rec])
    gap = prec - rec
    for k in range(1, len(gap)):
        if gap[k] <= 0.0 and rec[k] > 0.0:
            if gap[k] == 0.0:
                return float(rec[k])
            t = gap[k - 1] / (gap[k - 1] - gap[k])
            return float(rec[k - 1] + t * (rec[k] - rec[k - 1]))
    raise ValueError("precision stays above recall: curve never crosses")


def accuracy(pred, true) -> float:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of an empty label set is undefined")
    return float(np.mean(pred == true))


def corner_error(pred_boxes, gt_boxes) -> np.ndarray:
    """Root-mean-square corner deviation (pixels) between paired boxes."""
    d = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4) - np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    return np.sqrt((d ** 2).mean(axis=1))


def localization_errors(det_boxes, det_scores, gt_boxes, iou_thr: float = 0.5) -> np.ndarray:
    """Corner error of the detection matched to each ground-truth box.

    Uses the same greedy matching as the PR ledger; unmatched ground-truth
    boxes get ``nan``.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    out = np.full(len(gt_boxes), np.nan)
    claim = greedy_match(det_boxes, det_scores, gt_boxes, iou_thr)
    hit = claim >= 0
    out[claim[hit]] = corner_error(det_boxes[hit], gt_boxes[claim[hit]])
    return out
