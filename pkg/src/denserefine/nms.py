"""Greedy non-maxima suppression baseline over the same active set."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .geometry import iou_matrix


class ScoredBox(NamedTuple):
    box: tuple
    score: float


def greedy_nms_indices(boxes, scores, iou_threshold: float = 0.5) -> list[int]:
    """Indices kept by greedy NMS, in kept order.

    Candidates are visited by descending score (stable, so ties keep input
    order); each kept box suppresses the rest with IoU strictly above the
    threshold.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        if rest.size == 0:
            break
        ov = iou_matrix(boxes[i], boxes[rest])[0]
        order = rest[ov <= iou_threshold]
    return keep


def greedy_nms(candidates, iou_threshold: float = 0.5) -> list[ScoredBox]:
    candidates = [ScoredBox(tuple(float(v) for v in c[0]), float(c[1])) for c in candidates]
    if not candidates:
        return []
    keep = greedy_nms_indices([c.box for c in candidates], [c.score for c in candidates], iou_threshold)
    return [candidates[i] for i in keep]
