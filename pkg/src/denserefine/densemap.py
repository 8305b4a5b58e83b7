"""Dense proposal maps: ground-truth encoding, decoding and the detection loss.

A map holds a presence probability ``P[i_y, i_x]`` and a four-channel offset
map ``B[i_y, i_x] = (t_y0, t_x0, t_y1, t_x1)`` of one-sided distances from the
location to the box edges, divided by the scale ``(s_y, s_x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .geometry import GridShape

OVERLAP_RULES = ("highest_y0",)


@dataclass(frozen=True)
class DenseProposalMap:
    P: np.ndarray
    B: np.ndarray
    scale: tuple[float, float]

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        if P.ndim != 2 or B.shape != P.shape + (4,):
            raise ValueError(f"P must be HxW and B HxWx4, got {P.shape} and {B.shape}")
        s_y, s_x = (float(v) for v in self.scale)
        if not (s_y > 0 and s_x > 0):
            raise ValueError(f"scale must be positive, got {(s_y, s_x)}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "scale", (s_y, s_x))

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.P.shape)

    def check(self) -> None:
        """Raise ``ValueError`` if the map violates its invariants."""
        if not (np.all(np.isfinite(self.P)) and np.all(np.isfinite(self.B))):
            raise ValueError("map contains non-finite values")
        if self.P.min(initial=0.0) < 0.0 or self.P.max(initial=0.0) > 1.0:
            raise ValueError("P values must lie in [0, 1]")
        if np.any(self.B[self.P > 0] < 0.0):
            raise ValueError("offsets must be nonnegative where P > 0")

    def __eq__(self, other):
        if not isinstance(other, DenseProposalMap):
            return NotImplemented
        return (self.scale == other.scale and np.array_equal(self.P, other.P)
                and np.array_equal(self.B, other.B))


@dataclass(frozen=True)
class EncoderConfig:
    scale: tuple[float, float] | None = None  # None -> (H, W)
    overlap_rule: str = "highest_y0"

    def __post_init__(self):
        if self.scale is not None and not all(s > 0 for s in self.scale):
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.overlap_rule not in OVERLAP_RULES:
            raise ValueError(f"unknown overlap rule {self.overlap_rule!r}")

    def resolve_scale(self, shape: GridShape) -> tuple[float, float]:
        if self.scale is None:
            return float(shape.H), float(shape.W)
        return float(self.scale[0]), float(self.scale[1])


@dataclass(frozen=True)
class GroundTruthScene:
    shape: GridShape
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        object.__setattr__(self, "shape", GridShape(*self.shape))
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if np.any(boxes[:, 2] < boxes[:, 0]) or np.any(boxes[:, 3] < boxes[:, 1]):
            raise ValueError("boxes must satisfy y0 <= y1 and x0 <= x1")
        object.__setattr__(self, "boxes", boxes)


class ActiveSet(NamedTuple):
    indices: np.ndarray  # row-major linear location indices
    boxes: np.ndarray  # (n, 4) global boxes
    scores: np.ndarray  # P at each location


def clip_boxes(boxes: np.ndarray, shape: GridShape) -> np.ndarray:
    """Clip boxes to the grid extent ``[0, H-1] x [0, W-1]``.

    Raises ``ValueError`` for a box lying entirely outside the grid.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    H, W = shape
    outside = (boxes[:, 2] < 0) | (boxes[:, 0] > H - 1) | (boxes[:, 3] < 0) | (boxes[:, 1] > W - 1)
    if np.any(outside):
        raise ValueError(f"box {boxes[np.argmax(outside)].tolist()} lies outside the {H}x{W} grid")
    lo = np.array([0.0, 0.0, 0.0, 0.0])
    hi = np.array([H - 1, W - 1, H - 1, W - 1], dtype=np.float64)
    return np.clip(boxes, lo, hi)


def assign_locations(scene: GroundTruthScene) -> np.ndarray:
    """Index of the box owning each grid location, or -1 where uncovered.

    Among covering boxes the owner has the highest y0, then the highest x0,
    then the earliest position in the input.
    """
    H, W = scene.shape
    owner = np.full((H, W), -1, dtype=np.intp)
    boxes = clip_boxes(scene.boxes, scene.shape)
    # paint lowest priority first so the winner is painted last
    order = sorted(range(len(boxes)), key=lambda k: (boxes[k, 0], boxes[k, 1], -k))
    for k in order:
        y0, x0, y1, x1 = boxes[k]
        ry = slice(int(np.ceil(y0)), int(np.floor(y1)) + 1)
        rx = slice(int(np.ceil(x0)), int(np.floor(x1)) + 1)
        owner[ry, rx] = k
    return owner


def encode_ground_truth(scene: GroundTruthScene, cfg: EncoderConfig | None = None) -> DenseProposalMap:
    """Build the target maps ``(P_hat, B_hat)`` for a set of ground-truth boxes.

    ``B_hat`` is zero at uncovered locations; those entries never enter the
    regression loss.
    """
    cfg = cfg or EncoderConfig()
    H, W = scene.shape
    s_y, s_x = cfg.resolve_scale(scene.shape)
    owner = assign_locations(scene)
    P = (owner >= 0).astype(np.float64)
    B = np.zeros((H, W, 4))
    if len(scene.boxes):
        boxes = clip_boxes(scene.boxes, scene.shape)
        iy, ix = np.nonzero(owner >= 0)
        b = boxes[owner[iy, ix]]
        B[iy, ix, 0] = (iy - b[:, 0]) / s_y
        B[iy, ix, 1] = (ix - b[:, 1]) / s_x
        B[iy, ix, 2] = (b[:, 2] - iy) / s_y
        B[iy, ix, 3] = (b[:, 3] - ix) / s_x
    return DenseProposalMap(P, B, (s_y, s_x))


def decode_to_global(dmap: DenseProposalMap, clamp: bool = False) -> np.ndarray:
    """Convert offsets to global boxes at every location, shape ``(H, W, 4)``."""
    H, W = dmap.shape
    s_y, s_x = dmap.scale
    iy, ix = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    B = dmap.B
    out = np.stack([iy - B[..., 0] * s_y, ix - B[..., 1] * s_x,
                    iy + B[..., 2] * s_y, ix + B[..., 3] * s_x], axis=-1)
    if clamp:
        out = np.clip(out, 0.0, [H - 1, W - 1, H - 1, W - 1])
    return out


def detection_loss(pred: DenseProposalMap, truth: DenseProposalMap, w_reg: float = 10.0) -> float:
    """Binary cross-entropy over all locations plus weighted offset regression on positives."""
    if pred.P.shape != truth.P.shape:
        raise ValueError(f"shape mismatch: {pred.P.shape} vs {truth.P.shape}")
    if pred.scale != truth.scale:
        raise ValueError(f"scale mismatch: {pred.scale} vs {truth.scale}")
    t, p = truth.P, pred.P
    with np.errstate(divide="ignore"):
        ll = xlogy(t, p) + xlogy(1.0 - t, 1.0 - p)
    if not np.all(np.isfinite(ll)):
        raise ValueError("log(0) against a disagreeing label: P must avoid exact 0/1 there")
    cls_term = -ll.mean()
    n_pos = t.sum()
    if n_pos == 0:
        return float(cls_term)
    sq = ((truth.B - pred.B) ** 2).sum(axis=-1)
    reg_term = w_reg * (t * sq).sum() / n_pos
    return float(cls_term + reg_term)


def active_set(dmap: DenseProposalMap, rho: float = 0.2) -> ActiveSet:
    """Locations with ``P > rho`` and their decoded boxes, in row-major order."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    flat_p = dmap.P.ravel()
    idx = np.flatnonzero(flat_p > rho)
    H, W = dmap.shape
    s_y, s_x = dmap.scale
    iy, ix = np.divmod(idx, W)
    b = dmap.B.reshape(-1, 4)[idx]
    boxes = np.stack([iy - b[:, 0] * s_y, ix - b[:, 1] * s_x,
                      iy + b[:, 2] * s_y, ix + b[:, 3] * s_x], axis=-1).reshape(-1, 4)
    return ActiveSet(idx, boxes, flat_p[idx])
