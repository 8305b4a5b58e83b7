"""Box, grid and bilinear-sampling primitives.

Boxes are stored as ``(y0, x0, y1, x1)``. Pixel centres sit on integer
coordinates, so a map of shape ``(H, W)`` spans ``[0, H-1] x [0, W-1]``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class BoundingBox(NamedTuple):
    y0: float
    x0: float
    y1: float
    x1: float

    @property
    def area(self) -> float:
        return max(self.y1 - self.y0, 0.0) * max(self.x1 - self.x0, 0.0)

    def is_valid(self) -> bool:
        return self.y0 <= self.y1 and self.x0 <= self.x1

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


class GridShape(NamedTuple):
    H: int
    W: int

    @property
    def size(self) -> int:
        return self.H * self.W

    def unravel(self, index):
        """Linear index -> (i_y, i_x)."""
        return np.divmod(index, self.W)

    def ravel(self, iy, ix):
        return np.asarray(iy) * self.W + np.asarray(ix)


def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 for disjoint or zero-area input."""
    ay0, ax0, ay1, ax1 = (float(v) for v in a)
    by0, bx0, by1, bx1 = (float(v) for v in b)
    area_a = (ay1 - ay0) * (ax1 - ax0)
    area_b = (by1 - by0) * (bx1 - bx0)
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    ih = min(ay1, by1) - max(ay0, by0)
    iw = min(ax1, bx1) - max(ax0, bx0)
    if ih <= 0.0 or iw <= 0.0:
        return 0.0
    inter = ih * iw
    return inter / (area_a + area_b - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` box arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    ih = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iw = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ih, 0.0, None) * np.clip(iw, 0.0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    valid = (area_a[:, None] > 0) & (area_b[None, :] > 0) & (inter > 0)
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=valid)
    return out


def _as_hwd(src) -> tuple[np.ndarray, bool]:
    arr = np.asarray(src, dtype=np.float64)
    if arr.ndim == 2:
        return arr[:, :, None], True
    if arr.ndim != 3:
        raise ValueError(f"feature map must be HxW or HxWxD, got shape {arr.shape}")
    return arr, False


def sample_bilinear(src: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample an ``HxWxD`` map on the outer-product grid ``ys x xs``.

    Coordinates outside the map are clamped to the border.
    """
    H, W = src.shape[:2]
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, H - 1)
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, W - 1)
    y_lo = np.floor(ys).astype(np.intp)
    x_lo = np.floor(xs).astype(np.intp)
    y_hi = np.minimum(y_lo + 1, H - 1)
    x_hi = np.minimum(x_lo + 1, W - 1)
    wy = (ys - y_lo)[:, None, None]
    wx = (xs - x_lo)[None, :, None]
    top = src[y_lo][:, x_lo] * (1.0 - wx) + src[y_lo][:, x_hi] * wx
    bottom = src[y_hi][:, x_lo] * (1.0 - wx) + src[y_hi][:, x_hi] * wx
    return top * (1.0 - wy) + bottom * wy


def _aligned_coords(n_in: int, n_out: int) -> np.ndarray:
    # corner-aligned: first and last samples land on the source corners
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.linspace(0.0, n_in - 1, n_out)


def bilinear_resize(src, out_shape) -> np.ndarray:
    """Resize a feature map to ``out_shape = (H, W)`` with corner-aligned bilinear sampling."""
    arr, squeeze = _as_hwd(src)
    if arr.size == 0:
        raise ValueError("cannot resize an empty feature map")
    Ho, Wo = (int(v) for v in out_shape)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"output shape must be positive, got {(Ho, Wo)}")
    out = sample_bilinear(arr, _aligned_coords(arr.shape[0], Ho), _aligned_coords(arr.shape[1], Wo))
    return out[:, :, 0] if squeeze else out


def roi_extract(src, box, K: int) -> np.ndarray:
    """Bilinearly sample a ``KxK`` grid spanning ``box`` (source pixel coordinates).

    Returns ``KxKxD`` (or ``KxK`` for a 2-D source). Raises ``ValueError`` for
    zero-area boxes.
    """
    arr, squeeze = _as_hwd(src)
    if arr.size == 0:
        raise ValueError("cannot sample an empty feature map")
    if K < 1:
        raise ValueError("K must be >= 1")
    y0, x0, y1, x1 = (float(v) for v in box)
    if not (y1 > y0 and x1 > x0):
        raise ValueError(f"degenerate box {tuple(box)}")
    if K == 1:
        ys, xs = np.array([(y0 + y1) / 2]), np.array([(x0 + x1) / 2])
    else:
        ys, xs = np.linspace(y0, y1, K), np.linspace(x0, x1, K)
    out = sample_bilinear(arr, ys, xs)
    return out[:, :, 0] if squeeze else out
