import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denserefine.geometry import BoundingBox, GridShape, bilinear_resize, iou, iou_matrix, roi_extract


def _scalar_bilinear(src, y, x):
    H, W = src.shape[:2]
    y = min(max(y, 0.0), H - 1)
    x = min(max(x, 0.0), W - 1)
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
    dy, dx = y - y0, x - x0
    return ((1 - dy) * (1 - dx) * src[y0, x0] + (1 - dy) * dx * src[y0, x1]
            + dy * (1 - dx) * src[y1, x0] + dy * dx * src[y1, x1])


coord = st.floats(-50, 50, allow_nan=False)


@st.composite
def boxes(draw, positive=False):
    y0, x0 = draw(coord), draw(coord)
    lo = 0.01 if positive else 0.0
    h, w = draw(st.floats(lo, 40)), draw(st.floats(lo, 40))
    return (y0, x0, y0 + h, x0 + w)


class TestIou:
    def test_identical(self):
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0

    def test_partial_overlap(self):
        # inter 8*10 = 80, union 200 - 80
        assert iou((0, 0, 10, 10), (0, 2, 10, 12)) == pytest.approx(80 / 120, abs=1e-15)

    def test_degenerate_is_zero(self):
        assert iou((0, 0, 0, 10), (0, 0, 10, 10)) == 0.0
        assert iou((3, 3, 3, 3), (3, 3, 3, 3)) == 0.0

    def test_touching_edges(self):
        assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(boxes(positive=True))
    def test_self_iou_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0)

    def test_matrix_matches_scalar(self, rng):
        a = rng.uniform(0, 20, (7, 2))
        a = np.column_stack([a, a + rng.uniform(0, 10, (7, 2))])
        b = rng.uniform(0, 20, (5, 2))
        b = np.column_stack([b, b + rng.uniform(0, 10, (5, 2))])
        m = iou_matrix(a, b)
        expected = [[iou(x, y) for y in b] for x in a]
        np.testing.assert_allclose(m, expected, atol=1e-15)


class TestBilinearResize:
    def test_constant(self):
        out = bilinear_resize(np.full((4, 6, 2), 3.5), (7, 3))
        assert out.shape == (7, 3, 2)
        np.testing.assert_allclose(out, 3.5)

    def test_identity(self, rng):
        src = rng.normal(size=(5, 4, 3))
        np.testing.assert_array_equal(bilinear_resize(src, (5, 4)), src)

    def test_two_by_one_upsample(self):
        out = bilinear_resize(np.array([[0.0], [1.0]]), (3, 1))
        np.testing.assert_allclose(out[:, 0], [0.0, 0.5, 1.0])

    def test_matches_scalar_oracle(self, rng):
        src = rng.normal(size=(4, 5))
        out = bilinear_resize(src, (7, 9))
        for i in range(7):
            for j in range(9):
                y, x = i * 3 / 6, j * 4 / 8
                assert out[i, j] == pytest.approx(_scalar_bilinear(src, y, x), abs=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            bilinear_resize(np.zeros((0, 3)), (2, 2))

    def test_linearity(self, rng):
        for _ in range(20):
            a, b = rng.normal(size=(2, 6, 5, 2))
            s, t = rng.normal(size=2)
            shape = tuple(rng.integers(1, 9, 2))
            np.testing.assert_allclose(bilinear_resize(s * a + t * b, shape),
                                       s * bilinear_resize(a, shape) + t * bilinear_resize(b, shape),
                                       atol=1e-12)


class TestRoiExtract:
    def test_constant(self):
        out = roi_extract(np.full((6, 6, 3), -2.0), (1.2, 0.5, 4.7, 3.3), 4)
        assert out.shape == (4, 4, 3)
        np.testing.assert_allclose(out, -2.0)

    def test_full_map_identity(self, rng):
        src = rng.normal(size=(5, 5, 2))
        np.testing.assert_allclose(roi_extract(src, (0, 0, 4, 4), 5), src, atol=1e-15)

    def test_center_sample(self):
        src = np.array([[0.0, 1.0], [2.0, 3.0]])
        out = roi_extract(src, (0, 0, 1, 1), 3)
        assert out[1, 1] == pytest.approx(1.5)

    def test_matches_scalar_oracle(self, rng):
        src = rng.normal(size=(8, 9))
        box = (1.3, 2.1, 6.4, 7.9)
        out = roi_extract(src, box, 4)
        for i in range(4):
            for j in range(4):
                y = box[0] + i * (box[2] - box[0]) / 3
                x = box[1] + j * (box[3] - box[1]) / 3
                assert out[i, j] == pytest.approx(_scalar_bilinear(src, y, x), abs=1e-12)

    def test_out_of_bounds_clamps(self):
        src = np.arange(9.0).reshape(3, 3)
        out = roi_extract(src, (-5, -5, -1, -1), 2)
        np.testing.assert_allclose(out, 0.0)

    @pytest.mark.parametrize("box", [(1, 1, 1, 3), (0, 2, 3, 2), (2, 2, 1, 3)])
    def test_rejects_degenerate(self, box):
        with pytest.raises(ValueError):
            roi_extract(np.zeros((4, 4)), box, 3)

    def test_linearity_and_range(self, rng):
        for _ in range(50):
            a, b = rng.normal(size=(2, 7, 6, 2))
            s, t = rng.normal(size=2)
            y0, x0 = rng.uniform(-2, 5, 2)
            box = (y0, x0, y0 + rng.uniform(0.5, 6), x0 + rng.uniform(0.5, 6))
            K = int(rng.integers(1, 6))
            np.testing.assert_allclose(roi_extract(s * a + t * b, box, K),
                                       s * roi_extract(a, box, K) + t * roi_extract(b, box, K), atol=1e-12)
            out = roi_extract(a, box, K)
            assert out.min() >= a.min() - 1e-12 and out.max() <= a.max() + 1e-12


def test_grid_shape_bijection():
    g = GridShape(3, 5)
    idx = np.arange(g.size)
    iy, ix = g.unravel(idx)
    np.testing.assert_array_equal(g.ravel(iy, ix), idx)
    assert len(set(zip(iy.tolist(), ix.tolist()))) == g.size


def test_bounding_box_helpers():
    b = BoundingBox(1, 2, 4, 6)
    assert b.area == 12 and b.is_valid()
    assert not BoundingBox(4, 2, 1, 6).is_valid()
