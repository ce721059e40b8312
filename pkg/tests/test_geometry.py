import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from detfuse.geometry import BBox, boxes_array, iou, iou_matrix

from oracles import iou_naive


def test_identical_boxes_overlap_fully():
    b = BBox(0, 0, 10, 10)
    assert iou(b, b) == 1.0


def test_disjoint_boxes_do_not_overlap():
    assert iou(BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)) == 0.0


def test_edge_touching_boxes_do_not_overlap():
    assert iou(BBox(0, 0, 10, 10), BBox(10, 0, 20, 10)) == 0.0


def test_half_overlap_value():
    # intersection 50, union 150
    assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_contained_box():
    assert iou(BBox(0, 0, 10, 10), BBox(2, 2, 4, 4)) == pytest.approx(0.04)


def test_zero_area_union_is_zero():
    a = BBox(5, 5, 5, 5)
    assert iou(a, a) == 0.0


def test_bbox_rejects_inverted_coordinates():
    with pytest.raises(ValueError):
        BBox(10, 0, 0, 10)
    with pytest.raises(ValueError):
        BBox(0, 10, 10, 0)


def test_bbox_rejects_nan():
    with pytest.raises(ValueError):
        BBox(0, 0, math.nan, 10)


def test_bbox_area_and_tuple():
    b = BBox(1, 2, 4, 6)
    assert b.area == 12
    assert b.as_tuple() == (1, 2, 4, 6)


def test_bbox_shifted():
    assert BBox(0, 0, 2, 2).shifted(3, -0.5) == BBox(3, -0.5, 5, 1.5)


def test_boxes_array_layout():
    arr = boxes_array([BBox(0, 1, 2, 3), BBox(4, 5, 6, 7)])
    assert arr.shape == (2, 4)
    assert arr.tolist() == [[0, 1, 2, 3], [4, 5, 6, 7]]


_coords = st.tuples(
    st.floats(0, 100), st.floats(0, 100), st.floats(1, 100), st.floats(1, 100)
).map(lambda t: BBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(_coords, _coords)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0 + 1e-12


@given(_coords, _coords)
def test_iou_agrees_with_naive_route(a, b):
    assert iou(a, b) == pytest.approx(iou_naive(a.as_tuple(), b.as_tuple()), abs=1e-12)


@given(st.lists(_coords, min_size=1, max_size=6), st.lists(_coords, min_size=1, max_size=6))
def test_iou_matrix_matches_scalar(rows, cols):
    mat = iou_matrix(boxes_array(rows), boxes_array(cols))
    assert mat.shape == (len(rows), len(cols))
    expect = np.array([[iou(a, b) for b in cols] for a in rows])
    assert np.allclose(mat, expect, atol=1e-12)
