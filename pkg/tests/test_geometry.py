import math

import pytest
from hypothesis import given, strategies as st

from pflowlab.geometry import (
    GeometryError,
    RoiBox,
    chamfer_iou_distance,
    directed_chamfer_iou,
    in_vicinity,
    iou,
    log_shaping_weight,
    shaping_weight,
)


@st.composite
def boxes(draw):
    x1, x2 = sorted(draw(st.lists(st.integers(0, 1000), min_size=2, max_size=2, unique=True)))
    y1, y2 = sorted(draw(st.lists(st.integers(0, 1000), min_size=2, max_size=2, unique=True)))
    return RoiBox(x1 / 1000, y1 / 1000, x2 / 1000, y2 / 1000)


roi_sets = st.lists(boxes(), min_size=1, max_size=4)


def test_iou_examples():
    a = RoiBox(0, 0, 0.5, 0.5)
    assert iou(a, RoiBox(0, 0, 0.5, 0.5)) == 1.0
    assert iou(RoiBox(0, 0, 0.4, 0.4), RoiBox(0.5, 0.5, 1, 1)) == 0.0
    # inter 0.0625, union 0.4375
    assert iou(a, RoiBox(0.25, 0.25, 0.75, 0.75)) == pytest.approx(1 / 7, abs=1e-15)


def test_touching_edges_have_zero_iou():
    assert iou(RoiBox(0, 0, 0.5, 0.5), RoiBox(0.5, 0, 1, 0.5)) == 0.0


@pytest.mark.parametrize("coords", [(0.5, 0, 0.5, 1), (0, 0.2, 1, 0.1), (-0.1, 0, 1, 1), (0, 0, 1.01, 1)])
def test_degenerate_or_out_of_range_boxes_rejected(coords):
    with pytest.raises(GeometryError):
        RoiBox(*coords)


def test_directed_and_symmetric_examples():
    a1, a2 = RoiBox(0, 0, 0.3, 0.3), RoiBox(0.6, 0.6, 0.9, 0.9)
    assert directed_chamfer_iou([a1], [a1]) == 1.0
    assert directed_chamfer_iou([a1, a2], [a1]) == 0.5
    assert directed_chamfer_iou([a1], [a1, a2]) == 1.0
    assert chamfer_iou_distance([a1, a2], [a1]) == 0.25
    assert chamfer_iou_distance([a1], [a2]) == 1.0


def test_multiset_semantics():
    a1, a2 = RoiBox(0, 0, 0.3, 0.3), RoiBox(0.6, 0.6, 0.9, 0.9)
    # the duplicate counts twice in the directed mean
    assert directed_chamfer_iou([a1, a1, a2], [a1]) == pytest.approx(2 / 3)


def test_empty_sets_are_domain_errors():
    a = RoiBox(0, 0, 1, 1)
    for fn in (directed_chamfer_iou, chamfer_iou_distance):
        with pytest.raises(GeometryError):
            fn([], [a])
        with pytest.raises(GeometryError):
            fn([a], [])


def test_vicinity_boundary_is_inclusive():
    a1, a2 = RoiBox(0, 0, 0.3, 0.3), RoiBox(0.6, 0.6, 0.9, 0.9)
    assert in_vicinity([a1], [a1], 0.0)
    assert not in_vicinity([a1, a2], [a1], 0.2)
    assert in_vicinity([a1, a2], [a1], 0.25)
    with pytest.raises(GeometryError):
        in_vicinity([a1], [a1], 1.5)


def test_shaping_weight_values():
    a1, a2 = RoiBox(0, 0, 0.3, 0.3), RoiBox(0.6, 0.6, 0.9, 0.9)
    assert shaping_weight([], [a1], 0.0, 4.5) == 1.0
    assert shaping_weight([a1], [a1], 0.1, 4.5) == 1.0
    assert shaping_weight([a2], [a1], 0.5, 4.5) == pytest.approx(0.011108996538242306, abs=1e-15)
    assert log_shaping_weight([a2], [a1], 0.5, 4.5) == -4.5
    with pytest.raises(GeometryError):
        shaping_weight([a1], [a1], 0.1, -1.0)


@given(boxes(), boxes())
def test_iou_symmetric_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0


@given(roi_sets, roi_sets)
def test_distance_symmetric_in_unit_interval(A, B):
    d = chamfer_iou_distance(A, B)
    assert d == chamfer_iou_distance(B, A)
    assert 0.0 <= d <= 1.0
    assert chamfer_iou_distance(A, A) == 0.0


@given(roi_sets, roi_sets, st.floats(0, 1), st.floats(0, 1), st.floats(0, 50))
def test_vicinity_nesting_and_two_valued_weight(A, E, e1, e2, lam):
    lo, hi = sorted((e1, e2))
    if in_vicinity(A, E, lo):
        assert in_vicinity(A, E, hi)
    assert shaping_weight(A, E, lo, lam) in (1.0, math.exp(-lam))
