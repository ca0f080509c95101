import math

import pytest
from hypothesis import given, strategies as st

from stquad.stgeom import (
    ALL_TIME,
    MAX_DEPTH,
    ROOT_BOX,
    BoundingBox,
    GeometryError,
    Point,
    Polygon,
    Polyline,
    TimeInterval,
    centroid,
    child_sector,
    covers,
    intersection_area,
    intersects,
    is_prefix,
    normalize_lonlat,
    quadrant_index,
    sector_of_path,
    smallest_covering_path,
    time_overlap_fraction,
    validate_path,
)

from strategies import boxes, geometries, intervals, points

paths = st.lists(st.integers(0, 3), max_size=10).map(tuple)


def test_quadrant_numbering():
    assert quadrant_index(Point(0.1, 0.1), ROOT_BOX) == 0
    assert quadrant_index(Point(0.7, 0.1), ROOT_BOX) == 1
    assert quadrant_index(Point(0.1, 0.7), ROOT_BOX) == 2
    assert quadrant_index(Point(0.7, 0.7), ROOT_BOX) == 3


def test_midline_goes_up_and_right():
    assert quadrant_index(Point(0.5, 0.5), ROOT_BOX) == 3
    assert quadrant_index(Point(0.5, 0.25), ROOT_BOX) == 1


def test_quadrant_index_outside_sector():
    with pytest.raises(GeometryError):
        quadrant_index(Point(0.9, 0.9), BoundingBox(0, 0, 0.5, 0.5))


def test_point_outside_unit_square_rejected():
    with pytest.raises(GeometryError):
        Point(1.0, 0.2)
    with pytest.raises(GeometryError):
        TimeInterval(0.6, 0.4)
    with pytest.raises(GeometryError):
        BoundingBox(0.5, 0, 0.4, 1)
    with pytest.raises(GeometryError):
        Polygon((Point(0, 0), Point(0.1, 0.1)))


def test_sector_of_path_examples():
    assert sector_of_path(()) == ROOT_BOX
    assert sector_of_path((3, 0)) == BoundingBox(0.5, 0.5, 0.75, 0.75)
    with pytest.raises(GeometryError):
        validate_path((0, 4))
    with pytest.raises(GeometryError):
        validate_path((0,) * (MAX_DEPTH + 1))


def test_smallest_covering_path_examples():
    assert smallest_covering_path(BoundingBox(0.1, 0.1, 0.2, 0.2)) == (0, 0)
    # straddles the root midlines
    assert smallest_covering_path(BoundingBox(0.4, 0.4, 0.6, 0.6)) == ()
    p = smallest_covering_path(Point(0.3, 0.3))
    assert len(p) == MAX_DEPTH
    assert smallest_covering_path(Point(0.3, 0.3), 3) == p[:3]
    # outside the unit square maps to the root
    assert smallest_covering_path(BoundingBox(-0.1, 0.2, 0.1, 0.3)) == ()


def test_box_extents_are_half_open_too():
    # [0.1, 0.25) fits in [0, 0.25); a degenerate extent at 0.25 does not
    assert smallest_covering_path(BoundingBox(0.1, 0.1, 0.25, 0.2))[:2] == (0, 0)
    assert smallest_covering_path(BoundingBox(0.1, 0.1, 0.5, 0.2)) == (0,)
    assert smallest_covering_path(BoundingBox(0.25, 0.1, 0.25, 0.2))[:2] == (0, 1)


def test_time_overlap_fraction_examples():
    assert time_overlap_fraction(TimeInterval(0.0, 0.5), TimeInterval(0.25, 1.0)) == 0.5
    assert time_overlap_fraction(TimeInterval(0.2, 0.4), ALL_TIME) == 1.0
    assert time_overlap_fraction(TimeInterval(0.0, 0.2), TimeInterval(0.3, 0.4)) == 0.0
    assert time_overlap_fraction(TimeInterval(0.3, 0.3), TimeInterval(0.3, 0.4)) == 1.0
    assert time_overlap_fraction(TimeInterval(0.5, 0.5), TimeInterval(0.3, 0.4)) == 0.0


def test_degenerate_boxes_intersect_by_membership():
    seg = BoundingBox(0.1, 0.1, 0.11, 0.1)
    assert intersects(BoundingBox(0.0, 0.0, 0.2, 0.2), seg)
    assert not intersects(BoundingBox(0.0, 0.0, 0.1, 0.1), Point(0.1, 0.1))
    assert intersects(BoundingBox(0.1, 0.1, 0.1, 0.1), Point(0.1, 0.1))
    assert intersection_area(BoundingBox(0, 0, 0.2, 0.2), seg) == 0.0


def test_polygon_and_polyline_use_their_mbb():
    poly = Polygon((Point(0.1, 0.1), Point(0.2, 0.1), Point(0.15, 0.2)))
    line = Polyline((Point(0.6, 0.6), Point(0.7, 0.9)))
    assert poly.mbb == BoundingBox(0.1, 0.1, 0.2, 0.2)
    assert centroid(line) == pytest.approx((0.65, 0.75))
    assert covers(sector_of_path((0,)), poly)


def test_normalize_lonlat_clamps():
    assert normalize_lonlat(-180, -90) == Point(0.0, 0.0)
    p = normalize_lonlat(180, 90)
    assert p.x < 1.0 and p.y < 1.0
    assert normalize_lonlat(0, 0) == Point(0.5, 0.5)


@given(paths, paths)
def test_prefix_sector_covers(p, q):
    full = p + q
    assert is_prefix(p, full)
    assert covers(sector_of_path(p), sector_of_path(full).mbb) or sector_of_path(full).area == 0


@given(geometries, st.integers(0, MAX_DEPTH))
def test_covering_path_is_smallest(g, depth):
    path = smallest_covering_path(g, depth)
    sector = sector_of_path(path)
    assert covers(sector, g)
    if len(path) < depth:
        assert not any(covers(child_sector(sector, i), g) for i in range(4))


@given(points, paths)
def test_quadrants_partition_sector(p, path):
    # descend along the point so the sector contains it
    box = ROOT_BOX
    for _ in path:
        box = child_sector(box, quadrant_index(p, box))
    i = quadrant_index(p, box)
    hits = [j for j in range(4) if child_sector(box, j).contains_point(p)]
    assert hits == [i]
    kids = [child_sector(box, j) for j in range(4)]
    assert math.isclose(sum(k.area for k in kids), box.area)


@given(intervals(), intervals())
def test_time_overlap_in_unit_range(a, b):
    assert 0.0 <= time_overlap_fraction(a, b) <= 1.0


@given(boxes(), boxes())
def test_intersects_symmetric(a, b):
    assert intersects(a, b) == intersects(b, a)
