"""Geometry primitives and quadtree sector addressing on the unit square.

Coordinates are normalized: x is longitude mapped to [0, 1), y is latitude
mapped to [0, 1). Sectors are half-open boxes obtained by recursive
quartering of [0, 1)^2 and are addressed by a path of quadrant digits
0=SW, 1=SE, 2=NW, 3=NE.

Extents follow one rule throughout: along an axis where a box has
``lo < hi`` it occupies ``[lo, hi)``; where ``lo == hi`` it is the single
coordinate ``lo``. Points and degenerate boxes therefore behave like the
point sets they describe, and a point on a quartering line belongs to the
upper/right quadrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

MAX_DEPTH = 16

SectorPath = tuple[int, ...]

_ROOT_EPS = 2.0 ** -32


class GeometryError(ValueError):
    """Raised on invalid geometry or a violated geometric precondition."""


@dataclass(frozen=True, slots=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x < 1.0 and 0.0 <= self.y < 1.0):
            raise GeometryError(f"point ({self.x!r}, {self.y!r}) outside [0,1)^2")

    @property
    def mbb(self) -> BoundingBox:
        return BoundingBox(self.x, self.y, self.x, self.y)


@dataclass(frozen=True, slots=True)
class TimeInterval:
    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start <= self.end <= 1.0):
            raise GeometryError(f"bad time interval [{self.start!r}, {self.end!r}]")

    @property
    def length(self) -> float:
        return self.end - self.start


ALL_TIME = TimeInterval(0.0, 1.0)


@dataclass(frozen=True, slots=True)
class BoundingBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box {vals}")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise GeometryError(f"inverted box {vals}")

    @property
    def mbb(self) -> BoundingBox:
        return self

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)

    def contains_point(self, p: Point) -> bool:
        return _covers_1d(self.xmin, self.xmax, p.x, p.x) and _covers_1d(
            self.ymin, self.ymax, p.y, p.y
        )


ROOT_BOX = BoundingBox(0.0, 0.0, 1.0, 1.0)


def _mbb_of(points: Sequence[Point]) -> BoundingBox:
    xs = [p.x for p in points]
    ys = [p.y for p in points]
    return BoundingBox(min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True, slots=True)
class Polygon:
    """Closed ring of at least three vertices. Only its mbb matters for indexing."""

    vertices: tuple[Point, ...]
    mbb: BoundingBox = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "mbb", _mbb_of(self.vertices))


@dataclass(frozen=True, slots=True)
class Polyline:
    vertices: tuple[Point, ...]
    mbb: BoundingBox = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.vertices) < 2:
            raise GeometryError("polyline needs at least 2 vertices")
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "mbb", _mbb_of(self.vertices))


Geometry = Union[Point, BoundingBox, Polygon, Polyline]


@dataclass(frozen=True, slots=True)
class SpatioTemporalRef:
    geometry: Geometry
    time: TimeInterval


# -- extent predicates -------------------------------------------------------

def _covers_1d(slo: float, shi: float, lo: float, hi: float) -> bool:
    # sector [slo, shi) is never degenerate
    if lo == hi:
        return slo <= lo < shi
    return slo <= lo and hi <= shi


def _overlap_1d(alo: float, ahi: float, blo: float, bhi: float) -> bool:
    a_pt = alo == ahi
    b_pt = blo == bhi
    if a_pt and b_pt:
        return alo == blo
    if a_pt:
        return blo <= alo < bhi
    if b_pt:
        return alo <= blo < ahi
    return alo < bhi and blo < ahi


def covers(sector: BoundingBox, g: Geometry) -> bool:
    """True when the half-open ``sector`` fully contains the mbb of ``g``."""
    b = g.mbb
    return _covers_1d(sector.xmin, sector.xmax, b.xmin, b.xmax) and _covers_1d(
        sector.ymin, sector.ymax, b.ymin, b.ymax
    )


def intersects(a: BoundingBox, b: Geometry) -> bool:
    bb = b.mbb
    return _overlap_1d(a.xmin, a.xmax, bb.xmin, bb.xmax) and _overlap_1d(
        a.ymin, a.ymax, bb.ymin, bb.ymax
    )


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def union_mbb(boxes: Sequence[BoundingBox]) -> BoundingBox:
    return BoundingBox(
        min(b.xmin for b in boxes),
        min(b.ymin for b in boxes),
        max(b.xmax for b in boxes),
        max(b.ymax for b in boxes),
    )


def centroid(g: Geometry) -> tuple[float, float]:
    """Center of the geometry's mbb (a point's centroid is the point)."""
    if isinstance(g, Point):
        return (g.x, g.y)
    return g.mbb.center


# -- sector addressing --------------------------------------------------------

def _child_box(box: BoundingBox, quadrant: int) -> BoundingBox:
    xm = (box.xmin + box.xmax) / 2.0
    ym = (box.ymin + box.ymax) / 2.0
    x0, x1 = (xm, box.xmax) if quadrant & 1 else (box.xmin, xm)
    y0, y1 = (ym, box.ymax) if quadrant & 2 else (box.ymin, ym)
    return BoundingBox(x0, y0, x1, y1)


def child_sector(sector: BoundingBox, quadrant: int) -> BoundingBox:
    if quadrant not in (0, 1, 2, 3):
        raise GeometryError(f"bad quadrant {quadrant!r}")
    return _child_box(sector, quadrant)


def validate_path(path: Sequence[int], max_depth: int = MAX_DEPTH) -> SectorPath:
    path = tuple(path)
    if len(path) > max_depth:
        raise GeometryError(f"path longer than {max_depth}")
    for d in path:
        if d not in (0, 1, 2, 3):
            raise GeometryError(f"bad path digit {d!r}")
    return path


def sector_of_path(path: Sequence[int]) -> BoundingBox:
    box = ROOT_BOX
    for d in path:
        box = _child_box(box, d)
    return box


def quadrant_index(p: Point, sector: BoundingBox) -> int:
    if not sector.contains_point(p):
        raise GeometryError(f"{p} not inside sector {sector}")
    xm = (sector.xmin + sector.xmax) / 2.0
    ym = (sector.ymin + sector.ymax) / 2.0
    return 2 * (p.y >= ym) + (p.x >= xm)


def smallest_covering_path(g: Geometry, max_depth: int = MAX_DEPTH) -> SectorPath:
    """Deepest sector path (at most ``max_depth`` long) whose sector covers ``g``.

    Geometries not contained in the unit square map to the root path.
    """
    b = g.mbb
    box = ROOT_BOX
    if not covers(box, b):
        return ()
    path: list[int] = []
    while len(path) < max_depth:
        xm = (box.xmin + box.xmax) / 2.0
        ym = (box.ymin + box.ymax) / 2.0
        q = 2 * (b.ymin >= ym) + (b.xmin >= xm)
        child = _child_box(box, q)
        if not covers(child, b):
            break
        path.append(q)
        box = child
    return tuple(path)


def is_prefix(prefix: Sequence[int], path: Sequence[int]) -> bool:
    n = len(prefix)
    return n <= len(path) and tuple(path[:n]) == tuple(prefix)


def time_overlap_fraction(query: TimeInterval, flag: TimeInterval) -> float:
    qlen = query.end - query.start
    if qlen == 0.0:
        return 1.0 if flag.start <= query.start <= flag.end else 0.0
    inter = min(query.end, flag.end) - max(query.start, flag.start)
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / qlen)


def normalize_lonlat(lon: float, lat: float) -> Point:
    """Map degrees to the unit square, clamped to ``[0, 1 - 2**-32]``."""
    hi = 1.0 - _ROOT_EPS
    x = min(max((lon + 180.0) / 360.0, 0.0), hi)
    y = min(max((lat + 90.0) / 180.0, 0.0), hi)
    return Point(x, y)


def denormalize(x: float, y: float) -> tuple[float, float]:
    return (x * 360.0 - 180.0, y * 180.0 - 90.0)
