"""Hypothesis strategies and a seeded generator for random flags."""

from __future__ import annotations

from hypothesis import strategies as st

from stquad.flags import AgentLocationFlag, ExpertiseFlag, ExpertLinkFlag
from stquad.simnet import SplitMix64
from stquad.stgeom import BoundingBox, Point, Polygon, Polyline, SpatioTemporalRef, TimeInterval

U64 = st.integers(0, (1 << 64) - 1)
unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)
closed_unit = st.floats(0.0, 1.0, allow_nan=False)

points = st.builds(Point, unit, unit)


@st.composite
def boxes(draw, allow_outside=False):
    coord = st.floats(-0.5, 1.5, allow_nan=False) if allow_outside else unit
    x0, x1 = sorted((draw(coord), draw(coord)))
    y0, y1 = sorted((draw(coord), draw(coord)))
    return BoundingBox(x0, y0, x1, y1)


@st.composite
def intervals(draw):
    a, b = sorted((draw(closed_unit), draw(closed_unit)))
    return TimeInterval(a, b)


geometries = st.one_of(
    points,
    boxes(),
    st.builds(Polygon, st.lists(points, min_size=3, max_size=6).map(tuple)),
    st.builds(Polyline, st.lists(points, min_size=2, max_size=6).map(tuple)),
)

st_refs = st.builds(SpatioTemporalRef, geometries, intervals())
terms = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)


@st.composite
def links(draw):
    owner = draw(U64)
    target = draw(U64.filter(lambda t: t != owner))
    weight = draw(st.floats(0.0, 1.0, exclude_min=True))
    return ExpertLinkFlag(draw(U64), owner, target, draw(st_refs), weight)


flags = st.one_of(
    st.builds(ExpertiseFlag, U64, U64, st_refs, st.frozensets(terms, max_size=16),
              st.integers(1, (1 << 32) - 1)),
    links(),
    st.builds(AgentLocationFlag, U64, U64, points, U64),
)


# -- seeded generator (no hypothesis shrinking, fixed case count) ---------------------

def _coord(rng: SplitMix64) -> float:
    # a third of coordinates land on a dyadic grid so sector edges get exercised
    if rng.randrange(3) == 0:
        return rng.randrange(1 << 8) / (1 << 8)
    return rng.random()


def _ref(rng: SplitMix64) -> SpatioTemporalRef:
    k = rng.randrange(4)
    if k == 0:
        g = Point(_coord(rng), _coord(rng))
    elif k == 1:
        x0, x1 = sorted((_coord(rng), _coord(rng)))
        y0, y1 = sorted((_coord(rng), _coord(rng)))
        g = BoundingBox(x0, y0, x1, y1)
    else:
        n = 3 + rng.randrange(4) if k == 2 else 2 + rng.randrange(4)
        pts = tuple(Point(_coord(rng), _coord(rng)) for _ in range(n))
        g = Polygon(pts) if k == 2 else Polyline(pts)
    a, b = sorted((rng.random(), rng.random()))
    return SpatioTemporalRef(g, TimeInterval(a, b))


def random_flag(rng: SplitMix64):
    kind = rng.randrange(3)
    fid, owner = rng.next_u64(), rng.next_u64()
    if kind == 0:
        n = rng.randrange(17)
        summary = frozenset(f"w{rng.randrange(1000)}é" for _ in range(n))
        return ExpertiseFlag(fid, owner, _ref(rng), summary, 1 + rng.randrange(1 << 20))
    if kind == 1:
        target = rng.next_u64()
        if target == owner:
            target ^= 1
        return ExpertLinkFlag(fid, owner, target, _ref(rng), 1.0 - rng.random())
    return AgentLocationFlag(fid, owner, Point(_coord(rng), _coord(rng)), rng.next_u64())
