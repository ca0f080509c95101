"""Kleinberg-style expert-link generation over continuous agent positions.

Each agent links to its ``k_local`` nearest neighbours and draws ``q_long``
further targets without replacement with probability proportional to
``d(u, v) ** -alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .flags import ExpertLinkFlag, make_flag_id
from .simnet import rng_stream
from .stgeom import ALL_TIME, BoundingBox, Point, SpatioTemporalRef

# expert links take flag counters from the upper half of each owner's id space
LINK_ID_BASE = 1 << 31


@dataclass(frozen=True)
class SmallWorldConfig:
    k_local: int = 4
    q_long: int = 1
    alpha: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.k_local < 0 or self.q_long < 0 or self.alpha < 0:
            raise ValueError("k_local, q_long and alpha must be non-negative")

    def is_long(self, link: ExpertLinkFlag) -> bool:
        """True for a long-range link made by generate_expert_links under this config."""
        return (link.flag_id & 0xFFFFFFFF) - LINK_ID_BASE >= self.k_local


def _dist(u: Point, v: Point) -> float:
    return math.hypot(u.x - v.x, u.y - v.y)


def link_probability(u: Point, v: Point, alpha: float, candidates: Sequence[Point]) -> float:
    """Probability that a long-range draw from ``u`` lands on ``v``.

    Candidates at distance zero from ``u`` are dropped before normalizing.
    """
    if _dist(u, v) == 0.0:
        return 0.0
    weights = [_dist(u, w) ** -alpha for w in candidates if _dist(u, w) > 0.0]
    return _dist(u, v) ** -alpha / sum(weights)


def _link_ref(p: Point) -> SpatioTemporalRef:
    return SpatioTemporalRef(BoundingBox(p.x, p.y, p.x, p.y), ALL_TIME)


def generate_expert_links(agents: Sequence[tuple[int, Point]], cfg: SmallWorldConfig) -> list[ExpertLinkFlag]:
    if len(agents) < 2:
        raise ValueError("need at least two agents")
    agents = sorted(agents, key=lambda a: a[0])
    ids = np.array([a[0] for a in agents], dtype=np.uint64)
    xs = np.array([a[1].x for a in agents])
    ys = np.array([a[1].y for a in agents])
    n = len(agents)
    links: list[ExpertLinkFlag] = []
    for idx, (owner, loc) in enumerate(agents):
        d = np.hypot(xs - loc.x, ys - loc.y)
        order = np.lexsort((ids, d))
        order = order[order != idx]
        local = [int(j) for j in order[: min(cfg.k_local, n - 1)]]
        chosen = list(local)

        n_long = min(cfg.q_long, n - 1 - len(local))
        if n_long > 0:
            w = np.zeros(n)
            ok = d > 0.0
            w[ok] = d[ok] ** -cfg.alpha
            w[idx] = 0.0
            w[local] = 0.0
            rng = rng_stream(cfg.seed, "smallworld", owner)
            for _ in range(n_long):
                cum = np.cumsum(w)
                total = cum[-1]
                if total <= 0.0:
                    break
                j = int(np.searchsorted(cum, rng.random() * total, side="right"))
                j = min(j, n - 1)
                while w[j] == 0.0:  # guard against landing on a zero-width slot
                    j -= 1
                chosen.append(j)
                w[j] = 0.0

        for k, j in enumerate(chosen):
            target, tloc = agents[j]
            links.append(ExpertLinkFlag(make_flag_id(owner, LINK_ID_BASE + k), owner, target,
                                        _link_ref(tloc)))
    return links


def adjacency(links: Sequence[ExpertLinkFlag]) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {}
    for f in links:
        adj.setdefault(f.owner, []).append(f.target)
    return adj


def greedy_forward(current: int, target_location: Point, links: Mapping[int, Sequence[int]],
                   locations: Mapping[int, Point]) -> int | None:
    """Next hop towards ``target_location``.

    Returns ``current`` at a local minimum (no neighbour strictly closer) and
    ``None`` when ``current`` has no links at all.
    """
    nbrs = links.get(current, ())
    if not nbrs:
        return None
    best = min(nbrs, key=lambda a: (_dist(locations[a], target_location), a))
    if _dist(locations[best], target_location) < _dist(locations[current], target_location):
        return best
    return current


def greedy_route(source: int, target: int, links: Mapping[int, Sequence[int]],
                 locations: Mapping[int, Point], max_hops: int = 10_000) -> tuple[int, bool]:
    """Follow greedy_forward from ``source``; returns (hops, reached target)."""
    goal = locations[target]
    cur, hops = source, 0
    while cur != target and hops < max_hops:
        nxt = greedy_forward(cur, goal, links, locations)
        if nxt is None or nxt == cur:
            return hops, False
        cur = nxt
        hops += 1
    return hops, cur == target


def jittered_grid(n: int, seed: int, jitter: float = 0.4) -> list[tuple[int, Point]]:
    """``n`` agents (ids 1..n) on a square grid with uniform jitter per cell."""
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError("jittered_grid needs a square agent count")
    rng = rng_stream(seed, "grid", n)
    out = []
    for k in range(n):
        i, j = divmod(k, side)
        x = (i + 0.5 + rng.uniform(-jitter, jitter)) / side
        y = (j + 0.5 + rng.uniform(-jitter, jitter)) / side
        out.append((k + 1, Point(x, y)))
    return out


def link_distance_slope(links: Sequence[ExpertLinkFlag], locations: Mapping[int, Point],
                        r_min: float, r_max: float, n_bins: int = 12) -> float:
    """Log-log slope of the per-pair link probability versus distance.

    Link counts per log-spaced distance bin are divided by the number of
    ordered agent pairs in that bin, which removes the 2-D ``r dr`` shell
    growth and the unit-square boundary from the estimate.
    """
    ids = sorted(locations)
    pts = np.array([[locations[a].x, locations[a].y] for a in ids])
    edges = np.geomspace(r_min, r_max, n_bins + 1)

    link_d = np.array([_dist(locations[f.owner], locations[f.target]) for f in links])
    link_counts, _ = np.histogram(link_d, bins=edges)

    pair_counts = np.zeros(n_bins)
    for start in range(0, len(pts), 256):
        block = pts[start:start + 256]
        d = np.hypot(block[:, None, 0] - pts[None, :, 0], block[:, None, 1] - pts[None, :, 1])
        pair_counts += np.histogram(d[d > 0], bins=edges)[0]

    centers = np.sqrt(edges[:-1] * edges[1:])
    ok = (link_counts > 0) & (pair_counts > 0)
    slope, _ = np.polyfit(np.log(centers[ok]), np.log(link_counts[ok] / pair_counts[ok]), 1)
    return float(slope)
