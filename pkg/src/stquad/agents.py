"""Information-retrieval agents on top of the overlay.

An agent clusters its items spatially into expertise profiles, publishes one
flag per profile plus its expert links and its location, and answers
questions from other agents. A query runs in two phases: a range lookup in
the index to find candidate agents, then direct questions to the best of
them, which may pass the question on along their own expert links.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dsti import DEFAULT_CAPACITY, MERGE_FRACTION, Peer
from .flags import (
    SUMMARY_K,
    AgentLocationFlag,
    ExpertiseFlag,
    ExpertLinkFlag,
    Flag,
    FlagKind,
    make_flag_id,
)
from .messages import (
    Answer,
    Ask,
    InfoItem,
    IrQuery,
    Kind,
    MessageEnvelope,
    QueryResult,
    RangeQuery,
    ScoredItem,
)
from .stgeom import (
    ALL_TIME,
    MAX_DEPTH,
    BoundingBox,
    Geometry,
    Point,
    SpatioTemporalRef,
    TimeInterval,
    centroid,
    intersection_area,
    intersects,
    time_overlap_fraction,
    union_mbb,
)

LINK_DISCOUNT = 0.5
VICINITY_R = 0.05
DEFAULT_TTL = 2
DEFAULT_FANOUT = 5

ResultItem = ScoredItem

__all__ = [
    "Agent", "AgentNode", "ExpertiseProfile", "InfoItem", "IrQuery", "RankedCandidate",
    "ResultItem", "answer_query", "build_profiles", "cluster_items", "rank_candidates",
    "score_candidate",
]


@dataclass(frozen=True)
class ExpertiseProfile:
    member_items: frozenset[int]
    flag: ExpertiseFlag


@dataclass
class Agent:
    id: int
    location: Point
    items: list[InfoItem] = field(default_factory=list)
    profiles: list[ExpertiseProfile] = field(default_factory=list)
    expert_links: list[ExpertLinkFlag] = field(default_factory=list)
    next_counter: int = 0

    def next_flag_id(self) -> int:
        fid = make_flag_id(self.id, self.next_counter)
        self.next_counter += 1
        return fid


@dataclass(frozen=True)
class RankedCandidate:
    agent: int
    score: float
    source_flag: int


# -- clustering -----------------------------------------------------------------

def cluster_items(items: Sequence[InfoItem], eps: float, min_pts: int
                  ) -> tuple[list[list[InfoItem]], list[InfoItem]]:
    """DBSCAN over item centroids; returns (clusters, noise).

    Seeds are visited in ascending item_id order and neighbourhoods are
    expanded first-in first-out in ascending item_id order, so border points
    go to the first cluster that reaches them.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = sorted(items, key=lambda it: it.item_id)
    xy = [centroid(it.st_ref.geometry) for it in pts]
    eps2 = eps * eps
    grid: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, (x, y) in enumerate(xy):
        grid[(math.floor(x / eps), math.floor(y / eps))].append(i)

    def neighbours(i: int) -> list[int]:
        x, y = xy[i]
        cx, cy = math.floor(x / eps), math.floor(y / eps)
        out = []
        for gx in range(cx - 2, cx + 3):
            for gy in range(cy - 2, cy + 3):
                for j in grid.get((gx, gy), ()):
                    dx, dy = xy[j][0] - x, xy[j][1] - y
                    if dx * dx + dy * dy <= eps2:
                        out.append(j)
        out.sort()
        return out

    NOISE = -1
    labels: list[int | None] = [None] * len(pts)
    n_clusters = 0
    for i in range(len(pts)):
        if labels[i] is not None:
            continue
        nb = neighbours(i)
        if len(nb) < min_pts:
            labels[i] = NOISE
            continue
        c = n_clusters
        n_clusters += 1
        labels[i] = c
        queue = deque(j for j in nb if j != i)
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = c
            if labels[j] is not None:
                continue
            labels[j] = c
            nbj = neighbours(j)
            if len(nbj) >= min_pts:
                queue.extend(nbj)

    clusters: list[list[InfoItem]] = [[] for _ in range(n_clusters)]
    noise = []
    for i, lab in enumerate(labels):
        (noise if lab == NOISE else clusters[lab]).append(pts[i])
    return clusters, noise


def summarize_terms(items: Iterable[InfoItem], k: int = SUMMARY_K) -> frozenset[str]:
    freq = Counter(t for it in items for t in it.terms)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return frozenset(t for t, _ in ranked[:k])


def profile_flag(owner: int, flag_id: int, members: Sequence[InfoItem],
                 summary_k: int = SUMMARY_K) -> ExpertiseFlag:
    mbb = union_mbb([it.st_ref.geometry.mbb for it in members])
    span = TimeInterval(min(it.st_ref.time.start for it in members),
                        max(it.st_ref.time.end for it in members))
    return ExpertiseFlag(flag_id, owner, SpatioTemporalRef(mbb, span),
                         summarize_terms(members, summary_k), len(members))


def build_profiles(agent: Agent, eps: float, min_pts: int,
                   summary_k: int = SUMMARY_K) -> list[ExpertiseProfile]:
    if not agent.items:
        return []
    clusters, noise = cluster_items(agent.items, eps, min_pts)
    groups = clusters + [[it] for it in noise]
    return [ExpertiseProfile(frozenset(it.item_id for it in g),
                             profile_flag(agent.id, agent.next_flag_id(), g, summary_k))
            for g in groups]


# -- scoring ----------------------------------------------------------------------

def _spatial_factor(query_geom: Geometry, target: Geometry) -> float:
    qb, tb = query_geom.mbb, target.mbb
    if qb.area > 0.0 and tb.area > 0.0:
        return intersection_area(qb, tb) / qb.area
    # degenerate extents have no area: fall back to membership
    return 1.0 if intersects(qb, target) else 0.0


def match_score(terms: frozenset[str] | None, ref: SpatioTemporalRef, q: IrQuery) -> float:
    """Term x space x time product; ``terms=None`` makes the term factor neutral."""
    if terms is None or not q.terms:
        j = 1.0
    else:
        union = len(q.terms | terms)
        j = len(q.terms & terms) / union if union else 0.0
    if q.st_ref is None or j == 0.0:
        return j
    s = _spatial_factor(q.st_ref.geometry, ref.geometry)
    if s == 0.0:
        return 0.0
    return j * s * time_overlap_fraction(q.st_ref.time, ref.time)


def score_candidate(flag: ExpertiseFlag, q: IrQuery) -> float:
    return match_score(flag.summary, flag.st_ref, q)


def link_score(link: ExpertLinkFlag, q: IrQuery) -> float:
    """Forwarding preference: space and time only, scaled by the link weight."""
    return match_score(None, link.st_ref, q) * link.weight


def rank_candidates(flags: Iterable[Flag], q: IrQuery, exclude: Iterable[int] = (),
                    link_discount: float = LINK_DISCOUNT) -> list[RankedCandidate]:
    skip = set(exclude)
    best: dict[int, RankedCandidate] = {}
    for f in sorted(flags, key=lambda f: f.flag_id):
        if isinstance(f, ExpertiseFlag):
            who, score = f.owner, score_candidate(f, q)
        elif isinstance(f, ExpertLinkFlag):
            # a link carries no term summary, so it only scores on term-less queries
            who = f.target
            score = match_score(frozenset(), f.st_ref, q) * f.weight * link_discount
        else:
            continue
        if who in skip:
            continue
        cur = best.get(who)
        if cur is None or score > cur.score:
            best[who] = RankedCandidate(who, score, f.flag_id)
    return sorted(best.values(), key=lambda c: (-c.score, c.agent))


def item_score(item: InfoItem, q: IrQuery) -> float:
    return match_score(item.terms, item.st_ref, q)


def answer_query(agent: Agent, q: IrQuery, ttl: int) -> tuple[list[ScoredItem], int | None]:
    """Matching local items, plus the expert-link target to pass the question to."""
    hits = []
    for it in agent.items:
        s = item_score(it, q)
        if s > 0.0:
            hits.append(ScoredItem(it, agent.id, s))
    hits.sort(key=lambda h: (-h.score, h.item.item_id))
    forward = None
    if ttl > 0:
        best = 0.0
        for link in sorted(agent.expert_links, key=lambda f: f.target):
            s = link_score(link, q)
            if s > best:
                best, forward = s, link.target
    return hits, forward


def vicinity_ref(location: Point, radius: float = VICINITY_R) -> SpatioTemporalRef:
    box = BoundingBox(location.x - radius, location.y - radius,
                      location.x + radius, location.y + radius)
    return SpatioTemporalRef(box, ALL_TIME)


# -- agent runtime ---------------------------------------------------------------

@dataclass
class QueryState:
    query_id: int
    query: IrQuery            # with the effective spatio-temporal reference filled in
    fallback: bool
    range_query: RangeQuery
    expected_results: int = 1
    received_results: int = 0
    nodes: list = field(default_factory=list)
    flags: dict[int, Flag] = field(default_factory=dict)
    candidates: list[RankedCandidate] = field(default_factory=list)
    asked: list[int] = field(default_factory=list)
    expected_answers: int = 0
    received_answers: int = 0
    results: dict[int, ScoredItem] = field(default_factory=dict)
    done: bool = False

    def ranked_results(self) -> list[ScoredItem]:
        return sorted(self.results.values(), key=lambda s: (-s.score, s.item.item_id))


class AgentNode(Peer):
    """A peer that is also an IR agent; both roles share one address."""

    def __init__(self, agent: Agent, *, bootstrap: int | None = None,
                 capacity: int = DEFAULT_CAPACITY, merge_fraction: float = MERGE_FRACTION,
                 max_depth: int = MAX_DEPTH, link_discount: float = LINK_DISCOUNT,
                 vicinity_r: float = VICINITY_R):
        super().__init__(agent.id, bootstrap=bootstrap, capacity=capacity,
                         merge_fraction=merge_fraction, max_depth=max_depth)
        self.agent = agent
        self.link_discount = link_discount
        self.vicinity_r = vicinity_r
        self.location_flag: AgentLocationFlag | None = None
        self.published: dict[int, Flag] = {}
        self.queries: dict[int, QueryState] = {}
        self.answered: set[int] = set()
        self.point_results: dict[int, list[QueryResult]] = defaultdict(list)
        self._dispatch.update({
            Kind.QUERY_RESULT: self._on_query_result,
            Kind.ASK: self._on_ask,
            Kind.ANSWER: self._on_answer,
        })

    # -- publishing ---------------------------------------------------------------

    def join(self) -> list[MessageEnvelope]:
        """Insert (or after a move, replace) this agent's location flag."""
        out = []
        cur = self.location_flag
        if cur is not None and cur.location == self.agent.location:
            return [self.insert(cur, Kind.JOIN)]
        if cur is not None:
            out.append(self.delete(cur))
        self.location_flag = AgentLocationFlag(self.agent.next_flag_id(), self.agent.id,
                                               self.agent.location, self.agent.id)
        out.append(self.insert(self.location_flag, Kind.JOIN))
        return out

    def move_to(self, location: Point) -> list[MessageEnvelope]:
        self.agent.location = location
        return self.join()

    def publish_flags(self) -> list[MessageEnvelope]:
        """Insert every profile and link flag plus the location; retract stale flags first."""
        current = [p.flag for p in self.agent.profiles] + list(self.agent.expert_links)
        keep = {f.flag_id for f in current}
        out = [self.delete(f) for fid, f in sorted(self.published.items()) if fid not in keep]
        self.published = {f.flag_id: f for f in current}
        out += [self.insert(f) for f in current]
        out += self.join()
        return out

    # -- querying -----------------------------------------------------------------

    def issue_query(self, q: IrQuery) -> tuple[int, list[MessageEnvelope]]:
        qid = self._next_id()
        fallback = q.st_ref is None
        ref = vicinity_ref(self.agent.location, self.vicinity_r) if fallback else q.st_ref
        eff = IrQuery(q.terms, ref, q.fanout, q.ttl)
        rq = RangeQuery(qid, ref.geometry, ref.time,
                        frozenset({FlagKind.EXPERTISE, FlagKind.EXPERT_LINK}), self.address)
        self.queries[qid] = QueryState(qid, eff, fallback, rq)
        self.answered.add(qid)  # never answer our own question
        return qid, [self.range_query(rq)]

    def _on_query_result(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        res: QueryResult = env.payload
        st = self.queries.get(res.query_id)
        if st is None:
            self.point_results[res.query_id].append(res)
            return []
        st.received_results += 1
        st.expected_results += res.forwarded
        st.nodes.append(res.node_path)
        for f in res.flags:
            st.flags[f.flag_id] = f
        if st.received_results < st.expected_results:
            return []
        return self._start_asking(st)

    def _start_asking(self, st: QueryState) -> list[MessageEnvelope]:
        st.candidates = rank_candidates(st.flags.values(), st.query, exclude=(self.address,),
                                        link_discount=self.link_discount)
        st.asked = [c.agent for c in st.candidates[: st.query.fanout]]
        st.expected_answers = len(st.asked)
        if not st.asked:
            st.done = True
            return []
        ask = Ask(st.query_id, self.address, st.query, st.query.ttl)
        return [self._msg(a, Kind.ASK, (), ask) for a in st.asked]

    def _on_ask(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        ask: Ask = env.payload
        if ask.query_id in self.answered:
            return [self._msg(ask.querier, Kind.ANSWER, (), Answer(ask.query_id, (), 0, True))]
        self.answered.add(ask.query_id)
        hits, fwd = answer_query(self.agent, ask.query, ask.ttl)
        out = [self._msg(ask.querier, Kind.ANSWER, (),
                         Answer(ask.query_id, tuple(hits), int(fwd is not None)))]
        if fwd is not None:
            out.append(self._msg(fwd, Kind.ASK, (),
                                 Ask(ask.query_id, ask.querier, ask.query, ask.ttl - 1)))
        return out

    def _on_answer(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        ans: Answer = env.payload
        st = self.queries[ans.query_id]
        st.received_answers += 1
        st.expected_answers += ans.forwarded
        for s in ans.items:
            cur = st.results.get(s.item.item_id)
            if cur is None or s.score > cur.score:
                st.results[s.item.item_id] = s
        if st.received_answers == st.expected_answers:
            st.done = True
        return []
