"""Peer-to-peer quadtree overlay: per-peer node state machine.

Every peer manages at most one quadtree node. The overlay topology is the
tree itself: a node knows its parent and its materialized children, and a
message addressed to a sector path walks up until the current node's path is
a prefix of the target, then down through materialized children. Quadrants
without an assigned peer are virtual and their content stays with the
parent.

A node that holds more flags than its capacity splits by picking, for each
virtual quadrant, the resident agent with the smallest id among the agent
location flags it already stores. No lookup traffic is needed for this.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .flags import AgentLocationFlag, Flag, FlagKind, Reader, Writer, read_flag, write_flag
from .messages import (
    UNSET_DEPTH,
    Kind,
    LoadReport,
    MergeReclaim,
    MergeReply,
    MessageEnvelope,
    PointRequest,
    QueryMode,
    QueryResult,
    RangeQuery,
    RangeRequest,
    RouteHeader,
    SplitAssign,
    SplitReply,
    Transfer,
    TransferAck,
    FlagRequest,
    InsertAck,
    DeleteAck,
    pack_path,
    unpack_path,
)
from .stgeom import (
    MAX_DEPTH,
    BoundingBox,
    Geometry,
    SectorPath,
    child_sector,
    intersects,
    is_prefix,
    sector_of_path,
    smallest_covering_path,
    time_overlap_fraction,
)

DEFAULT_CAPACITY = 16
MERGE_FRACTION = 0.5


class Route(Enum):
    DELIVER = "deliver"
    TO_PARENT = "parent"
    TO_CHILD = "child"


@dataclass
class NodeState:
    path: SectorPath
    manager: int
    parent: int | None = None
    children: list = field(default_factory=lambda: [None] * 4)
    stored: dict[int, Flag] = field(default_factory=dict)
    capacity: int = DEFAULT_CAPACITY
    # managers of every ancestor, root first; they are never split candidates
    ancestors: tuple[int, ...] = ()

    @property
    def sector(self) -> BoundingBox:
        return sector_of_path(self.path)

    def is_leaf(self) -> bool:
        return all(c is None for c in self.children)


def route_step(node: NodeState, target_path: SectorPath) -> tuple[Route, int | None]:
    if not is_prefix(node.path, target_path):
        assert node.path, "root path is a prefix of every path"
        return Route.TO_PARENT, None
    depth = len(node.path)
    if depth == len(target_path):
        return Route.DELIVER, None
    i = target_path[depth]
    if node.children[i] is not None:
        return Route.TO_CHILD, i
    return Route.DELIVER, None


def _resident_candidates(node: NodeState, exclude: Iterable[int] = (),
                         quadrants: Iterable[int] = range(4)) -> dict[int, AgentLocationFlag | None]:
    banned = set(exclude)
    banned.add(node.manager)
    banned.update(node.ancestors)
    sector = node.sector
    boxes = {i: child_sector(sector, i) for i in quadrants}
    best: dict[int, AgentLocationFlag | None] = {i: None for i in boxes}
    for f in node.stored.values():
        if not isinstance(f, AgentLocationFlag) or f.owner in banned:
            continue
        for i, box in boxes.items():
            if box.contains_point(f.location):
                cur = best[i]
                if cur is None or f.owner < cur.owner:
                    best[i] = f
                break
    return best


def select_child_peers(node: NodeState, exclude: Iterable[int] = (),
                       quadrants: Iterable[int] = range(4)) -> dict[int, int | None]:
    """Smallest-id resident agent per quadrant, from the node's own location flags.

    The node's manager and its ancestors' managers are never chosen.
    """
    return {i: (f.contact if f is not None else None)
            for i, f in _resident_candidates(node, exclude, quadrants).items()}


def range_match(f: Flag, q: RangeQuery) -> bool:
    if f.kind not in q.kind_filter:
        return False
    if not intersects(q.geometry.mbb, f.georef):
        return False
    if f.kind is FlagKind.AGENT_LOCATION:
        return True
    return time_overlap_fraction(q.time, f.time) > 0.0


@dataclass(frozen=True)
class SplitRecord:
    split_id: int
    path: SectorPath
    # quadrant -> (candidate, id of the stored location flag that nominated it)
    assignments: dict[int, tuple[int, int]]


@dataclass(frozen=True)
class RouteSample:
    kind: Kind
    origin: int
    request_id: int
    start_depth: int
    target_depth: int
    delivered_depth: int
    hops: int


@dataclass
class _MergeState:
    merge_id: int
    waiting: set[int]
    children: int = 0


class Peer:
    """Overlay participant. ``handle`` maps one envelope to outgoing envelopes."""

    def __init__(self, address: int, *, bootstrap: int | None = None,
                 capacity: int = DEFAULT_CAPACITY, merge_fraction: float = MERGE_FRACTION,
                 max_depth: int = MAX_DEPTH):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.address = address
        self.entry = address if bootstrap is None else bootstrap
        self.capacity = capacity
        self.merge_fraction = merge_fraction
        self.max_depth = max_depth
        self.node: NodeState | None = None
        self.split_log: list[SplitRecord] = []
        self.merge_log: list[tuple[int, SectorPath, int]] = []
        self.route_log: list[RouteSample] = []
        self._paths: dict[int, SectorPath] = {}
        self._pending_assign: dict[int, tuple[int, int]] = {}
        self._in_transfer: dict[tuple[int, int], tuple[int, ...]] = {}
        self._nacked: set[int] = set()
        self._child_load: dict[int, tuple[int, bool]] = {}
        self._merge: _MergeState | None = None
        self._counter = 0
        self._dispatch = {
            Kind.INSERT: self._on_routed,
            Kind.JOIN: self._on_routed,
            Kind.DELETE: self._on_routed,
            Kind.POINT_QUERY: self._on_routed,
            Kind.RANGE_QUERY: self._on_range,
            Kind.INSERT_ACK: self._on_insert_ack,
            Kind.DELETE_ACK: self._on_delete_ack,
            Kind.SPLIT_ASSIGN: self._on_split_assign,
            Kind.SPLIT_ACK: self._on_split_ack,
            Kind.SPLIT_NACK: self._on_split_nack,
            Kind.TRANSFER: self._on_transfer,
            Kind.TRANSFER_ACK: self._on_transfer_ack,
            Kind.MERGE_RECLAIM: self._on_merge_reclaim,
            Kind.MERGE_ACK: self._on_merge_reply,
            Kind.MERGE_NACK: self._on_merge_reply,
            Kind.LOAD_REPORT: self._on_load_report,
        }

    # -- helpers ---------------------------------------------------------------

    def _next_id(self) -> int:
        self._counter += 1
        return ((self.address << 32) | self._counter) & ((1 << 64) - 1)

    def _msg(self, dst: int, kind: Kind, path: SectorPath, payload) -> MessageEnvelope:
        return MessageEnvelope(self.address, dst, kind, tuple(path), payload)

    def covering_path(self, f: Flag) -> SectorPath:
        return smallest_covering_path(f.georef, self.max_depth)

    def become_root(self) -> None:
        self.node = NodeState((), self.address, capacity=self.capacity)
        self.entry = self.address

    @property
    def manages(self) -> bool:
        return self.node is not None

    def _visible_flags(self) -> Iterable[Flag]:
        hidden = {fid for ids in self._in_transfer.values() for fid in ids}
        for fid in sorted(self.node.stored):
            if fid not in hidden:
                yield self.node.stored[fid]

    def _load(self) -> int:
        moving = sum(len(ids) for ids in self._in_transfer.values())
        return len(self.node.stored) - moving

    def _store(self, f: Flag) -> bool:
        if f.flag_id in self.node.stored:
            return False
        self.node.stored[f.flag_id] = f
        self._paths[f.flag_id] = self.covering_path(f)
        return True

    def _drop(self, fid: int) -> Flag | None:
        self._paths.pop(fid, None)
        return self.node.stored.pop(fid, None)

    # -- client side -------------------------------------------------------------

    def route_request(self, kind: Kind, target_path: SectorPath, payload_factory) -> MessageEnvelope:
        header = RouteHeader(self.address, self._next_id())
        return self._msg(self.entry, kind, target_path, payload_factory(header))

    def insert(self, f: Flag, kind: Kind = Kind.INSERT) -> MessageEnvelope:
        return self.route_request(kind, self.covering_path(f), lambda h: FlagRequest(h, f))

    def delete(self, f: Flag) -> MessageEnvelope:
        return self.route_request(Kind.DELETE, self.covering_path(f), lambda h: FlagRequest(h, f))

    def range_query(self, q: RangeQuery) -> MessageEnvelope:
        target = smallest_covering_path(q.geometry, self.max_depth)
        return self.route_request(Kind.RANGE_QUERY, target, lambda h: RangeRequest(h, q))

    def point_query(self, query_id: int, g: Geometry, kinds=frozenset(FlagKind)) -> MessageEnvelope:
        target = smallest_covering_path(g, self.max_depth)
        return self.route_request(
            Kind.POINT_QUERY, target,
            lambda h: PointRequest(h, query_id, g, frozenset(kinds), self.address))

    # -- dispatch --------------------------------------------------------------

    def handle(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        try:
            fn = self._dispatch[env.kind]
        except KeyError:
            raise ValueError(f"peer {self.address} cannot handle {env.kind.name}") from None
        return fn(env)

    # -- routing -----------------------------------------------------------------

    def _forward(self, env: MessageEnvelope) -> list[MessageEnvelope] | None:
        """One routing step. Returns outgoing messages, or None when delivered here."""
        p = env.payload
        node = self.node
        if node is None:
            if self.entry == self.address:
                raise RuntimeError(f"peer {self.address} has no node and no entry point")
            return [self._msg(self.entry, env.kind, env.target_path, p)]
        h = p.route
        if h.start_depth == UNSET_DEPTH:
            h = dataclasses.replace(h, start_depth=len(node.path))
        decision, i = route_step(node, env.target_path)
        if decision is Route.DELIVER:
            self.route_log.append(RouteSample(
                env.kind, h.origin, h.request_id, h.start_depth,
                len(env.target_path), len(node.path), h.hops))
            env.payload = dataclasses.replace(p, route=h)
            return None
        nxt = node.parent if decision is Route.TO_PARENT else node.children[i]
        fwd = dataclasses.replace(p, route=dataclasses.replace(h, hops=h.hops + 1))
        return [self._msg(nxt, env.kind, env.target_path, fwd)]

    def _on_routed(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        out = self._forward(env)
        if out is not None:
            return out
        if env.kind is Kind.POINT_QUERY:
            return self._answer_point(env.payload)
        if env.kind is Kind.DELETE:
            return self.handle_delete(env.payload)
        return self.handle_insert(env.payload.flag, env.payload.route.origin)

    # -- insert / delete -----------------------------------------------------------

    def handle_insert(self, f: Flag, origin: int) -> list[MessageEnvelope]:
        self._store(f)  # duplicate flag ids are a no-op, the ack is still sent
        out = [self._msg(origin, Kind.INSERT_ACK, (), InsertAck(f.flag_id, self.node.path))]
        out += self.maybe_split()
        return out

    def handle_delete(self, req: FlagRequest) -> list[MessageEnvelope]:
        fid = req.flag.flag_id
        removed = self._drop(fid) is not None
        out = [self._msg(req.route.origin, Kind.DELETE_ACK, (), DeleteAck(fid, removed))]
        if removed:
            out += self._report_load()
            out += self.maybe_merge()
        return out

    def _report_load(self) -> list[MessageEnvelope]:
        node = self.node
        if node.parent is None:
            return []
        rep = LoadReport(node.path[-1], len(node.stored), not node.is_leaf())
        return [self._msg(node.parent, Kind.LOAD_REPORT, node.path[:-1], rep)]

    def _on_insert_ack(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        if self.node is None:
            self.entry = env.src
        return []

    def _on_delete_ack(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        return []

    # -- queries -----------------------------------------------------------------

    def _answer_point(self, req: PointRequest) -> list[MessageEnvelope]:
        hits = tuple(f for f in self._visible_flags()
                     if f.kind in req.kind_filter and intersects(req.geometry.mbb, f.georef))
        res = QueryResult(req.query_id, self.node.path, 0, hits)
        return [self._msg(req.reply_to, Kind.QUERY_RESULT, (), res)]

    def _on_range(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        req: RangeRequest = env.payload
        if req.mode is QueryMode.ROUTE:
            out = self._forward(env)
            if out is not None:
                return out
            return self.handle_range_query(env.payload, up=True, down=True)
        if self.node is None:
            # node vanished by a concurrent merge; answer empty so the querier can finish
            res = QueryResult(req.query.query_id, tuple(env.target_path), 0, ())
            return [self._msg(req.query.reply_to, Kind.QUERY_RESULT, (), res)]
        if req.mode is QueryMode.DOWN:
            return self.handle_range_query(req, up=False, down=True)
        return self.handle_range_query(req, up=True, down=False)

    def handle_range_query(self, req: RangeRequest, *, up: bool, down: bool) -> list[MessageEnvelope]:
        """Answer locally, scatter to intersecting children and/or sweep ancestors."""
        node = self.node
        q = req.query
        out: list[MessageEnvelope] = []
        if down:
            sector = node.sector
            for i, child in enumerate(node.children):
                if child is not None and intersects(child_sector(sector, i), q.geometry):
                    sub = RangeRequest(req.route, q, QueryMode.DOWN)
                    out.append(self._msg(child, Kind.RANGE_QUERY, node.path + (i,), sub))
        if up and node.parent is not None:
            sub = RangeRequest(req.route, q, QueryMode.UP)
            out.append(self._msg(node.parent, Kind.RANGE_QUERY, node.path[:-1], sub))
        hits = tuple(f for f in self._visible_flags() if range_match(f, q))
        res = QueryResult(q.query_id, node.path, len(out), hits)
        out.append(self._msg(q.reply_to, Kind.QUERY_RESULT, (), res))
        return out

    # -- split -------------------------------------------------------------------

    def maybe_split(self) -> list[MessageEnvelope]:
        node = self.node
        if node is None or self._load() <= node.capacity or self._merge is not None:
            return []
        if len(node.path) >= self.max_depth:
            return []
        quads = [i for i in range(4) if node.children[i] is None and i not in self._pending_assign]
        picks = {i: f for i, f in _resident_candidates(node, self._nacked, quads).items()
                 if f is not None}
        if not picks:
            return []
        split_id = self._next_id()
        self.split_log.append(SplitRecord(
            split_id, node.path, {i: (f.contact, f.flag_id) for i, f in picks.items()}))
        out = []
        lineage = node.ancestors + (self.address,)
        for i in sorted(picks):
            cand = picks[i].contact
            self._pending_assign[i] = (split_id, cand)
            child_path = node.path + (i,)
            out.append(self._msg(cand, Kind.SPLIT_ASSIGN, child_path,
                                 SplitAssign(split_id, child_path, self.address, lineage)))
        return out

    def _on_split_assign(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: SplitAssign = env.payload
        reply = SplitReply(p.split_id, p.child_path[-1])
        if self.node is not None:
            return [self._msg(env.src, Kind.SPLIT_NACK, p.child_path[:-1], reply)]
        self.node = NodeState(p.child_path, self.address, parent=p.parent,
                              capacity=self.capacity, ancestors=tuple(p.ancestors))
        self.entry = self.address
        self._nacked.clear()
        self._child_load.clear()
        return [self._msg(env.src, Kind.SPLIT_ACK, p.child_path[:-1], reply)]

    def _on_split_ack(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: SplitReply = env.payload
        node = self.node
        i = p.quadrant
        pending = self._pending_assign.pop(i, None)
        if pending is None or pending[0] != p.split_id:
            raise RuntimeError(f"unexpected SPLIT_ACK {p} at {node.path}")
        node.children[i] = env.src
        depth = len(node.path)
        moving = tuple(node.stored[fid] for fid, path in self._paths.items()
                       if len(path) > depth and path[depth] == i)
        self._in_transfer[(p.split_id, i)] = tuple(f.flag_id for f in moving)
        self._child_load[i] = (len(moving), False)
        child_path = node.path + (i,)
        return [self._msg(env.src, Kind.TRANSFER, child_path, Transfer(p.split_id, i, moving))]

    def _on_split_nack(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: SplitReply = env.payload
        self._pending_assign.pop(p.quadrant, None)
        self._nacked.add(env.src)
        return self.maybe_split()

    def _on_transfer(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: Transfer = env.payload
        for f in p.flags:
            self._store(f)
        node = self.node
        ack = TransferAck(p.split_id, p.quadrant, len(node.stored), not node.is_leaf())
        out = [self._msg(env.src, Kind.TRANSFER_ACK, node.path[:-1], ack)]
        out += self.maybe_split()
        return out

    def _on_transfer_ack(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: TransferAck = env.payload
        for fid in self._in_transfer.pop((p.split_id, p.quadrant), ()):
            self._drop(fid)
        self._child_load[p.quadrant] = (p.stored, p.has_children)
        return []

    # -- merge -------------------------------------------------------------------

    def maybe_merge(self) -> list[MessageEnvelope]:
        node = self.node
        if node is None or self._merge is not None or self._pending_assign or self._in_transfer:
            return []
        mat = [i for i, c in enumerate(node.children) if c is not None]
        if not mat:
            return []
        total = len(node.stored)
        for i in mat:
            load, has_children = self._child_load.get(i, (node.capacity, False))
            if has_children:
                return []
            total += load
        if not total < self.merge_fraction * node.capacity:
            return []
        merge_id = self._next_id()
        self._merge = _MergeState(merge_id, set(mat), len(mat))
        return [self._msg(node.children[i], Kind.MERGE_RECLAIM, node.path + (i,),
                          MergeReclaim(merge_id, i)) for i in mat]

    def _on_merge_reclaim(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: MergeReclaim = env.payload
        node = self.node
        busy = (node is None or not node.is_leaf() or self._pending_assign
                or self._in_transfer or self._merge is not None)
        parent_path = node.path[:-1] if node is not None else ()
        if busy:
            return [self._msg(env.src, Kind.MERGE_NACK, parent_path, MergeReply(p.merge_id, p.quadrant))]
        flags = tuple(node.stored[fid] for fid in sorted(node.stored))
        self.entry = node.parent
        self.node = None
        self._paths.clear()
        self._child_load.clear()
        self._nacked.clear()
        return [self._msg(env.src, Kind.MERGE_ACK, parent_path, MergeReply(p.merge_id, p.quadrant, flags))]

    def _on_merge_reply(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: MergeReply = env.payload
        node = self.node
        st = self._merge
        if st is None or st.merge_id != p.merge_id:
            raise RuntimeError(f"unexpected merge reply {p.merge_id} at peer {self.address}")
        if env.kind is Kind.MERGE_ACK:
            for f in p.flags:
                self._store(f)
            node.children[p.quadrant] = None
            self._child_load.pop(p.quadrant, None)
        else:
            load, _ = self._child_load.get(p.quadrant, (node.capacity, True))
            self._child_load[p.quadrant] = (load, True)
        st.waiting.discard(p.quadrant)
        if st.waiting:
            return []
        self._merge = None
        self.merge_log.append((st.merge_id, node.path, st.children))
        out = self._report_load()
        out += self.maybe_split()
        return out

    def _on_load_report(self, env: MessageEnvelope) -> list[MessageEnvelope]:
        p: LoadReport = env.payload
        if self.node is None or self.node.children[p.quadrant] != env.src:
            return []
        self._child_load[p.quadrant] = (p.stored, p.has_children)
        return self.maybe_merge()


# -- whole-overlay views (used by the harness, snapshots and tests) -----------

def placement(peers: Iterable[Peer]) -> dict[int, SectorPath]:
    """flag_id -> path of the node storing it. Raises if a flag is stored twice."""
    out: dict[int, SectorPath] = {}
    for peer in peers:
        if peer.node is None:
            continue
        for fid in peer.node.stored:
            if fid in out:
                raise AssertionError(f"flag {fid} stored at {out[fid]} and {peer.node.path}")
            out[fid] = peer.node.path
    return out


def check_node_invariants(peer: Peer) -> None:
    node = peer.node
    if node is None:
        return
    depth = len(node.path)
    if (node.parent is None) != (depth == 0):
        raise AssertionError(f"node {node.path}: parent pointer inconsistent with depth")
    for fid, f in node.stored.items():
        cp = peer.covering_path(f)
        if not is_prefix(node.path, cp):
            raise AssertionError(f"flag {fid} at {node.path} but covered by {cp}")
        if len(cp) > depth and node.children[cp[depth]] is not None:
            raise AssertionError(f"flag {fid} at {node.path} belongs to a materialized child")


def write_snapshot(records: Iterable[tuple[SectorPath, Flag]]) -> bytes:
    w = Writer()
    for path, f in records:
        pack_path(w, path)
        write_flag(w, f)
    return w.getvalue()


def read_snapshot(data: bytes) -> list[tuple[SectorPath, Flag]]:
    r = Reader(data)
    out = []
    while not r.at_end():
        path = unpack_path(r)
        out.append((path, read_flag(r)))
    return out


def snapshot_records(peers: Iterable[Peer]) -> list[tuple[SectorPath, Flag]]:
    recs = []
    for peer in peers:
        if peer.node is not None:
            for fid in sorted(peer.node.stored):
                recs.append((peer.node.path, peer.node.stored[fid]))
    recs.sort(key=lambda r: (r[0], r[1].flag_id))
    return recs
