"""Overlay message envelope, payload records and wire codec.

Envelope header layout (little-endian)::

    seq:u64 kind:u8 path_len:u8 packed_digits src:u64 dst:u64 payload_len:u32 payload

Path digits are packed four per byte, digit ``i`` in bits ``2*(i%4)`` of byte
``i//4``. Absent addresses are encoded as ``2**64 - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from .flags import (
    U64_MAX,
    Flag,
    FlagKind,
    MalformedFlagError,
    Reader,
    Writer,
    read_flag,
    read_geometry,
    read_st_ref,
    write_flag,
    write_geometry,
    write_st_ref,
)
from .stgeom import Geometry, GeometryError, SectorPath, SpatioTemporalRef, TimeInterval

NO_ADDRESS = U64_MAX
UNSET_DEPTH = 0xFF


class MalformedMessageError(MalformedFlagError):
    pass


class Kind(IntEnum):
    INSERT = 1
    INSERT_ACK = 2
    POINT_QUERY = 3
    RANGE_QUERY = 4
    QUERY_RESULT = 5
    SPLIT_ASSIGN = 6
    SPLIT_ACK = 7
    TRANSFER = 8
    TRANSFER_ACK = 9
    MERGE_RECLAIM = 10
    MERGE_ACK = 11
    JOIN = 12
    SPLIT_NACK = 13
    MERGE_NACK = 14
    DELETE = 15
    DELETE_ACK = 16
    LOAD_REPORT = 17
    ASK = 18
    ANSWER = 19


ROUTED_KINDS = frozenset({Kind.INSERT, Kind.JOIN, Kind.DELETE, Kind.POINT_QUERY, Kind.RANGE_QUERY})
SPLIT_KINDS = frozenset({Kind.SPLIT_ASSIGN, Kind.SPLIT_ACK, Kind.SPLIT_NACK, Kind.TRANSFER, Kind.TRANSFER_ACK})
MERGE_KINDS = frozenset({Kind.MERGE_RECLAIM, Kind.MERGE_ACK, Kind.MERGE_NACK})


@dataclass(slots=True)
class MessageEnvelope:
    src: int
    dst: int
    kind: Kind
    target_path: SectorPath
    payload: object
    seq: int = 0


# -- payloads ------------------------------------------------------------------

@dataclass(slots=True)
class RouteHeader:
    """Per-request routing bookkeeping carried by routed messages.

    ``start_depth`` is the depth of the first node that routed the request
    (UNSET_DEPTH while the request is still being injected); ``hops`` counts
    node-to-node forwards after that.
    """

    origin: int
    request_id: int
    hops: int = 0
    start_depth: int = UNSET_DEPTH


@dataclass(slots=True)
class FlagRequest:
    """INSERT, JOIN and DELETE payload."""

    route: RouteHeader
    flag: Flag


@dataclass(frozen=True, slots=True)
class InsertAck:
    flag_id: int
    node_path: SectorPath


@dataclass(frozen=True, slots=True)
class DeleteAck:
    flag_id: int
    found: bool


@dataclass(frozen=True, slots=True)
class RangeQuery:
    query_id: int
    geometry: Geometry
    time: TimeInterval
    kind_filter: frozenset[FlagKind]
    reply_to: int


class QueryMode(IntEnum):
    ROUTE = 0
    DOWN = 1
    UP = 2


@dataclass(slots=True)
class RangeRequest:
    route: RouteHeader
    query: RangeQuery
    mode: QueryMode = QueryMode.ROUTE


@dataclass(slots=True)
class PointRequest:
    route: RouteHeader
    query_id: int
    geometry: Geometry
    kind_filter: frozenset[FlagKind]
    reply_to: int


@dataclass(frozen=True, slots=True)
class QueryResult:
    query_id: int
    node_path: SectorPath
    forwarded: int
    flags: tuple[Flag, ...]


@dataclass(frozen=True, slots=True)
class SplitAssign:
    split_id: int
    child_path: SectorPath
    parent: int
    ancestors: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class SplitReply:
    """SPLIT_ACK / SPLIT_NACK payload."""

    split_id: int
    quadrant: int


@dataclass(frozen=True, slots=True)
class Transfer:
    split_id: int
    quadrant: int
    flags: tuple[Flag, ...]


@dataclass(frozen=True, slots=True)
class TransferAck:
    split_id: int
    quadrant: int
    stored: int
    has_children: bool


@dataclass(frozen=True, slots=True)
class MergeReclaim:
    merge_id: int
    quadrant: int


@dataclass(frozen=True, slots=True)
class MergeReply:
    """MERGE_ACK (flags handed back) or MERGE_NACK (empty)."""

    merge_id: int
    quadrant: int
    flags: tuple[Flag, ...] = ()


@dataclass(frozen=True, slots=True)
class LoadReport:
    quadrant: int
    stored: int
    has_children: bool


@dataclass(frozen=True, slots=True)
class InfoItem:
    item_id: int
    st_ref: SpatioTemporalRef
    terms: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "terms", frozenset(self.terms))
        if not self.terms:
            raise ValueError("item needs at least one term")


@dataclass(frozen=True, slots=True)
class IrQuery:
    terms: frozenset[str]
    st_ref: Optional[SpatioTemporalRef] = None
    fanout: int = 5
    ttl: int = 2

    def __post_init__(self):
        object.__setattr__(self, "terms", frozenset(self.terms))
        if not self.terms and self.st_ref is None:
            raise ValueError("query needs terms or a spatio-temporal reference")
        if self.fanout < 0 or self.ttl < 0:
            raise ValueError("fanout and ttl must be non-negative")


@dataclass(frozen=True, slots=True)
class Ask:
    query_id: int
    querier: int
    query: IrQuery
    ttl: int


@dataclass(frozen=True, slots=True)
class ScoredItem:
    item: InfoItem
    owner: int
    score: float


@dataclass(frozen=True, slots=True)
class Answer:
    query_id: int
    items: tuple[ScoredItem, ...]
    forwarded: int
    duplicate: bool = False


# -- codec ---------------------------------------------------------------------

def pack_path(w: Writer, path: SectorPath) -> None:
    w.u8(len(path))
    packed = bytearray((len(path) + 3) // 4)
    for i, d in enumerate(path):
        packed[i // 4] |= (d & 3) << (2 * (i % 4))
    w.raw(bytes(packed))


def unpack_path(r: Reader) -> SectorPath:
    n = r.u8()
    start = r.pos
    packed = r.bytes((n + 3) // 4)
    digits = tuple((packed[i // 4] >> (2 * (i % 4))) & 3 for i in range(n))
    # canonical form: unused high bits of the last byte are zero
    if n % 4 and packed[-1] >> (2 * (n % 4)):
        raise r.error("non-zero padding in path", start)
    return digits


def _opt_addr(v: Optional[int]) -> int:
    return NO_ADDRESS if v is None else v


def _w_flags(w: Writer, flags) -> None:
    w.u32(len(flags))
    for f in flags:
        write_flag(w, f)


def _r_flags(r: Reader) -> tuple[Flag, ...]:
    n = r.u32()
    return tuple(read_flag(r) for _ in range(n))


def _w_route(w: Writer, h: RouteHeader) -> None:
    w.u64(h.origin)
    w.u64(h.request_id)
    w.u16(h.hops)
    w.u8(h.start_depth)


def _r_route(r: Reader) -> RouteHeader:
    return RouteHeader(r.u64(), r.u64(), r.u16(), r.u8())


def _w_kinds(w: Writer, kinds) -> None:
    w.u8(sum(1 << int(k) for k in kinds))


def _r_kinds(r: Reader) -> frozenset[FlagKind]:
    start = r.pos
    mask = r.u8()
    if mask >> len(FlagKind):
        raise r.error("unknown flag kind bits", start)
    return frozenset(k for k in FlagKind if mask & (1 << int(k)))


def _w_terms(w: Writer, terms) -> None:
    ts = sorted(terms)
    w.u16(len(ts))
    for t in ts:
        w.text(t)


def _r_terms(r: Reader) -> frozenset[str]:
    return frozenset(r.text() for _ in range(r.u16()))


def _w_time(w: Writer, t: TimeInterval) -> None:
    w.f64(t.start)
    w.f64(t.end)


def _r_time(r: Reader) -> TimeInterval:
    start = r.pos
    a, b = r.f64(), r.f64()
    try:
        return TimeInterval(a, b)
    except GeometryError as exc:
        raise r.error(str(exc), start) from None


def write_item(w: Writer, item: InfoItem) -> None:
    w.u64(item.item_id)
    write_st_ref(w, item.st_ref)
    _w_terms(w, item.terms)


def read_item(r: Reader) -> InfoItem:
    start = r.pos
    item_id = r.u64()
    ref = read_st_ref(r)
    terms = _r_terms(r)
    try:
        return InfoItem(item_id, ref, terms)
    except ValueError as exc:
        raise r.error(str(exc), start) from None


def _w_query(w: Writer, q: IrQuery) -> None:
    _w_terms(w, q.terms)
    if q.st_ref is None:
        w.u8(0)
    else:
        w.u8(1)
        write_st_ref(w, q.st_ref)
    w.u32(q.fanout)
    w.u32(q.ttl)


def _r_query(r: Reader) -> IrQuery:
    start = r.pos
    terms = _r_terms(r)
    ref = read_st_ref(r) if r.u8() else None
    fanout, ttl = r.u32(), r.u32()
    try:
        return IrQuery(terms, ref, fanout, ttl)
    except ValueError as exc:
        raise r.error(str(exc), start) from None


def _encode_payload(w: Writer, kind: Kind, p) -> None:
    if kind in (Kind.INSERT, Kind.JOIN, Kind.DELETE):
        _w_route(w, p.route)
        write_flag(w, p.flag)
    elif kind is Kind.INSERT_ACK:
        w.u64(p.flag_id)
        pack_path(w, p.node_path)
    elif kind is Kind.DELETE_ACK:
        w.u64(p.flag_id)
        w.u8(int(p.found))
    elif kind is Kind.RANGE_QUERY:
        _w_route(w, p.route)
        w.u8(int(p.mode))
        q = p.query
        w.u64(q.query_id)
        write_geometry(w, q.geometry)
        _w_time(w, q.time)
        _w_kinds(w, q.kind_filter)
        w.u64(q.reply_to)
    elif kind is Kind.POINT_QUERY:
        _w_route(w, p.route)
        w.u64(p.query_id)
        write_geometry(w, p.geometry)
        _w_kinds(w, p.kind_filter)
        w.u64(p.reply_to)
    elif kind is Kind.QUERY_RESULT:
        w.u64(p.query_id)
        pack_path(w, p.node_path)
        w.u32(p.forwarded)
        _w_flags(w, p.flags)
    elif kind is Kind.SPLIT_ASSIGN:
        w.u64(p.split_id)
        pack_path(w, p.child_path)
        w.u64(_opt_addr(p.parent))
        w.u8(len(p.ancestors))
        for a in p.ancestors:
            w.u64(a)
    elif kind in (Kind.SPLIT_ACK, Kind.SPLIT_NACK):
        w.u64(p.split_id)
        w.u8(p.quadrant)
    elif kind is Kind.TRANSFER:
        w.u64(p.split_id)
        w.u8(p.quadrant)
        _w_flags(w, p.flags)
    elif kind is Kind.TRANSFER_ACK:
        w.u64(p.split_id)
        w.u8(p.quadrant)
        w.u32(p.stored)
        w.u8(int(p.has_children))
    elif kind is Kind.MERGE_RECLAIM:
        w.u64(p.merge_id)
        w.u8(p.quadrant)
    elif kind in (Kind.MERGE_ACK, Kind.MERGE_NACK):
        w.u64(p.merge_id)
        w.u8(p.quadrant)
        _w_flags(w, p.flags)
    elif kind is Kind.LOAD_REPORT:
        w.u8(p.quadrant)
        w.u32(p.stored)
        w.u8(int(p.has_children))
    elif kind is Kind.ASK:
        w.u64(p.query_id)
        w.u64(p.querier)
        _w_query(w, p.query)
        w.u32(p.ttl)
    elif kind is Kind.ANSWER:
        w.u64(p.query_id)
        w.u32(p.forwarded)
        w.u8(int(p.duplicate))
        w.u32(len(p.items))
        for s in p.items:
            write_item(w, s.item)
            w.u64(s.owner)
            w.f64(s.score)
    else:
        raise ValueError(f"unknown message kind {kind!r}")


def _r_quadrant(r: Reader) -> int:
    pos = r.pos
    q = r.u8()
    if q > 3:
        raise r.error(f"quadrant {q} out of range", pos)
    return q


def _decode_payload(r: Reader, kind: Kind):
    if kind in (Kind.INSERT, Kind.JOIN, Kind.DELETE):
        return FlagRequest(_r_route(r), read_flag(r))
    if kind is Kind.INSERT_ACK:
        return InsertAck(r.u64(), unpack_path(r))
    if kind is Kind.DELETE_ACK:
        return DeleteAck(r.u64(), bool(r.u8()))
    if kind is Kind.RANGE_QUERY:
        route = _r_route(r)
        mode = QueryMode(r.u8())
        qid = r.u64()
        g = read_geometry(r)
        t = _r_time(r)
        kinds = _r_kinds(r)
        return RangeRequest(route, RangeQuery(qid, g, t, kinds, r.u64()), mode)
    if kind is Kind.POINT_QUERY:
        route = _r_route(r)
        qid = r.u64()
        g = read_geometry(r)
        kinds = _r_kinds(r)
        return PointRequest(route, qid, g, kinds, r.u64())
    if kind is Kind.QUERY_RESULT:
        return QueryResult(r.u64(), unpack_path(r), r.u32(), _r_flags(r))
    if kind is Kind.SPLIT_ASSIGN:
        sid = r.u64()
        path = unpack_path(r)
        parent = r.u64()
        ancestors = tuple(r.u64() for _ in range(r.u8()))
        return SplitAssign(sid, path, parent, ancestors)
    if kind in (Kind.SPLIT_ACK, Kind.SPLIT_NACK):
        return SplitReply(r.u64(), _r_quadrant(r))
    if kind is Kind.TRANSFER:
        return Transfer(r.u64(), _r_quadrant(r), _r_flags(r))
    if kind is Kind.TRANSFER_ACK:
        return TransferAck(r.u64(), _r_quadrant(r), r.u32(), bool(r.u8()))
    if kind is Kind.MERGE_RECLAIM:
        return MergeReclaim(r.u64(), _r_quadrant(r))
    if kind in (Kind.MERGE_ACK, Kind.MERGE_NACK):
        return MergeReply(r.u64(), _r_quadrant(r), _r_flags(r))
    if kind is Kind.LOAD_REPORT:
        return LoadReport(_r_quadrant(r), r.u32(), bool(r.u8()))
    if kind is Kind.ASK:
        return Ask(r.u64(), r.u64(), _r_query(r), r.u32())
    if kind is Kind.ANSWER:
        qid = r.u64()
        fwd = r.u32()
        dup = bool(r.u8())
        items = []
        for _ in range(r.u32()):
            item = read_item(r)
            items.append(ScoredItem(item, r.u64(), r.f64()))
        return Answer(qid, tuple(items), fwd, dup)
    raise r.error(f"unknown message kind {kind!r}", r.pos)


def encode_envelope(env: MessageEnvelope) -> bytes:
    body = Writer()
    _encode_payload(body, env.kind, env.payload)
    payload = body.getvalue()
    w = Writer()
    w.u64(env.seq)
    w.u8(int(env.kind))
    pack_path(w, env.target_path)
    w.u64(env.src)
    w.u64(env.dst)
    w.u32(len(payload))
    w.raw(payload)
    return w.getvalue()


def decode_envelope(data: bytes) -> MessageEnvelope:
    r = Reader(data, error=MalformedMessageError)
    seq = r.u64()
    kind_pos = r.pos
    try:
        kind = Kind(r.u8())
    except ValueError:
        raise MalformedMessageError("unknown message kind", kind_pos) from None
    path = unpack_path(r)
    src, dst = r.u64(), r.u64()
    n = r.u32()
    if r.pos + n != len(r.data):
        raise MalformedMessageError("payload length mismatch", r.pos)
    try:
        payload = _decode_payload(r, kind)
    except MalformedFlagError:
        raise
    except ValueError as exc:
        raise MalformedMessageError(f"invalid payload: {exc}", r.pos) from None
    if not r.at_end():
        raise MalformedMessageError("trailing bytes in payload", r.pos)
    return MessageEnvelope(src, dst, kind, path, payload, seq)
