"""Published knowledge flags and their canonical binary encoding.

Three flag kinds exist: expertise summaries, expert links and agent
locations. Every flag carries a ``flag_id`` and exposes ``georef``, the
geometry used to place it in the index.

Encoding (all integers little-endian, coordinates IEEE-754 binary64)::

    flag      := kind:u8 flag_id:u64 owner:u64 body
    expertise := st_ref item_count:u32 n_terms:u16 (len:u16 utf8)*   # terms sorted
    link      := target:u64 st_ref weight:f64
    location  := x:f64 y:f64 contact:u64
    st_ref    := geometry t_start:f64 t_end:f64
    geometry  := 0 x y | 1 xmin ymin xmax ymax | 2 n:u32 (x y)* | 3 n:u32 (x y)*
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import ClassVar, Union

from .stgeom import (
    BoundingBox,
    Geometry,
    GeometryError,
    Point,
    Polygon,
    Polyline,
    SpatioTemporalRef,
    TimeInterval,
)

SUMMARY_K = 16
U64_MAX = (1 << 64) - 1


class FlagKind(IntEnum):
    EXPERTISE = 0
    EXPERT_LINK = 1
    AGENT_LOCATION = 2


ALL_KINDS = frozenset(FlagKind)


class MalformedFlagError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def make_flag_id(owner: int, counter: int) -> int:
    if not 0 <= counter < (1 << 32):
        raise ValueError("flag counter out of range")
    return ((owner << 32) | counter) & U64_MAX


def _check_u64(name: str, v: int) -> None:
    if not (isinstance(v, int) and 0 <= v <= U64_MAX):
        raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")


@dataclass(frozen=True, slots=True)
class ExpertiseFlag:
    flag_id: int
    owner: int
    st_ref: SpatioTemporalRef
    summary: frozenset[str]
    item_count: int

    kind: ClassVar[FlagKind] = FlagKind.EXPERTISE

    def __post_init__(self):
        _check_u64("flag_id", self.flag_id)
        _check_u64("owner", self.owner)
        object.__setattr__(self, "summary", frozenset(self.summary))
        if self.item_count < 1:
            raise ValueError("item_count must be >= 1")
        if any(not t for t in self.summary):
            raise ValueError("empty term in summary")

    @property
    def georef(self) -> Geometry:
        return self.st_ref.geometry

    @property
    def time(self) -> TimeInterval:
        return self.st_ref.time


@dataclass(frozen=True, slots=True)
class ExpertLinkFlag:
    flag_id: int
    owner: int
    target: int
    st_ref: SpatioTemporalRef
    weight: float = 1.0

    kind: ClassVar[FlagKind] = FlagKind.EXPERT_LINK

    def __post_init__(self):
        _check_u64("flag_id", self.flag_id)
        _check_u64("owner", self.owner)
        _check_u64("target", self.target)
        if self.owner == self.target:
            raise ValueError("expert link must not point at its owner")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"link weight {self.weight!r} outside (0, 1]")

    @property
    def georef(self) -> Geometry:
        return self.st_ref.geometry

    @property
    def time(self) -> TimeInterval:
        return self.st_ref.time


@dataclass(frozen=True, slots=True)
class AgentLocationFlag:
    flag_id: int
    owner: int
    location: Point
    contact: int

    kind: ClassVar[FlagKind] = FlagKind.AGENT_LOCATION

    def __post_init__(self):
        _check_u64("flag_id", self.flag_id)
        _check_u64("owner", self.owner)
        _check_u64("contact", self.contact)

    @property
    def georef(self) -> Geometry:
        return self.location

    @property
    def time(self) -> None:
        return None


Flag = Union[ExpertiseFlag, ExpertLinkFlag, AgentLocationFlag]


def flag_routing_geometry(f: Flag) -> Geometry:
    return f.georef


# -- low level binary helpers (shared with the message codec) ----------------

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int) -> None:
        self._parts.append(_U8.pack(v))

    def u16(self, v: int) -> None:
        self._parts.append(_U16.pack(v))

    def u32(self, v: int) -> None:
        self._parts.append(_U32.pack(v))

    def u64(self, v: int) -> None:
        self._parts.append(_U64.pack(v))

    def f64(self, v: float) -> None:
        # +0.0 folds -0.0 so equal values encode identically
        self._parts.append(_F64.pack(v + 0.0))

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self._parts.append(raw)

    def raw(self, b: bytes) -> None:
        self._parts.append(b)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes, offset: int = 0, error=MalformedFlagError):
        self.data = memoryview(data)
        self.pos = offset
        self.error = error

    def _take(self, st: struct.Struct):
        if self.pos + st.size > len(self.data):
            raise self.error("truncated input", self.pos)
        (v,) = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return v

    def u8(self) -> int:
        return self._take(_U8)

    def u16(self) -> int:
        return self._take(_U16)

    def u32(self) -> int:
        return self._take(_U32)

    def u64(self) -> int:
        return self._take(_U64)

    def f64(self) -> float:
        return self._take(_F64)

    def bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise self.error("truncated input", self.pos)
        b = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return b

    def text(self) -> str:
        n = self.u16()
        start = self.pos
        try:
            return self.bytes(n).decode("utf-8")
        except UnicodeDecodeError:
            raise self.error("invalid utf-8", start) from None

    def at_end(self) -> bool:
        return self.pos == len(self.data)


def write_geometry(w: Writer, g: Geometry) -> None:
    if isinstance(g, Point):
        w.u8(0)
        w.f64(g.x)
        w.f64(g.y)
    elif isinstance(g, BoundingBox):
        w.u8(1)
        for v in (g.xmin, g.ymin, g.xmax, g.ymax):
            w.f64(v)
    elif isinstance(g, (Polygon, Polyline)):
        w.u8(2 if isinstance(g, Polygon) else 3)
        w.u32(len(g.vertices))
        for p in g.vertices:
            w.f64(p.x)
            w.f64(p.y)
    else:
        raise TypeError(f"not a geometry: {g!r}")


def read_geometry(r: Reader) -> Geometry:
    start = r.pos
    tag = r.u8()
    try:
        if tag == 0:
            return Point(r.f64(), r.f64())
        if tag == 1:
            return BoundingBox(r.f64(), r.f64(), r.f64(), r.f64())
        if tag in (2, 3):
            n = r.u32()
            if n > (len(r.data) - r.pos) // 16:
                raise r.error("vertex count exceeds input", r.pos)
            pts = tuple(Point(r.f64(), r.f64()) for _ in range(n))
            return Polygon(pts) if tag == 2 else Polyline(pts)
    except GeometryError as exc:
        raise r.error(f"invalid geometry: {exc}", start) from None
    raise r.error(f"unknown geometry tag {tag}", start)


def write_st_ref(w: Writer, ref: SpatioTemporalRef) -> None:
    write_geometry(w, ref.geometry)
    w.f64(ref.time.start)
    w.f64(ref.time.end)


def read_st_ref(r: Reader) -> SpatioTemporalRef:
    g = read_geometry(r)
    start = r.pos
    t0, t1 = r.f64(), r.f64()
    try:
        return SpatioTemporalRef(g, TimeInterval(t0, t1))
    except GeometryError as exc:
        raise r.error(str(exc), start) from None


def write_flag(w: Writer, f: Flag) -> None:
    w.u8(int(f.kind))
    w.u64(f.flag_id)
    w.u64(f.owner)
    if isinstance(f, ExpertiseFlag):
        write_st_ref(w, f.st_ref)
        w.u32(f.item_count)
        terms = sorted(f.summary)
        w.u16(len(terms))
        for t in terms:
            w.text(t)
    elif isinstance(f, ExpertLinkFlag):
        w.u64(f.target)
        write_st_ref(w, f.st_ref)
        w.f64(f.weight)
    elif isinstance(f, AgentLocationFlag):
        w.f64(f.location.x)
        w.f64(f.location.y)
        w.u64(f.contact)
    else:
        raise TypeError(f"not a flag: {f!r}")


def read_flag(r: Reader) -> Flag:
    start = r.pos
    kind = r.u8()
    flag_id = r.u64()
    owner = r.u64()
    try:
        if kind == FlagKind.EXPERTISE:
            ref = read_st_ref(r)
            count = r.u32()
            n = r.u16()
            terms = [r.text() for _ in range(n)]
            if terms != sorted(set(terms)):
                raise r.error("summary terms not sorted and unique", start)
            return ExpertiseFlag(flag_id, owner, ref, frozenset(terms), count)
        if kind == FlagKind.EXPERT_LINK:
            target = r.u64()
            ref = read_st_ref(r)
            weight = r.f64()
            return ExpertLinkFlag(flag_id, owner, target, ref, weight)
        if kind == FlagKind.AGENT_LOCATION:
            x, y = r.f64(), r.f64()
            contact = r.u64()
            return AgentLocationFlag(flag_id, owner, Point(x, y), contact)
    except (ValueError, GeometryError) as exc:
        if isinstance(exc, MalformedFlagError):
            raise
        raise r.error(f"invalid flag: {exc}", start) from None
    raise r.error(f"unknown flag kind {kind}", start)


def encode_flag(f: Flag) -> bytes:
    w = Writer()
    write_flag(w, f)
    return w.getvalue()


def decode_flag(data: bytes) -> Flag:
    r = Reader(data)
    f = read_flag(r)
    if not r.at_end():
        raise MalformedFlagError("trailing bytes after flag", r.pos)
    return f
