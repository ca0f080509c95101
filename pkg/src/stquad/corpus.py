"""Geo-referenced document corpora: TSV ingestion, synthetic generation, agent assignment.

File format: UTF-8, one record per line, tab-separated::

    doc_id  lon  lat  t_start  t_end  space-joined terms
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .messages import InfoItem
from .simnet import rng_stream
from .stgeom import Point, SpatioTemporalRef, TimeInterval, centroid, denormalize, normalize_lonlat

# synthetic documents span 2000-01-01 .. 2020-01-01 in epoch seconds
T_EPOCH_START = 946_684_800.0
T_EPOCH_END = 1_577_836_800.0


class CorpusError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class CorpusRecord:
    doc_id: int
    lon: float
    lat: float
    t_start: float
    t_end: float
    terms: tuple[str, ...]

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise CorpusError(f"longitude {self.lon!r} out of range")
        if not -90.0 <= self.lat <= 90.0:
            raise CorpusError(f"latitude {self.lat!r} out of range")
        if self.t_start > self.t_end:
            raise CorpusError("t_start after t_end")
        if not self.terms:
            raise CorpusError("record without terms")


@dataclass(frozen=True)
class SyntheticConfig:
    n_docs: int
    n_hotspots: int = 20
    hotspot_sigma: float = 0.01
    vocab_size: int = 500
    terms_per_doc: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.n_docs < 1 or self.n_hotspots < 1 or self.vocab_size < 1 or self.terms_per_doc < 1:
            raise ValueError("synthetic corpus sizes must be positive")
        if self.hotspot_sigma < 0:
            raise ValueError("hotspot_sigma must be non-negative")


def _parse_line(line: str, lineno: int) -> CorpusRecord:
    cols = line.rstrip("\r\n").split("\t")
    if len(cols) != 6:
        raise CorpusError(f"expected 6 tab-separated fields, got {len(cols)}", lineno)
    try:
        doc_id = int(cols[0])
        lon, lat, t0, t1 = (float(c) for c in cols[1:5])
    except ValueError as exc:
        raise CorpusError(f"malformed field: {exc}", lineno) from None
    if not all(math.isfinite(v) for v in (lon, lat, t0, t1)):
        raise CorpusError("non-finite number", lineno)
    if not 0 <= doc_id < (1 << 64):
        raise CorpusError("doc_id out of range", lineno)
    terms = tuple(cols[5].split())
    try:
        return CorpusRecord(doc_id, lon, lat, t0, t1, terms)
    except CorpusError as exc:
        raise CorpusError(str(exc), lineno) from None


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            records.append(_parse_line(line, lineno))
    return records


def format_record(r: CorpusRecord) -> str:
    return "\t".join([str(r.doc_id), repr(r.lon), repr(r.lat), repr(r.t_start), repr(r.t_end),
                      " ".join(r.terms)])


def write_corpus(records: Iterable[CorpusRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(format_record(r) + "\n")


def to_items(records: Sequence[CorpusRecord]) -> list[InfoItem]:
    """Normalize records into point items; times are scaled by the corpus min/max."""
    if not records:
        return []
    lo = min(r.t_start for r in records)
    hi = max(r.t_end for r in records)
    span = hi - lo

    def norm(t: float) -> float:
        return 0.5 if span == 0 else min(1.0, max(0.0, (t - lo) / span))

    items = []
    for r in records:
        ref = SpatioTemporalRef(normalize_lonlat(r.lon, r.lat),
                                TimeInterval(norm(r.t_start), norm(r.t_end)))
        items.append(InfoItem(r.doc_id, ref, frozenset(t.lower() for t in r.terms)))
    return items


def generate_synthetic(cfg: SyntheticConfig) -> list[CorpusRecord]:
    """Hotspot-clustered documents with Zipf-distributed, location-flavoured terms.

    Each hotspot rotates the vocabulary by its own offset, so nearby
    documents share frequent terms while distant ones mostly do not.
    """
    rng = rng_stream(cfg.seed, "corpus.hotspots", 0)
    centers = [(rng.random(), rng.random()) for _ in range(cfg.n_hotspots)]
    offsets = [rng.randrange(cfg.vocab_size) for _ in range(cfg.n_hotspots)]
    width = len(str(cfg.vocab_size - 1))
    vocab = [f"t{i:0{width}d}" for i in range(cfg.vocab_size)]
    cum = list(_zipf_cdf(cfg.vocab_size))
    hi = 1.0 - 2.0 ** -32
    span = T_EPOCH_END - T_EPOCH_START

    records = []
    for k in range(cfg.n_docs):
        h = k % cfg.n_hotspots
        r = rng_stream(cfg.seed, "corpus.doc", k)
        cx, cy = centers[h]
        x = min(max(r.gauss(cx, cfg.hotspot_sigma), 0.0), hi) if cfg.hotspot_sigma else cx
        y = min(max(r.gauss(cy, cfg.hotspot_sigma), 0.0), hi) if cfg.hotspot_sigma else cy
        lon, lat = denormalize(x, y)
        t0 = T_EPOCH_START + math.floor(r.random() * span * 0.95)
        t1 = t0 + 3600.0 + math.floor(r.random() * span * 0.05)
        terms = []
        for _ in range(cfg.terms_per_doc):
            rank = bisect.bisect_right(cum, r.random() * cum[-1])
            terms.append(vocab[(min(rank, cfg.vocab_size - 1) + offsets[h]) % cfg.vocab_size])
        records.append(CorpusRecord(k + 1, lon, lat, t0, t1, tuple(terms)))
    return records


def _zipf_cdf(n: int, s: float = 1.0):
    acc = 0.0
    for rank in range(1, n + 1):
        acc += rank ** -s
        yield acc


@dataclass(frozen=True)
class Assignment:
    items: dict[int, list[InfoItem]]
    locations: dict[int, Point]


def assign_to_agents(items: Sequence[InfoItem], n_agents: int, replication: float,
                     seed: int) -> Assignment:
    """Non-disjoint random distribution of items to agents ``1..n_agents``.

    Each item gets ``floor(replication)`` copies plus one more with
    probability equal to the fractional part, on distinct agents.
    """
    if n_agents < 1:
        raise ValueError("need at least one agent")
    if replication < 1:
        raise ValueError("replication must be >= 1")
    if math.ceil(replication) > n_agents:
        raise ValueError(f"replication {replication} exceeds agent count {n_agents}")
    base = math.floor(replication)
    frac = replication - base
    agent_ids = list(range(1, n_agents + 1))
    owned: dict[int, list[InfoItem]] = {a: [] for a in agent_ids}
    for item in items:
        r = rng_stream(seed, "assign", item.item_id)
        copies = base + (1 if frac > 0 and r.random() < frac else 0)
        for a in r.sample(agent_ids, copies):
            owned[a].append(item)

    locations: dict[int, Point] = {}
    for a in agent_ids:
        r = rng_stream(seed, "agent.location", a)
        mine = owned[a]
        if not mine:
            locations[a] = Point(r.random(), r.random())
            continue
        while True:
            subset = [it for it in mine if r.random() < 0.5]
            if subset:
                break
        pts = [centroid(it.st_ref.geometry) for it in subset]
        locations[a] = Point(sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts))
    return Assignment(owned, locations)

