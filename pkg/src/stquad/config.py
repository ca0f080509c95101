"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key has a type and most
have a default; unknown keys are rejected so typos do not silently fall
back to defaults. ``SimConfig.to_text`` writes the fully resolved config in
the same format, sorted by key, which is what run manifests record.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .simnet import Latency


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


_REQUIRED = object()


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    # corpus: a TSV path, or empty for a synthetic corpus
    corpus: str = ""
    n_docs: int = _REQUIRED  # type: ignore[assignment]
    n_hotspots: int = 20
    hotspot_sigma: float = 0.01
    vocab_size: int = 500
    terms_per_doc: int = 6
    # agents
    n_agents: int = _REQUIRED  # type: ignore[assignment]
    replication: float = 1.5
    eps: float = 0.02
    min_pts: int = 3
    summary_k: int = 16
    # overlay
    capacity: int = 16
    merge_fraction: float = 0.5
    max_depth: int = 16
    # expert links
    k_local: int = 4
    q_long: int = 1
    alpha: float = 2.0
    link_discount: float = 0.5
    # queries
    n_queries: int = 100
    no_st_ref_fraction: float = 0.5
    query_terms: int = 2
    query_radius: float = 0.05
    vicinity_r: float = 0.05
    fanout: int = 5
    ttl: int = 2
    # transport
    latency: str = "constant:1"
    wire: bool = True
    event_limit: int = 10_000_000

    def __post_init__(self):
        if self.corpus and self.n_docs is _REQUIRED:
            object.__setattr__(self, "n_docs", 0)  # taken from the corpus file
        for f in dataclasses.fields(self):
            if getattr(self, f.name) is _REQUIRED:
                raise ConfigError("missing required key", f.name)
        checks = [
            ("n_docs", self.n_docs >= 1 or bool(self.corpus)), ("n_hotspots", self.n_hotspots >= 1),
            ("hotspot_sigma", self.hotspot_sigma >= 0), ("vocab_size", self.vocab_size >= 1),
            ("terms_per_doc", self.terms_per_doc >= 1), ("n_agents", self.n_agents >= 2),
            ("replication", 1 <= self.replication and math.ceil(self.replication) <= self.n_agents),
            ("eps", self.eps > 0), ("min_pts", self.min_pts >= 1), ("summary_k", self.summary_k >= 1),
            ("capacity", self.capacity >= 1), ("merge_fraction", 0 <= self.merge_fraction <= 1),
            ("max_depth", 1 <= self.max_depth <= 16), ("k_local", self.k_local >= 0),
            ("q_long", self.q_long >= 0), ("alpha", self.alpha >= 0),
            ("link_discount", self.link_discount >= 0), ("n_queries", self.n_queries >= 0),
            ("no_st_ref_fraction", 0 <= self.no_st_ref_fraction <= 1),
            ("query_terms", self.query_terms >= 1), ("query_radius", self.query_radius > 0),
            ("vicinity_r", self.vicinity_r > 0), ("fanout", self.fanout >= 0), ("ttl", self.ttl >= 0),
            ("event_limit", self.event_limit >= 1), ("seed", 0 <= self.seed < 1 << 64),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"value {getattr(self, key)!r} out of range", key)
        try:
            Latency.parse(self.latency)
        except ValueError as exc:
            raise ConfigError(str(exc), "latency") from None

    @property
    def latency_model(self) -> Latency:
        return Latency.parse(self.latency)

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.to_dict().items()):
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in dataclasses.fields(SimConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw, 0)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind}", key) from None


def parse_config(text: str, overrides: dict | None = None) -> SimConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key on line {lineno}", key)
        if key in values:
            raise ConfigError(f"duplicate key on line {lineno}", key)
        values[key] = _convert(key, raw)
    values.update(overrides or {})
    return SimConfig(**values)


def load_config(path: str | Path, overrides: dict | None = None) -> SimConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides)
