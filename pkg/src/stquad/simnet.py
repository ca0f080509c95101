"""Deterministic discrete-event transport, seeded random streams and metrics.

Random streams
--------------
``rng_stream(seed, scope, id)`` returns a SplitMix64 generator. Its initial
state is::

    mix(seed) ^ mix(fnv1a64(scope.encode("utf-8"))) ^ mix(id ^ 0xD1B54A32D192ED03)

where ``mix`` is the SplitMix64 output finalizer and all arithmetic is modulo
2**64. Each draw advances the state by ``0x9E3779B97F4A7C15`` and returns
``mix(state)``. Floats are ``(u64 >> 11) * 2**-53``; Gaussians use
Box-Muller on two consecutive floats, ``sqrt(-2 ln(1-u1)) * cos(2 pi u2)``.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

from .messages import (
    MERGE_KINDS,
    SPLIT_KINDS,
    Kind,
    MessageEnvelope,
    decode_envelope,
    encode_envelope,
)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randrange(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` via the high bits of a 64x64 product."""
        if n <= 0:
            raise ValueError("randrange needs n > 0")
        return (self.next_u64() * n) >> 64

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = self.random()
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def sample(self, population: Sequence, k: int) -> list:
        """``k`` distinct elements by partial Fisher-Yates, in draw order."""
        n = len(population)
        if k > n:
            raise ValueError("sample larger than population")
        swapped: dict[int, int] = {}
        out = []
        for i in range(k):
            j = i + self.randrange(n - i)
            pick = swapped.get(j, j)
            swapped[j] = swapped.get(i, i)
            out.append(population[pick])
        return out

    def choice(self, seq: Sequence):
        return seq[self.randrange(len(seq))]


def rng_stream(seed: int, scope: str, id: int = 0) -> SplitMix64:
    state = mix64(seed) ^ mix64(fnv1a64(scope.encode("utf-8"))) ^ mix64((id ^ 0xD1B54A32D192ED03) & MASK64)
    return SplitMix64(state)


# -- latency -----------------------------------------------------------------

@dataclass(frozen=True)
class Latency:
    """``constant`` (lo == hi) or ``uniform(lo, hi)`` per-message delay."""

    lo: float = 1.0
    hi: float = 1.0

    @classmethod
    def parse(cls, text: str) -> Latency:
        parts = text.strip().split(":")
        try:
            if parts[0] == "constant" and len(parts) == 2:
                d = float(parts[1])
                lat = cls(d, d)
            elif parts[0] == "uniform" and len(parts) == 3:
                lat = cls(float(parts[1]), float(parts[2]))
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"bad latency model {text!r}; use constant:D or uniform:LO:HI") from None
        if lat.lo < 0 or lat.hi < lat.lo:
            raise ValueError(f"bad latency bounds in {text!r}")
        return lat

    def __str__(self) -> str:
        if self.lo == self.hi:
            return f"constant:{self.lo!r}"
        return f"uniform:{self.lo!r}:{self.hi!r}"


# -- metrics -----------------------------------------------------------------

@dataclass
class Metrics:
    sent: Counter = field(default_factory=Counter)
    delivered: int = 0
    events: int = 0
    split_messages: dict[int, Counter] = field(default_factory=dict)
    merge_messages: dict[int, Counter] = field(default_factory=dict)
    queries: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    def observe_send(self, env: MessageEnvelope) -> None:
        self.sent[env.kind] += 1
        if env.kind in SPLIT_KINDS:
            self.split_messages.setdefault(env.payload.split_id, Counter())[env.kind] += 1
        elif env.kind in MERGE_KINDS:
            self.merge_messages.setdefault(env.payload.merge_id, Counter())[env.kind] += 1

    @property
    def total_sent(self) -> int:
        return sum(self.sent.values())

    @property
    def splits(self) -> int:
        return sum(1 for c in self.split_messages.values() if c[Kind.SPLIT_ACK])

    @property
    def merges(self) -> int:
        return sum(1 for c in self.merge_messages.values() if c[Kind.MERGE_ACK])

    def summary(self) -> dict:
        """Deterministic summary; wall-clock time is deliberately excluded."""
        return {
            "type": "summary",
            "messages": {k.name: self.sent[k] for k in sorted(self.sent)},
            "messages_total": self.total_sent,
            "delivered": self.delivered,
            "events": self.events,
            "splits": self.splits,
            "merges": self.merges,
            "queries": len(self.queries),
        }

    def to_jsonl(self, extra_summary: dict | None = None) -> str:
        summary = self.summary()
        if extra_summary:
            summary.update(extra_summary)
        lines = [json.dumps(q, sort_keys=True) for q in self.queries]
        lines.append(json.dumps(summary, sort_keys=True))
        return "\n".join(lines) + "\n"


# -- transport ---------------------------------------------------------------

class Handler(Protocol):
    def handle(self, env: MessageEnvelope) -> Iterable[MessageEnvelope]: ...


class UnroutableAddressError(RuntimeError):
    pass


class EventLimitExceeded(RuntimeError):
    pass


class Network:
    """Single-threaded event queue ordered by ``(deliver_at, seq)``.

    With ``wire=True`` every envelope is encoded at send time and decoded at
    delivery, so handlers only ever see what survived the byte codec.
    """

    def __init__(self, seed: int = 0, latency: Latency = Latency(), *, wire: bool = True,
                 trace: bool = False):
        self.handlers: dict[int, Handler] = {}
        self.latency = latency
        self.wire = wire
        self.now = 0.0
        self.metrics = Metrics()
        self.trace: list[MessageEnvelope] | None = [] if trace else None
        self._queue: list = []
        self._seq = 0
        self._rng = rng_stream(seed, "latency", 0)
        self.on_deliver: Callable[[MessageEnvelope], None] | None = None

    def register(self, address: int, handler: Handler) -> None:
        self.handlers[address] = handler

    def _delay(self) -> float:
        lat = self.latency
        if lat.lo == lat.hi:
            return lat.lo
        return self._rng.uniform(lat.lo, lat.hi)

    def send(self, env: MessageEnvelope) -> None:
        if env.dst not in self.handlers:
            raise UnroutableAddressError(f"no handler registered for address {env.dst}")
        self._seq += 1
        env.seq = self._seq
        self.metrics.observe_send(env)
        if self.trace is not None:
            self.trace.append(env)
        item = encode_envelope(env) if self.wire else env
        heapq.heappush(self._queue, (self.now + self._delay(), env.seq, item))

    def send_all(self, envs: Iterable[MessageEnvelope]) -> None:
        for env in envs:
            self.send(env)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def run_until_quiescent(self, limit: int = 10_000_000) -> Metrics:
        t0 = time.perf_counter()
        processed = 0
        try:
            while self._queue:
                if processed >= limit:
                    head = self._queue[0]
                    raise EventLimitExceeded(
                        f"event limit {limit} reached at t={self.now:g} with "
                        f"{len(self._queue)} pending events (next seq {head[1]})"
                    )
                at, _, item = heapq.heappop(self._queue)
                self.now = at
                env = decode_envelope(item) if self.wire else item
                processed += 1
                self.metrics.events += 1
                self.metrics.delivered += 1
                if self.on_deliver is not None:
                    self.on_deliver(env)
                for out in self.handlers[env.dst].handle(env):
                    self.send(out)
        finally:
            self.metrics.wall_clock += time.perf_counter() - t0
        return self.metrics
