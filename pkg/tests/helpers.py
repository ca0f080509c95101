"""Shared fixtures: the 256-peer index run and small hand-built overlays."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass

from stquad.config import SimConfig
from stquad.dsti import Peer
from stquad.flags import AgentLocationFlag, ExpertiseFlag, make_flag_id
from stquad.messages import Kind
from stquad.scenario import build_agents, load_items
from stquad.simnet import Latency, Network, rng_stream
from stquad.stgeom import ALL_TIME, BoundingBox, Point, SpatioTemporalRef, TimeInterval


def loc(agent, x, y, counter=0):
    return AgentLocationFlag(make_flag_id(agent, counter), agent, Point(x, y), agent)


def exp(agent, counter, box, time=ALL_TIME):
    return ExpertiseFlag(make_flag_id(agent, counter), agent,
                         SpatioTemporalRef(BoundingBox(*box), time), {"t"}, 1)


def random_flags(seed, n_agents, n_flags):
    """One location flag per agent, then uniformly placed expertise boxes, mostly small."""
    r = rng_stream(seed, "test.dsti", 0)
    flags = [loc(a, r.random(), r.random()) for a in range(1, n_agents + 1)]
    for c in range(n_flags):
        a = 1 + r.randrange(n_agents)
        w, h = r.random() ** 3 * 0.3, r.random() ** 3 * 0.3
        x, y = r.random() * (1 - w), r.random() * (1 - h)
        t0 = r.random()
        flags.append(exp(a, c + 1, (x, y, x + w, y + h), TimeInterval(t0, min(1.0, t0 + 0.3 * r.random()))))
    return flags


class Collector:
    """Network endpoint that keeps every payload delivered to it."""

    def __init__(self):
        self.results = []

    def handle(self, env):
        self.results.append(env.payload)
        return []


@dataclass
class IndexRun:
    peers: dict[int, Peer]
    net: Network
    flags: list            # in insertion order
    seconds: float
    sent: Counter          # message counts of the build alone


def index_flags(n_peers: int, n_flags: int, seed: int):
    """Location flags for every peer, then profile and link flags from a synthetic corpus."""
    cfg = SimConfig(seed=seed, n_docs=14_000, n_hotspots=8, n_agents=n_peers, replication=1.0,
                    eps=0.003, min_pts=2, k_local=2, q_long=1)
    agents = build_agents(cfg, load_items(cfg))
    locs = [AgentLocationFlag(make_flag_id(a, 1 << 30), a, agents[a].location, a)
            for a in sorted(agents)]
    content = [p.flag for a in sorted(agents) for p in agents[a].profiles]
    content += [link for a in sorted(agents) for link in agents[a].expert_links]
    rng = rng_stream(seed, "test.index.order", 0)
    content = rng.sample(content, n_flags - len(locs))
    return locs, content


def run_index(n_peers=256, n_flags=10_000, capacity=16, seed=11, *, trace=False,
              wire=True, latency=Latency()) -> IndexRun:
    """Insert every flag one at a time, each from its owner, running to quiescence."""
    locs, content = index_flags(n_peers, n_flags, seed)
    net = Network(seed, latency, wire=wire, trace=trace)
    peers = {}
    for a in range(1, n_peers + 1):
        peers[a] = Peer(a, bootstrap=1, capacity=capacity)
        net.register(a, peers[a])
    peers[1].become_root()
    flags = locs + content
    t0 = time.perf_counter()
    for f in locs:
        net.send(peers[f.owner].insert(f, Kind.JOIN))
        net.run_until_quiescent()
    for f in content:
        net.send(peers[f.owner].insert(f))
        net.run_until_quiescent()
    return IndexRun(peers, net, flags, time.perf_counter() - t0, Counter(net.metrics.sent))
