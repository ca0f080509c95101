"""End-to-end simulation: build agents from a corpus, join, publish, query.

A run directory holds::

    manifest.json   resolved config, version, seed, output paths (written first)
    metrics.jsonl   one object per query, then one summary object
    snapshot.bin    every stored flag with the path of its node
    overlay.json    node path -> manager and parent address

The world (corpus, assignment, profiles, links) is a pure function of the
config, so ``query`` and ``eval`` rebuild agents from the manifest and the
overlay from the snapshot files instead of persisting item data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .agents import Agent, AgentNode, build_profiles, item_score, vicinity_ref
from .config import SimConfig, parse_config
from .corpus import SyntheticConfig, assign_to_agents, generate_synthetic, load_corpus, to_items
from .dsti import (
    NodeState,
    check_node_invariants,
    placement,
    read_snapshot,
    snapshot_records,
    write_snapshot,
)
from .messages import InfoItem, IrQuery
from .simnet import Network, rng_stream
from .smallworld import SmallWorldConfig, generate_expert_links
from .stgeom import BoundingBox, Point, SpatioTemporalRef, TimeInterval, centroid

ROOT_AGENT = 1


@dataclass
class World:
    config: SimConfig
    items: list[InfoItem]
    agents: dict[int, Agent]
    net: Network
    nodes: dict[int, AgentNode]
    query_log: list[dict] = field(default_factory=list)

    @property
    def peers(self):
        return [self.nodes[a] for a in sorted(self.nodes)]

    def run(self) -> None:
        self.net.run_until_quiescent(self.config.event_limit)


def load_items(cfg: SimConfig) -> list[InfoItem]:
    if cfg.corpus:
        records = load_corpus(cfg.corpus)
    else:
        records = generate_synthetic(synthetic_config(cfg))
    return to_items(records)


def synthetic_config(cfg: SimConfig) -> SyntheticConfig:
    return SyntheticConfig(cfg.n_docs, cfg.n_hotspots, cfg.hotspot_sigma, cfg.vocab_size,
                           cfg.terms_per_doc, cfg.seed)


def build_agents(cfg: SimConfig, items: list[InfoItem]) -> dict[int, Agent]:
    assignment = assign_to_agents(items, cfg.n_agents, cfg.replication, cfg.seed)
    agents = {a: Agent(a, assignment.locations[a], sorted(owned, key=lambda it: it.item_id))
              for a, owned in assignment.items.items()}
    for agent in agents.values():
        agent.profiles = build_profiles(agent, cfg.eps, cfg.min_pts, cfg.summary_k)
    sw = SmallWorldConfig(cfg.k_local, cfg.q_long, cfg.alpha, cfg.seed)
    links = generate_expert_links([(a.id, a.location) for a in agents.values()], sw)
    for link in links:
        agents[link.owner].expert_links.append(link)
    return agents


def build_world(cfg: SimConfig, *, trace: bool = False) -> World:
    items = load_items(cfg)
    agents = build_agents(cfg, items)
    net = Network(cfg.seed, cfg.latency_model, wire=cfg.wire, trace=trace)
    nodes = {}
    for a in sorted(agents):
        node = AgentNode(agents[a], bootstrap=ROOT_AGENT, capacity=cfg.capacity,
                         merge_fraction=cfg.merge_fraction, max_depth=cfg.max_depth,
                         link_discount=cfg.link_discount, vicinity_r=cfg.vicinity_r)
        nodes[a] = node
        net.register(a, node)
    nodes[ROOT_AGENT].become_root()
    return World(cfg, items, agents, net, nodes)


def join_phase(world: World) -> None:
    for a in sorted(world.nodes):
        world.net.send_all(world.nodes[a].join())
    world.run()


def publish_phase(world: World) -> None:
    # one agent at a time keeps the root from holding thousands of flags at once
    for a in sorted(world.nodes):
        world.net.send_all(world.nodes[a].publish_flags())
        world.run()


# -- query workload -----------------------------------------------------------------

def _clip(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def make_workload(world: World) -> list[tuple[int, IrQuery]]:
    """Deterministic mixed workload; a ``no_st_ref_fraction`` share has no reference.

    Terms are drawn from a real document: near the target box for referenced
    queries, near the querier for the others, so most queries have an answer.
    """
    cfg = world.config
    ids = sorted(world.agents)
    n_plain = round(cfg.n_queries * cfg.no_st_ref_fraction)
    by_id = sorted(world.items, key=lambda it: it.item_id)
    out = []
    for k in range(cfg.n_queries):
        rng = rng_stream(cfg.seed, "query", k)
        querier = rng.choice(ids)
        plain = k % 2 == 1 if 2 * n_plain == cfg.n_queries else k < n_plain
        if plain:
            box = vicinity_ref(world.agents[querier].location, cfg.vicinity_r).geometry
            near = [it for it in by_id if box.contains_point(_centre_point(it))]
            doc = rng.choice(near) if near else rng.choice(by_id)
            ref = None
        else:
            doc = rng.choice(by_id)
            cx, cy = centroid(doc.st_ref.geometry)
            r = cfg.query_radius
            t = doc.st_ref.time
            ref = SpatioTemporalRef(
                BoundingBox(_clip(cx - r), _clip(cy - r), _clip(cx + r), _clip(cy + r)),
                TimeInterval(_clip(t.start - 0.1), _clip(t.end + 0.1)))
        terms = sorted(doc.terms)
        picked = frozenset(rng.sample(terms, min(cfg.query_terms, len(terms))))
        out.append((querier, IrQuery(picked, ref, cfg.fanout, cfg.ttl)))
    return out


def _centre_point(item: InfoItem) -> Point:
    return Point(*centroid(item.st_ref.geometry))


def exhaustive_answer(world_agents: dict[int, Agent], querier: int, q: IrQuery) -> set[int]:
    """Item ids any other agent would return if everyone were asked."""
    hits = set()
    for a, agent in world_agents.items():
        if a == querier:
            continue
        for it in agent.items:
            if it.item_id not in hits and item_score(it, q) > 0.0:
                hits.add(it.item_id)
    return hits


def run_query(world: World, querier: int, q: IrQuery) -> dict:
    node = world.nodes[querier]
    before = world.net.metrics.total_sent
    qid, envs = node.issue_query(q)
    route_id = envs[0].payload.route.request_id
    world.net.send_all(envs)
    world.run()
    st = node.queries[qid]
    if not st.done:
        raise RuntimeError(f"query {qid} did not complete")
    hops = [s.hops for p in world.nodes.values() for s in p.route_log
            if s.origin == querier and s.request_id == route_id]
    rq = st.range_query
    box = rq.geometry.mbb
    loc = world.agents[querier].location
    rec = {
        "type": "query",
        "query_id": qid,
        "querier": querier,
        "querier_location": [loc.x, loc.y],
        "terms": sorted(q.terms),
        "has_st_ref": q.st_ref is not None,
        "fallback": st.fallback,
        "range_box": [box.xmin, box.ymin, box.xmax, box.ymax],
        "range_time": [rq.time.start, rq.time.end],
        "fanout": q.fanout,
        "ttl": q.ttl,
        "route_hops": hops[0] if hops else None,
        "index_nodes": len(st.nodes),
        "index_flags": sorted(st.flags),
        "asked": st.asked,
        "answers": st.received_answers,
        "messages": world.net.metrics.total_sent - before,
        "results": [[s.item.item_id, s.owner, s.score] for s in st.ranked_results()],
    }
    return rec


def query_phase(world: World, workload=None) -> list[dict]:
    if workload is None:
        workload = make_workload(world)
    records = [run_query(world, querier, q) for querier, q in workload]
    world.net.metrics.queries.extend(records)
    return records


def check_overlay(world: World) -> None:
    placement(world.peers)
    for p in world.peers:
        check_node_invariants(p)


def simulate(cfg: SimConfig, *, trace: bool = False) -> World:
    world = build_world(cfg, trace=trace)
    join_phase(world)
    publish_phase(world)
    check_overlay(world)
    query_phase(world)
    return world


def summary_extra(world: World) -> dict:
    nodes = [p.node for p in world.peers if p.node is not None]
    return {
        "agents": len(world.agents),
        "items": len(world.items),
        "nodes": len(nodes),
        "max_depth": max(len(n.path) for n in nodes),
        "flags": sum(len(n.stored) for n in nodes),
        "seed": world.config.seed,
    }


# -- run directory ------------------------------------------------------------------

def manifest(cfg: SimConfig, out_dir: Path, command: str) -> dict:
    return {
        "artifact": "stquad",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_text(),
        "outputs": {
            "metrics": str(out_dir / "metrics.jsonl"),
            "snapshot": str(out_dir / "snapshot.bin"),
            "overlay": str(out_dir / "overlay.json"),
        },
    }


def write_manifest(cfg: SimConfig, out_dir: Path, command: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest(cfg, out_dir, command), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def overlay_table(world: World) -> dict:
    table = {}
    for p in world.peers:
        if p.node is not None:
            key = "".join(str(d) for d in p.node.path)
            table[key] = {"manager": p.node.manager, "parent": p.node.parent}
    return dict(sorted(table.items(), key=lambda kv: (len(kv[0]), kv[0])))


def write_outputs(world: World, out_dir: Path) -> None:
    (out_dir / "metrics.jsonl").write_text(
        world.net.metrics.to_jsonl(summary_extra(world)), encoding="utf-8")
    (out_dir / "snapshot.bin").write_bytes(write_snapshot(snapshot_records(world.peers)))
    (out_dir / "overlay.json").write_text(
        json.dumps(overlay_table(world), indent=1, sort_keys=False) + "\n", encoding="utf-8")


def read_manifest(run_dir: Path) -> tuple[dict, SimConfig]:
    data = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    return data, parse_config(data["config"])


def read_metrics(path: Path) -> tuple[list[dict], dict]:
    queries, summary = [], {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("type") == "summary":
            summary = obj
        else:
            queries.append(obj)
    return queries, summary


def restore_world(run_dir: Path, cfg: SimConfig | None = None) -> World:
    """Agents from the manifest config, overlay nodes and flags from the snapshot files."""
    if cfg is None:
        _, cfg = read_manifest(run_dir)
    records = read_snapshot((run_dir / "snapshot.bin").read_bytes())
    table = json.loads((run_dir / "overlay.json").read_text(encoding="utf-8"))
    world = build_world(cfg)
    managers: dict[tuple, int] = {}
    for key, entry in table.items():
        path = tuple(int(c) for c in key)
        managers[path] = entry["manager"]
    for path, manager in managers.items():
        peer = world.nodes[manager]
        ancestors = tuple(managers[path[:d]] for d in range(len(path)))
        parent = managers[path[:-1]] if path else None
        peer.node = NodeState(path, manager, parent=parent, capacity=cfg.capacity,
                              ancestors=ancestors)
        peer.entry = manager
    root = managers[()]
    for peer in world.nodes.values():
        if peer.node is None:
            peer.entry = root
    for path, manager in managers.items():
        if path:
            world.nodes[managers[path[:-1]]].node.children[path[-1]] = manager
    for path, f in records:
        world.nodes[managers[path]]._store(f)
    return world


def fallback_centered(rec: dict) -> bool:
    x0, y0, x1, y1 = rec["range_box"]
    qx, qy = rec["querier_location"]
    return math.isclose((x0 + x1) / 2, qx, abs_tol=1e-12) and math.isclose((y0 + y1) / 2, qy, abs_tol=1e-12)


def answerable(world_agents: dict[int, Agent], rec: dict) -> bool:
    return bool(exhaustive_answer(world_agents, rec["querier"], logged_query(rec)))


def logged_query(rec: dict) -> IrQuery:
    """The effective query a metrics record was issued with."""
    box = BoundingBox(*rec["range_box"])
    ref = SpatioTemporalRef(box, TimeInterval(*rec["range_time"]))
    return IrQuery(frozenset(rec["terms"]), ref, rec["fanout"], rec["ttl"])

