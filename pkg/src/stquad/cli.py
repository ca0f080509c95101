"""Command-line entry point.

    stquad gen-corpus --config run.cfg --out corpus.tsv
    stquad run        --config run.cfg --out runs/a [--seed 1,2,3 --jobs 3]
    stquad query      runs/a/snapshot.bin --querier 7 --terms "t001 t002" [--box ...]
    stquad eval       runs/a/metrics.jsonl

Exit codes: 0 ok, 2 usage or configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, SimConfig, load_config
from .corpus import CorpusError, generate_synthetic, write_corpus
from .dsti import range_match, read_snapshot
from .flags import FlagKind, MalformedFlagError
from .messages import IrQuery, RangeQuery
from .scenario import (
    build_agents,
    exhaustive_answer,
    load_items,
    manifest,
    logged_query,
    read_manifest,
    read_metrics,
    restore_world,
    run_query,
    simulate,
    synthetic_config,
    write_manifest,
    write_outputs,
)
from .simnet import EventLimitExceeded
from .stgeom import ALL_TIME, BoundingBox, GeometryError, SpatioTemporalRef, TimeInterval

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 2, 3


class UsageError(Exception):
    pass


def _seeds(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(s, 0) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seed: bad seed list {text!r}") from None


def _one_seed(args) -> dict:
    seeds = _seeds(args.seed)
    if not seeds:
        return {}
    if len(seeds) > 1:
        raise UsageError("--seed takes a single value for this command")
    return {"seed": seeds[0]}


def _floats(text: str, n: int, name: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != n:
        raise UsageError(f"{name}: expected {n} comma-separated numbers, got {text!r}")
    return vals


# -- commands -----------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = load_config(args.config, _one_seed(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    info = manifest(cfg, out.parent, "gen-corpus")
    info["outputs"] = {"corpus": str(out)}
    out.with_name(out.name + ".manifest.json").write_text(
        json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_corpus(generate_synthetic(synthetic_config(cfg)), out)
    print(f"wrote {cfg.n_docs} documents to {out}")
    return EXIT_OK


def _run_one(cfg: SimConfig, out_dir: Path) -> dict:
    write_manifest(cfg, out_dir, "run")
    world = simulate(cfg)
    write_outputs(world, out_dir)
    m = world.net.metrics
    return {"out": str(out_dir), "seed": cfg.seed, "splits": m.splits, "merges": m.merges,
            "messages": m.total_sent, "queries": len(m.queries)}


def cmd_run(args) -> int:
    base = load_config(args.config)
    seeds = _seeds(args.seed) or [base.seed]
    out = Path(args.out)
    jobs = []
    for s in seeds:
        cfg = base.replace(seed=s)
        jobs.append((cfg, out if len(seeds) == 1 else out / f"seed-{s}"))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(cfg, d) for cfg, d in jobs]
    for r in results:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def _run_dir(path: str, expect: str) -> Path:
    p = Path(path)
    run_dir = p if p.is_dir() else p.parent
    for name in ("manifest.json", "snapshot.bin", "overlay.json"):
        if not (run_dir / name).is_file():
            raise UsageError(f"{run_dir / name}: missing ({expect} needs a completed run directory)")
    return run_dir


def cmd_query(args) -> int:
    run_dir = _run_dir(args.snapshot, "query")
    _, cfg = read_manifest(run_dir)
    world = restore_world(run_dir, cfg)
    if args.querier not in world.nodes:
        raise UsageError(f"unknown querier id {args.querier}")
    ref = None
    if args.box is not None:
        box = BoundingBox(*_floats(args.box, 4, "--box"))
        span = TimeInterval(*_floats(args.time, 2, "--time")) if args.time else ALL_TIME
        ref = SpatioTemporalRef(box, span)
    elif args.time is not None:
        raise UsageError("--time needs --box")
    terms = frozenset(t.lower() for t in args.terms.split())
    if not terms and ref is None:
        raise UsageError("a query needs --terms or --box")
    fanout = cfg.fanout if args.fanout is None else args.fanout
    ttl = cfg.ttl if args.ttl is None else args.ttl
    rec = run_query(world, args.querier, IrQuery(terms, ref, fanout, ttl))
    x0, y0, x1, y1 = rec["range_box"]
    t0, t1 = rec["range_time"]
    how = "fallback vicinity of querier" if rec["fallback"] else "query reference"
    qx, qy = rec["querier_location"]
    print(f"# querier {args.querier} at ({qx!r}, {qy!r})")
    print(f"# range box {x0!r} {y0!r} {x1!r} {y1!r} time {t0!r} {t1!r} ({how})")
    print(f"# asked {rec['asked']} results {len(rec['results'])}")
    for item_id, owner, score in rec["results"]:
        print(f"{item_id}\t{owner}\t{score!r}")
    return EXIT_OK


def evaluate(run_dir: Path) -> dict:
    queries, summary = read_metrics(run_dir / "metrics.jsonl")
    _, cfg = read_manifest(run_dir)
    flags = [f for _, f in read_snapshot((run_dir / "snapshot.bin").read_bytes())]
    agents = build_agents(cfg, load_items(cfg))
    kinds = frozenset({FlagKind.EXPERTISE, FlagKind.EXPERT_LINK})
    hit = logged_total = oracle_total = 0
    recalls = []
    answerable = answered = 0
    for rec in queries:
        q = logged_query(rec)
        rq = RangeQuery(0, q.st_ref.geometry, q.st_ref.time, kinds, 0)
        oracle = {f.flag_id for f in flags if range_match(f, rq)}
        logged = set(rec["index_flags"])
        hit += len(oracle & logged)
        logged_total += len(logged)
        oracle_total += len(oracle)
        best = exhaustive_answer(agents, rec["querier"], q)
        if best:
            got = {r[0] for r in rec["results"]}
            recalls.append(len(got & best) / len(best))
            answerable += 1
            answered += bool(got)
    return {
        "queries": len(queries),
        "dsti_recall": hit / oracle_total if oracle_total else 1.0,
        "dsti_precision": hit / logged_total if logged_total else 1.0,
        "answerable_queries": answerable,
        "answerable_with_results": answered,
        "success_rate": answered / answerable if answerable else 1.0,
        "item_recall_mean": sum(recalls) / len(recalls) if recalls else 1.0,
        "item_recall_min": min(recalls) if recalls else 1.0,
        "messages_total": summary.get("messages_total"),
    }


def cmd_eval(args) -> int:
    if args.mode != "oracle":
        raise UsageError(f"unknown eval mode {args.mode!r}")
    metrics = Path(args.metrics)
    if not metrics.is_file():
        raise UsageError(f"{metrics}: no such metrics file")
    report = evaluate(_run_dir(str(metrics), "eval"))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stquad", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic corpus file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="corpus TSV path")
    p.add_argument("--seed")
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("run", help="simulate join, publish and query phases")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", help="seed override; a comma list runs one simulation per seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("query", help="issue one query against a finished run")
    p.add_argument("snapshot", help="snapshot.bin of a run (or its directory)")
    p.add_argument("--querier", type=int, required=True)
    p.add_argument("--terms", default="")
    p.add_argument("--box", help="xmin,ymin,xmax,ymax in the unit square")
    p.add_argument("--time", help="start,end in [0,1]")
    p.add_argument("--fanout", type=int)
    p.add_argument("--ttl", type=int)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("eval", help="score a run against brute-force oracles")
    p.add_argument("metrics", help="metrics.jsonl of a run")
    p.add_argument("--mode", default="oracle")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, CorpusError, GeometryError, MalformedFlagError,
            FileNotFoundError) as exc:
        print(f"stquad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EventLimitExceeded as exc:
        print(f"stquad: aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
