import json

import pytest

from stquad.cli import main
from stquad.scenario import read_metrics

SMALL = """\
# smoke configuration
seed = 3
n_docs = 800
n_agents = 40
n_hotspots = 6
capacity = 8
n_queries = 20
"""


def write_cfg(tmp_path, text=SMALL, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    assert main(["run", "--config", write_cfg(tmp), "--out", str(tmp / "out")]) == 0
    return tmp / "out"


def test_gen_corpus_is_deterministic(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["gen-corpus", "--config", cfg, "--out", str(tmp_path / "a.tsv")]) == 0
    assert main(["gen-corpus", "--config", cfg, "--out", str(tmp_path / "b.tsv")]) == 0
    a = (tmp_path / "a.tsv").read_bytes()
    assert a == (tmp_path / "b.tsv").read_bytes() and len(a.splitlines()) == 800
    info = json.loads((tmp_path / "a.tsv.manifest.json").read_text())
    assert info["command"] == "gen-corpus" and "n_docs = 800" in info["config"]


def test_missing_key_names_it(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "n_docs = 100\n")
    assert main(["gen-corpus", "--config", cfg, "--out", str(tmp_path / "c.tsv")]) == 2
    assert "n_agents" in capsys.readouterr().err


def test_unknown_key_is_usage_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "capacityy = 3\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
    assert "capacityy" in capsys.readouterr().err


def test_run_writes_manifest_and_splits(run_dir):
    for name in ("manifest.json", "metrics.jsonl", "snapshot.bin", "overlay.json"):
        assert (run_dir / name).is_file()
    queries, summary = read_metrics(run_dir / "metrics.jsonl")
    assert summary["splits"] > 0 and len(queries) == 20
    assert summary["messages_total"] == sum(summary["messages"].values())


def test_corpus_file_run_matches_synthetic(tmp_path, run_dir):
    cfg = write_cfg(tmp_path)
    corpus = tmp_path / "c.tsv"
    assert main(["gen-corpus", "--config", cfg, "--out", str(corpus)]) == 0
    cfg2 = write_cfg(tmp_path, SMALL.replace("n_docs = 800\n", f"corpus = {corpus}\n"), "file.cfg")
    assert main(["run", "--config", cfg2, "--out", str(tmp_path / "out")]) == 0
    _, s1 = read_metrics(run_dir / "metrics.jsonl")
    _, s2 = read_metrics(tmp_path / "out" / "metrics.jsonl")
    assert s1["items"] == s2["items"] == 800


def schema(obj):
    return sorted(obj) if isinstance(obj, dict) else type(obj).__name__


def test_seed_changes_metrics_not_schema(tmp_path, run_dir):
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "s"), "--seed", "4,5", "--jobs", "2"]) == 0
    base = (run_dir / "metrics.jsonl").read_text()
    other = (tmp_path / "s" / "seed-4" / "metrics.jsonl").read_text()
    assert base != other
    q1, s1 = read_metrics(run_dir / "metrics.jsonl")
    q2, s2 = read_metrics(tmp_path / "s" / "seed-4" / "metrics.jsonl")
    assert schema(s1) == schema(s2) and schema(s1["messages"]) != []
    assert {tuple(schema(r)) for r in q1} == {tuple(schema(r)) for r in q2}
    assert (tmp_path / "s" / "seed-5" / "metrics.jsonl").is_file()


def test_rerun_is_byte_identical(tmp_path, run_dir):
    assert main(["run", "--config", write_cfg(tmp_path), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "metrics.jsonl").read_bytes() == (run_dir / "metrics.jsonl").read_bytes()
    assert (tmp_path / "again" / "snapshot.bin").read_bytes() == (run_dir / "snapshot.bin").read_bytes()


def hotspot_query(run_dir):
    """A logged query with a reference box whose exhaustive answer is nonempty."""
    queries, _ = read_metrics(run_dir / "metrics.jsonl")
    for rec in queries:
        if rec["has_st_ref"] and rec["results"]:
            return rec
    raise AssertionError("no answered query with a box")


def test_query_hotspot_box(run_dir, capsys):
    rec = hotspot_query(run_dir)
    box = ",".join(repr(v) for v in rec["range_box"])
    code = main(["query", str(run_dir / "snapshot.bin"), "--querier", str(rec["querier"]),
                 "--terms", " ".join(rec["terms"]), "--box", box, "--time", "%r,%r" % tuple(rec["range_time"])])
    out = capsys.readouterr().out.splitlines()
    assert code == 0 and out[1].endswith("(query reference)")
    rows = [line.split("\t") for line in out if not line.startswith("#")]
    assert [[int(r[0]), int(r[1]), float(r[2])] for r in rows] == rec["results"]


def test_query_fallback_header(run_dir, capsys):
    queries, _ = read_metrics(run_dir / "metrics.jsonl")
    rec = next(r for r in queries if not r["has_st_ref"])
    assert main(["query", str(run_dir), "--querier", str(rec["querier"]), "--terms", " ".join(rec["terms"])]) == 0
    out = capsys.readouterr().out.splitlines()
    x, y = rec["querier_location"]
    assert out[0] == f"# querier {rec['querier']} at ({x!r}, {y!r})"
    assert "fallback vicinity of querier" in out[1]
    x0, y0, x1, y1 = (float(v) for v in out[1].split()[3:7])
    assert (x0 + x1) / 2 == pytest.approx(x) and (y0 + y1) / 2 == pytest.approx(y)


def test_query_nonsense_is_empty(run_dir, capsys):
    code = main(["query", str(run_dir), "--querier", "1", "--terms", "zzzz qqqq", "--box", "0.01,0.01,0.02,0.02"])
    out = capsys.readouterr().out.splitlines()
    assert code == 0 and all(line.startswith("#") for line in out)


def test_query_unknown_querier(run_dir, capsys):
    assert main(["query", str(run_dir), "--querier", "999", "--terms", "t001"]) == 2
    assert "999" in capsys.readouterr().err


def test_eval_reports_exact_index(run_dir, tmp_path, capsys):
    assert main(["eval", str(run_dir / "metrics.jsonl"), "--out", str(tmp_path / "rep.json")]) == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["dsti_recall"] == 1.0 and rep["dsti_precision"] == 1.0
    assert rep["queries"] == 20 and 0.0 <= rep["item_recall_mean"] <= 1.0


def test_eval_missing_snapshot(run_dir, tmp_path, capsys):
    d = tmp_path / "broken"
    d.mkdir()
    for name in ("manifest.json", "metrics.jsonl", "overlay.json"):
        (d / name).write_bytes((run_dir / name).read_bytes())
    assert main(["eval", str(d / "metrics.jsonl")]) == 2
    assert "snapshot.bin" in capsys.readouterr().err


def test_exhaustive_fanout_gives_full_recall(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "fanout = 40\nttl = 10\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    capsys.readouterr()
    assert main(["eval", str(tmp_path / "r" / "metrics.jsonl")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["answerable_queries"] > 0 and rep["item_recall_min"] == 1.0


def test_event_limit_aborts(tmp_path, capsys):
    # the limit applies to each run to quiescence; the join phase alone needs more than 50
    cfg = write_cfg(tmp_path, SMALL + "event_limit = 50\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "r")]) == 3
    assert "event limit 50" in capsys.readouterr().err
