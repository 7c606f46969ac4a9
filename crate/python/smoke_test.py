"""Smoke test for the hgcr Python extension.

Build and install first, e.g.:
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/hgcr-*.whl
"""

import json
import pathlib
import sys
import tempfile

import hgcr

ROOT = pathlib.Path(__file__).resolve().parent.parent
CORPUS = ROOT / "crates" / "core" / "fixtures" / "corpus.jsonl"


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok: {msg}")


def main():
    toy = hgcr.TemporalGraph.from_records(
        [("1", 2019, ["A", "B", "C"], None), ("2", 2020, ["C", "D"], None), ("3", 2021, ["A", "B"], "A binds B.")]
    )
    check((toy.node_count, toy.edge_count) == (4, 4), "toy graph has 4 nodes and 4 edges")
    check(toy.neighbors("C", 2019) == ["A", "B"], "neighbors respect the snapshot year")

    g = hgcr.TemporalGraph.from_jsonl(str(CORPUS))
    queries = g.discover_queries(2022)
    check(queries == [("drug_a", "drug_z", 2022)], "fixture corpus has one 2022 discovery")
    paths = g.candidate_paths("drug_a", "drug_z", 2022)
    check(["drug_a", "enzyme_b", "drug_z"] in paths, "three-node path through enzyme_b found")

    samples = g.build_dataset(2022, mode="test", seed=1)
    check(any(s["positive"] for s in samples), "dataset contains positives")
    check({s["kind"] for s in samples} <= {"none", "hard"}, "test mode emits only positives and hard negatives")

    trace = json.loads(g.explain("drug_a", "drug_z", 2022, ["drug_a", "enzyme_b", "drug_z"], k=3, seed=2))
    check(1 <= trace["iterations_used"] <= 5, "explanation trace respects the iteration cap")

    check(abs(hgcr.roc_auc([0.8, 0.7, 0.6, 0.5], [True, False, True, False]) - 0.75) < 1e-12, "AUC worked example")
    check(
        abs(hgcr.average_precision([0.8, 0.7, 0.6, 0.5], [True, False, True, False]) - (1 + 2 / 3) / 2) < 1e-12,
        "AP worked example",
    )
    check(abs(hgcr.margin_loss(0.6, [0.5, 0.4]) - 0.15) < 1e-12, "margin loss example")
    report = json.loads(hgcr.metrics_report([("q1", [0.9, 0.1], [True, False]), ("q2", [0.2, 0.4], [True, False])]))
    check(abs(report["macro_auc"] - 0.5) < 1e-12, "macro AUC averages per query")

    r = hgcr.Ranker(d_model=4, heads=2, d_n=3, d_p=4, seed=0)
    ctx = [[0.5, -1.0, 0.25, 2.0], [-0.75, 0.5, 1.5, -0.25]]
    nodes = [[1.0, 0.0, -1.0], [0.3, 0.6, 0.9], [-0.4, 0.8, -0.2]]
    s = r.score(ctx, nodes)
    check(0.0 < s < 1.0, "ranker score in (0, 1)")
    check(hgcr.Ranker.from_checkpoint(r.to_checkpoint()).score(ctx, nodes) == s, "checkpoint round trip")
    losses = r.fit([((ctx, nodes), [(ctx[::-1], nodes[::-1])])], epochs=3)
    check(len(losses) == 3, "fit reports one loss per epoch")

    with tempfile.TemporaryDirectory() as out:
        code = hgcr.run_cli(["--out-dir", out, "build-graph", "--corpus", str(CORPUS)])
        check(code == 0, "CLI build-graph exits 0")
        check(hgcr.run_cli(["--out-dir", out, "build-graph", "--corpus", "/missing.jsonl"]) == 2, "missing file exits 2")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
