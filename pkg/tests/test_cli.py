"""End-to-end tests of the command-line pipeline and its exit codes."""

from __future__ import annotations

import json

import pytest

from forumlens.cli import main
from forumlens.graph import import_graph, load_graph


def _synth_inputs(root, seed=3):
    """Generate small synthetic inputs outside any pipeline workspace."""
    out = root / "inputs"
    code = main(
        [
            "synth",
            "--workspace", str(root / "synth-scratch"),
            "--out", str(out),
            "--seed", str(seed),
            "--communities", "3",
            "--actors", "8",
            "--capecs", "6",
        ]
    )
    assert code == 0
    return out


def _run_all(ws, inputs, *extra):
    return main(
        [
            "run-all",
            "--workspace", str(ws),
            "--posts", str(inputs / "posts.jsonl"),
            "--cve-cwe", str(inputs / "cve_cwe.csv"),
            "--capec-json", str(inputs / "capec.json"),
            *extra,
        ]
    )


@pytest.fixture(scope="module")
def pipeline_ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    inputs = _synth_inputs(root)
    ws = root / "ws"
    assert _run_all(ws, inputs) == 0
    return ws


def test_run_all_produces_all_artifacts(pipeline_ws):
    for name in (
        "corpus.jsonl",
        "corpus_stats.json",
        "cve_cwe.csv",
        "capec.json",
        "graph.json",
        "graph_stats.json",
        "removal.json",
        "communities.json",
        "profiles.csv",
        "sample.csv",
        "sample_stats.json",
        "clusters.json",
        "report.json",
        "report.txt",
        "manifest.json",
    ):
        assert (pipeline_ws / name).is_file(), name


def test_run_all_manifest_records_every_stage(pipeline_ws):
    manifest = json.loads((pipeline_ws / "manifest.json").read_text())
    assert set(manifest["stages"]) == {
        "ingest", "convert-catalog", "graph", "communities", "expertise", "cluster", "report",
    }
    assert manifest["stages"]["graph"]["config"]["capec_threshold"] == 500


def test_run_all_report_sections(pipeline_ws):
    text = (pipeline_ws / "report.txt").read_text()
    for heading in (
        "== Corpus ==",
        "== Bimodal graph and popularity filter ==",
        "== Communities of interest ==",
        "== Analysis sample ==",
        "== Clusters ==",
    ):
        assert heading in text
    report = json.loads((pipeline_ws / "report.json").read_text())
    assert report["corpus"]["posts"] > 0
    assert report["communities"]["count"] >= 2
    assert not report["clusters"].get("skipped")


def test_export_graph_round_trip(pipeline_ws, tmp_path):
    out = tmp_path / "exported.dot"
    code = main(
        ["export-graph", "--workspace", str(pipeline_ws), "--format", "dot", "--out", str(out)]
    )
    assert code == 0
    exported = import_graph(out, "dot")
    assert exported == load_graph(pipeline_ws / "graph.json")


def test_missing_upstream_exits_2(tmp_path):
    assert main(["graph", "--workspace", str(tmp_path / "fresh")]) == 2
    assert main(["communities", "--workspace", str(tmp_path / "fresh")]) == 2
    assert main(["report", "--workspace", str(tmp_path / "fresh")]) == 2


def test_stale_artifact_exits_1_then_force_recovers(tmp_path):
    inputs = _synth_inputs(tmp_path)
    ws = tmp_path / "ws"
    assert _run_all(ws, inputs) == 0

    # Out-of-band edit: hash no longer matches what the manifest recorded.
    with (ws / "corpus.jsonl").open("a") as handle:
        handle.write("\n")
    assert main(["graph", "--workspace", str(ws)]) == 1
    assert main(["graph", "--workspace", str(ws), "--force"]) == 0
    assert main(["graph", "--workspace", str(ws)]) == 0


def test_locked_workspace_exits_3(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / ".lock").write_text("linger\n")
    posts = tmp_path / "posts.jsonl"
    posts.write_text("")
    assert main(["ingest", "--workspace", str(ws), "--posts", str(posts)]) == 3


def test_unreadable_input_exits_3(tmp_path):
    code = main(
        ["ingest", "--workspace", str(tmp_path / "ws"), "--posts", str(tmp_path / "absent.jsonl")]
    )
    assert code == 3


def test_convert_catalog_argument_validation(tmp_path):
    ws = str(tmp_path / "ws")
    # Neither input pair, or a mixed pair, is a usage error.
    assert main(["convert-catalog", "--workspace", ws]) == 1
    assert main(["convert-catalog", "--workspace", ws, "--nvd-json", "x", "--cve-cwe", "y"]) == 1


def test_unknown_command_exits_1(capsys):
    assert main(["no-such-command"]) == 1
    capsys.readouterr()


def test_version_exits_0(capsys):
    assert main(["--version"]) == 0
    assert "forumlens" in capsys.readouterr().out


def test_workspace_env_var(monkeypatch, tmp_path):
    inputs = _synth_inputs(tmp_path)
    target = tmp_path / "env-ws"
    monkeypatch.setenv("FORUMLENS_WORKSPACE", str(target))
    code = main(["ingest", "--posts", str(inputs / "posts.jsonl")])
    assert code == 0
    assert (target / "corpus.jsonl").is_file()


def test_synth_into_workspace_records_stage(tmp_path):
    ws = tmp_path / "ws"
    assert main(["synth", "--workspace", str(ws), "--seed", "1", "--communities", "2",
                 "--actors", "4", "--capecs", "6"]) == 0
    manifest = json.loads((ws / "manifest.json").read_text())
    assert "synth" in manifest["stages"]
    assert (ws / "synth" / "posts.jsonl").is_file()

    # Writing elsewhere leaves the workspace manifest untouched.
    elsewhere = tmp_path / "elsewhere"
    ws2 = tmp_path / "ws2"
    assert main(["synth", "--workspace", str(ws2), "--out", str(elsewhere), "--seed", "1",
                 "--communities", "2", "--actors", "4", "--capecs", "6"]) == 0
    assert (elsewhere / "posts.jsonl").is_file()
    manifest2 = json.loads((ws2 / "manifest.json").read_text()) if (ws2 / "manifest.json").exists() else {"stages": {}}
    assert "synth" not in manifest2["stages"]


def test_cluster_skips_tiny_sample(tmp_path):
    # Two committed actors: enough posts to survive sampling, too few actors
    # to cluster. The stage must succeed and record the skip.
    posts = tmp_path / "posts.jsonl"
    rows = []
    for actor, cve in (("ann", "CVE-2021-0001"), ("ben", "CVE-2021-0002")):
        for i in range(5):
            rows.append(
                json.dumps(
                    {
                        "post_id": f"{actor}-{i}",
                        "actor_id": actor,
                        "forum_id": "f1",
                        "timestamp": f"2021-02-0{i + 1}T12:00:00Z",
                        "content": f"notes on {cve}",
                    }
                )
            )
    posts.write_text("\n".join(rows) + "\n")

    cve_cwe = tmp_path / "cve_cwe.csv"
    cve_cwe.write_text(
        "cve_id,cwe_id\nCVE-2021-0001,CWE-79\nCVE-2021-0002,CWE-89\n"
    )
    capec_json = tmp_path / "capec.json"
    capec_json.write_text(
        json.dumps(
            [
                {"id": 63, "name": "XSS", "related_cwes": ["CWE-79"],
                 "skill_scenarios": ["Low"]},
                {"id": 66, "name": "SQLi", "related_cwes": ["CWE-89"],
                 "skill_scenarios": ["High"]},
            ]
        )
    )

    ws = tmp_path / "ws"
    code = main(
        [
            "run-all",
            "--workspace", str(ws),
            "--posts", str(posts),
            "--cve-cwe", str(cve_cwe),
            "--capec-json", str(capec_json),
        ]
    )
    assert code == 0
    clusters = json.loads((ws / "clusters.json").read_text())
    assert clusters["skipped"] is True
    assert clusters["n_sample"] == 2
    assert "clustering skipped" in (ws / "report.txt").read_text()


def test_single_stage_flags_validated(tmp_path):
    ws = str(tmp_path / "ws")
    assert main(["communities", "--workspace", ws, "--restarts", "0"]) == 1
    assert main(["cluster", "--workspace", ws, "--k-min", "1"]) == 1
    assert main(["cluster", "--workspace", ws, "--k-min", "3", "--k-max", "2"]) == 1
