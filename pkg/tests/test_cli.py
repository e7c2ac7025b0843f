import json
import math
import sys

import numpy as np
import pytest

from graphshap import cli, io

OR_PHI = 0.5 * math.log2(4 / 3)
OR_ARGS = ["--oracle", "builtin:or", "--background", "builtin:or-domain", "--target", "1,1"]


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_explain_or_gate(tmp_path, capsys):
    code, out, _ = run(["explain", *OR_ARGS, "--out", str(tmp_path)], capsys)
    assert code == 0
    a = io.read_attribution(tmp_path / "attribution.csv")
    assert np.max(np.abs(a.phi - OR_PHI)) <= 1e-12
    assert "value_calls=4" in out
    norm = (tmp_path / "normalized.csv").read_text().splitlines()
    assert norm[0] == "feature_id,phi,normalized_phi,rank"
    assert norm[1].split(",")[2] == "1"


def test_csve_without_adjacency_is_usage_error(tmp_path, capsys):
    code, _, err = run(["explain", *OR_ARGS, "--method", "csve", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert err.startswith("error: UsageError:") and "adjacency" in err
    assert len(err.strip().splitlines()) == 1


def test_hsve_from_partition_file(tmp_path, capsys):
    part = tmp_path / "p.csv"
    part.write_text("node_id,community_id\n0,0\n1,0\n")
    code, _, _ = run(["explain", *OR_ARGS, "--method", "hsve", "--partition", str(part), "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    a = io.read_attribution(tmp_path / "o" / "attribution.csv")
    assert np.max(np.abs(a.phi - OR_PHI)) <= 1e-12


def test_seeded_mc_is_repeatable(tmp_path, capsys):
    argv = ["explain", *OR_ARGS, "--exact-cutoff", "1", "--mc-samples", "200", "--seed", "7"]
    for k, threads in enumerate(["1", "4"]):
        assert run(argv + ["--out", str(tmp_path / str(k)), "--threads", threads], capsys)[0] == 0
    assert (tmp_path / "0" / "attribution.csv").read_bytes() == (tmp_path / "1" / "attribution.csv").read_bytes()
    resolved = json.loads((tmp_path / "0" / "resolved_config.json").read_text())
    assert resolved["seed"] == 7 and resolved["mc_samples"] == 200


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"oracle": "builtin:or", "background": "builtin:or-domain", "target": "1,1", "seed": 3}))
    assert run(["explain", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "o")], capsys)[0] == 0
    resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
    assert resolved["seed"] == 4


def test_exec_oracle(tmp_path, capsys):
    cmd = f"exec:{sys.executable} -m graphshap.reference_child"
    argv = ["explain", "--oracle", cmd, "--background", "builtin:or-domain", "--target", "1,1", "--out", str(tmp_path)]
    assert run(argv, capsys)[0] == 0
    a = io.read_attribution(tmp_path / "attribution.csv")
    assert np.max(np.abs(a.phi - OR_PHI)) <= 1e-12


def test_exec_oracle_protocol_failure(tmp_path, capsys):
    cmd = f"exec:{sys.executable} -m graphshap.reference_child --model bad-shape"
    argv = ["explain", "--oracle", cmd, "--background", "builtin:or-domain", "--target", "1,1", "--out", str(tmp_path)]
    code, _, err = run(argv, capsys)
    assert code == 3
    assert "ProtocolError" in err


def test_graph_two_cliques_and_minus_inf(tmp_path, capsys):
    code, out, _ = run(["communities", "--graph", "builtin:two-cliques", "--out", str(tmp_path / "c")], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "c" / "communities.json").read_text())
    assert summary["n_communities"] == 2
    assert summary["modularity"] == pytest.approx(0.5, abs=1e-9)
    code, _, _ = run(["graph", "--graph", "builtin:two-cliques", "--threshold", "-inf", "--out", str(tmp_path / "g")], capsys)
    assert code == 0
    adj = io.read_matrix(tmp_path / "g" / "adjacency.csv")
    assert adj.sum() == 10 * 9


def test_graph_planted_correlation(tmp_path, capsys):
    assert run(["graph", "--dataset", "builtin:planted-correlation", "--out", str(tmp_path)], capsys)[0] == 0
    w = io.read_matrix(tmp_path / "weights.csv")
    assert abs(w[0, 1] - 0.8) <= 0.02


def test_graph_from_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,0.5\n0.5,x\n")
    code, _, err = run(["graph", "--graph", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    assert "row 2, column 2" in err


def test_validate_selected_properties(tmp_path, capsys):
    code, out, _ = run(["validate", "--property", "appendix-identity", "--n", "10"], capsys)
    assert code == 0
    assert out.startswith("PASS appendix-identity")
    code, out, _ = run(["validate", "--property", "or-gate", "--out", str(tmp_path)], capsys)
    assert code == 0 and out.count("PASS") == 2
    assert (tmp_path / "validation.csv").exists()


def test_validate_unknown_property(capsys):
    code, _, err = run(["validate", "--property", "nope"], capsys)
    assert code == 2 and "unknown properties" in err


def test_validate_default_run(capsys):
    code, out, _ = run(["validate"], capsys)
    assert code == 0
    assert "FAIL" not in out and out.count("PASS") >= 15


def test_corrupt_or_gate(tmp_path, capsys):
    assert run(["explain", *OR_ARGS, "--out", str(tmp_path / "e")], capsys)[0] == 0
    argv = [
        "corrupt", *OR_ARGS, "--attribution", str(tmp_path / "e" / "attribution.csv"),
        "--coverage", "1.0", "--coverage", "0.5", "--coverage", "0.9", "--out", str(tmp_path / "c"),
    ]
    assert run(argv, capsys)[0] == 0
    summary = json.loads((tmp_path / "c" / "corruption_summary.json").read_text())
    assert summary["nested_prefixes"] is True
    assert summary["by_coverage"]["1"]["mean_delta_prob"] == pytest.approx(0.25, abs=1e-15)


def test_corrupt_requires_matching_counts(tmp_path, capsys):
    assert run(["explain", *OR_ARGS, "--out", str(tmp_path / "e")], capsys)[0] == 0
    targets = tmp_path / "t.csv"
    targets.write_text("a,b\n1,1\n0,1\n")
    argv = [
        "corrupt", "--oracle", "builtin:or", "--background", "builtin:or-domain", "--targets", str(targets),
        "--attribution", str(tmp_path / "e" / "attribution.csv"), "--out", str(tmp_path / "c"),
    ]
    assert run(argv, capsys)[0] == 2
