import json
import subprocess
import sys

import pytest

from carnot_gap.cli import main


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_catalog_list_and_show(capsys):
    code, out = run(["catalog", "list"], capsys)
    assert code == 0
    names = [e["name"] for e in json.loads(out.out)]
    assert "heisenberg-h1" in names and "cartan" not in names
    code, out = run(["catalog", "show", "engel"], capsys)
    assert code == 0 and json.loads(out.out)["weights"] == [1, 1, 2, 3]
    code, out = run(["catalog", "show", "heisenberg-h2"], capsys)
    assert code == 2 and "heisenberg-h1" in out.err


def test_usage_errors(capsys):
    assert run([], capsys)[0] == 2
    assert run(["no-such-command"], capsys)[0] == 2
    assert run(["check-condition", "--group", "heisenberg-h1"], capsys)[0] == 2
    assert run(["check-condition", "--group", "heisenberg-h1", "--j0", 3, "--gamma", 4], capsys)[0] == 2


def test_check_condition_example(tmp_path, capsys):
    out = tmp_path / "report.json"
    code, _ = run(["check-condition", "--group", "heisenberg-h1", "--norm", "kaplan", "--j0", 1, "--gamma", 4,
                   "--seed", 7, "--budget", 20_000, "--out", out], capsys)
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["verdict"] == "holds" and rep["j0"] == 1
    assert rep["infimumEstimate"] == pytest.approx(1.0, abs=1e-6)
    manifest = json.loads((tmp_path / "report.json.manifest.json").read_text())
    assert manifest["command"] == "check-condition" and manifest["seed"] == 7
    assert str(out) in manifest["outputs"] and "wallTimeSeconds" in manifest


def test_check_condition_verdict_failure(capsys):
    code, out = run(["check-condition", "--group", "engel", "--j0", 2, "--gamma", 12, "--budget", 10_000], capsys)
    assert code == 1 and json.loads(out.out)["verdict"] == "fails"


def test_determinism_byte_identical(tmp_path, capsys):
    outs = []
    for k in range(2):
        p = tmp_path / f"s{k}.json"
        run(["check-condition", "--group", "engel", "--j0", 1, "--gamma", 12, "--budget", 5_000,
             "--seed", 3, "--out", p], capsys)
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    csvs = []
    for k in range(2):
        p = tmp_path / f"c{k}.csv"
        run(["sample", "--group", "heisenberg-h1", "--norm", "kaplan", "--p", 8, "--count", 2_000,
             "--seed", 5, "--out", p], capsys)
        csvs.append(p.read_bytes())
    assert csvs[0] == csvs[1]


def test_threads_env_does_not_change_output(tmp_path, capsys, monkeypatch):
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("CARNOT_GAP_THREADS", threads)
        p = tmp_path / f"t{threads}.json"
        assert run(["check-condition", "--group", "heisenberg-h1", "--j0", 2, "--gamma", 4,
                    "--budget", 20_000, "--out", p], capsys)[0] == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    monkeypatch.setenv("CARNOT_GAP_THREADS", "many")
    assert run(["check-condition", "--group", "heisenberg-h1", "--j0", 1, "--gamma", 4, "--budget", 100],
               capsys)[0] == 2


def test_validate_bad_group_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "bad", "stratumDims": [2, 1], "step2Matrices": [[[0, 1], [1, 0]]]}, indent=1))
    code, out = run(["validate", "--group-file", bad], capsys)
    assert code == 2 and "line" in out.err and "B^(1)" in out.err
    broken = tmp_path / "broken.json"
    broken.write_text("{\n  \"name\": \n")
    assert run(["validate", "--group-file", broken], capsys)[0] == 2
    missing = tmp_path / "missing.json"
    missing.write_text("{}")
    code, out = run(["validate", "--group-file", missing], capsys)
    assert code == 2 and "stratumDims" in out.err


def test_validate_good_group(capsys):
    code, out = run(["validate", "--group", "engel"], capsys)
    assert code == 0 and json.loads(out.out)["valid"] is True


def test_sample_csv(tmp_path, capsys):
    p = tmp_path / "s.csv"
    assert run(["sample", "--group", "euclidean-1d", "--a", 0.5, "--p", 2, "--count", 1_000,
                "--out", p], capsys)[0] == 0
    lines = p.read_text().splitlines()
    assert lines[0].startswith("#") and json.loads(lines[0][1:].strip())["count"] == 1000
    assert lines[1] == "x1" and len(lines) == 1002


def test_grad_check_csv(capsys):
    code, out = run(["grad-check", "--group", "heisenberg-h1", "--norm", "kaplan", "--count", 10, "--sphere"],
                    capsys)
    assert code == 0
    rows = out.out.strip().splitlines()
    assert len(rows) == 11


def test_estimate_gap_example(tmp_path, capsys):
    p = tmp_path / "gap.json"
    plot = tmp_path / "plot.csv"
    code, _ = run(["estimate-gap", "--group", "euclidean-1d", "--a", 0.5, "--p", 2, "--method", "both",
                   "--count", 40_000, "--normalization", "--emit-plot", plot, "--out", p], capsys)
    assert code == 0
    doc = json.loads(p.read_text())
    for method in ("ritz", "grid"):
        assert doc["estimates"][method]["lambda1"] == pytest.approx(1.0, rel=0.05)
    assert plot.exists() and len(plot.read_text().splitlines()) > 2


def test_estimate_gap_spec_file(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"group": "euclidean-1d", "a": 1.0, "p": 2}))
    code, out = run(["estimate-gap", "--spec", spec, "--method", "grid"], capsys)
    assert code == 0
    assert json.loads(out.out)["estimates"]["grid"]["lambda1"] == pytest.approx(2.0, rel=0.01)


def test_degenerate_dictionary_exit_code(capsys):
    # with a single sample every dictionary function is constant on the batch
    code, out = run(["estimate-gap", "--group", "euclidean-1d", "--method", "ritz", "--count", 1,
                     "--chains", 1], capsys)
    assert code == 3 and "numeric failure" in out.err


def test_ubound_and_ratio_and_report(tmp_path, capsys):
    ub = tmp_path / "ub.json"
    code, _ = run(["ubound-fit", "--group", "euclidean-1d", "--a", 0.5, "--p", 4, "--gamma", 2,
                   "--count", 20_000, "--train", 30, "--holdout", 30, "--out", ub], capsys)
    assert code in (0, 1)
    doc = json.loads(ub.read_text())
    assert doc["A"] > 0 and doc["B"] >= 0 and (code == 0) == doc["passed"]
    pr = tmp_path / "pr.json"
    assert run(["poincare-ratio", "--group", "euclidean-1d", "--a", 0.5, "--p", 2, "--q", 2, "--count", 20_000,
                "--dict-degree", 3, "--out", pr], capsys)[0] == 0
    assert json.loads(pr.read_text())["ratio"] == pytest.approx(1.0, abs=0.05)
    assert run(["poincare-ratio", "--group", "euclidean-1d", "--p", 2, "--q", 3, "--count", 1_000], capsys)[0] == 2
    out_dir = tmp_path / "rep"
    assert run(["report", ub, pr, "--out-dir", out_dir], capsys)[0] == 0
    md = (out_dir / "report.md").read_text()
    assert "euclidean-1d" in md and "ratio" in md
    assert (out_dir / "report.csv").read_text().count("\n") >= 3


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "carnot_gap.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
