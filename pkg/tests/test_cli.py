import csv
import json
import subprocess
import sys

import pytest

from odp import cli
from odp.extmem import AccessTrace
from odp.sketches import sketch_from_bytes


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "d.csv"
    assert run(capsys, "gen", "--n", 100, "--k", 4, "--dist", "uniform", "--seed", 7, "--out", path)[0] == 0
    return path


def test_gen_rows_and_domain(dataset):
    rows = list(csv.reader(dataset.open()))
    assert rows[0] == ["record_id", "item_type"]
    assert len(rows) == 101
    assert {int(t) for _, t in rows[1:]} <= {1, 2, 3, 4}
    assert len({r for r, _ in rows[1:]}) == 100


def test_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        run(capsys, "gen", "--n", 500, "--m", 1000, "--dist", "zipf", "--seed", 3, "--out", p)
    assert a.read_bytes() == b.read_bytes()


def test_gen_to_stdout(capsys):
    code, out, _ = run(capsys, "gen", "--n", 5, "--k", 2, "--seed", 1)
    assert code == 0 and out.splitlines()[0] == "record_id,item_type" and len(out.splitlines()) == 6


@pytest.mark.parametrize("argv", [["gen", "--n", "0", "--k", "4"], ["gen", "--n", "10"], ["gen", "--n", "10", "--k", "0"]])
def test_gen_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_gen_seed_from_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ODP_SEED", "11")
    _, a, _ = run(capsys, "gen", "--n", 20, "--k", 3)
    _, b, _ = run(capsys, "gen", "--n", 20, "--k", 3)
    _, c, _ = run(capsys, "gen", "--n", 20, "--k", 3, "--seed", 11)
    assert a == b == c


def test_query_histogram_json(dataset, capsys):
    code, out, _ = run(capsys, "query", "histogram", dataset, "--eps", 1, "--k", 4, "--seed", 1)
    assert code == 0
    doc = json.loads(out)
    assert doc["schema_version"] == cli.SCHEMA_VERSION
    assert doc["query"] == "histogram"
    assert len(doc["result"]["counts"]) == 4
    assert doc["result"]["padding_constant"] == 47 and doc["result"]["augmented_length"] == 476
    assert doc["params"] == {"epsilon": 1.0, "delta": 1e-4}
    assert doc["private"] is True
    assert doc["budget_remaining"]["epsilon"] == pytest.approx(0.0)


def test_query_deterministic_under_seed(dataset, capsys):
    a = run(capsys, "query", "distinct", dataset, "--eps", 0.5, "--seed", 4)[1]
    b = run(capsys, "query", "distinct", dataset, "--eps", 0.5, "--seed", 4)[1]
    assert a == b


def test_budget_exhaustion_across_invocations(dataset, tmp_path, capsys):
    ledger = tmp_path / "ledger.json"
    common = ["--eps", 0.6, "--k", 4, "--budget-eps", 1.0, "--ledger", ledger, "--seed", 1]
    assert run(capsys, "query", "histogram-oram", dataset, *common)[0] == 0
    code, out, _ = run(capsys, "query", "histogram-oram", dataset, *common)
    assert code == 3
    err = json.loads(out)["error"]
    assert err["kind"] == "budget_exhausted"
    assert len(json.loads(ledger.read_text())["entries"]) == 1


def test_zero_noise_needs_unsafe(dataset, capsys):
    assert run(capsys, "query", "histogram", dataset, "--eps", 1, "--k", 4, "--zero-noise")[0] == 2
    code, out, _ = run(capsys, "query", "histogram", dataset, "--eps", 1, "--k", 4, "--zero-noise", "--unsafe")
    doc = json.loads(out)
    assert code == 0 and doc["private"] is False
    assert sum(doc["result"]["counts"]) == 100


def test_malformed_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("record_id,item_type\n1,2\n2,x\n")
    code, out, _ = run(capsys, "query", "distinct", bad, "--eps", 1)
    assert code == 2
    err = json.loads(out)["error"]
    assert err["kind"] == "parse_error" and ":3" in err["message"]


def test_heavy_hitters_precondition_is_usage_error(dataset, capsys):
    code, out, _ = run(capsys, "query", "heavy-hitters", dataset, "--eps", 1, "--k", 40, "--m", 4, "--budget-delta", 0.5)
    assert code == 2 and json.loads(out)["error"]["kind"] == "configuration_error"


def test_trace_round_trip(dataset, tmp_path, capsys):
    t1, t2 = tmp_path / "t1.txt", tmp_path / "t2.txt"
    code, out, _ = run(capsys, "query", "histogram", dataset, "--eps", 1, "--k", 4, "--seed", 2, "--trace", t1)
    doc = json.loads(out)
    trace = AccessTrace.from_text(t1.read_text())
    assert len(trace) == doc["trace_events"]
    assert trace.to_text() == t1.read_text()
    run(capsys, "query", "histogram", dataset, "--eps", 1, "--k", 4, "--seed", 2, "--trace", t2)
    code, out, _ = run(capsys, "verify", "traces", t1, t2)
    assert code == 0 and out.startswith("identical")


def test_verify_traces_divergence(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    a.write_text("0,r,x,0\n1,r,x,1\n")
    b.write_text("0,r,x,0\n1,w,x,1\n")
    code, out, _ = run(capsys, "verify", "traces", a, b)
    assert code == 4 and "event 1" in out


def test_freq_oracle_sketch_blob(dataset, tmp_path, capsys):
    blob = tmp_path / "s.bin"
    code, out, _ = run(capsys, "query", "freq-oracle", dataset, "--eps", 1, "--items", "1,2", "--sketch-out", blob)
    doc = json.loads(out)
    s = sketch_from_bytes(blob.read_bytes())
    assert (s.width, s.depth) == (doc["result"]["width"], doc["result"]["depth"])
    assert set(doc["result"]["frequencies"]) == {"1", "2"}


@pytest.mark.parametrize("alg, code", [("sort", 0), ("shuffle", 0), ("oram", 0), ("histogram-oram", 0), ("naive", 4), ("histogram", 4)])
def test_verify_obliviousness(tmp_path, capsys, alg, code):
    out_dir = tmp_path / alg
    got, out, _ = run(capsys, "verify", "obliviousness", "--alg", alg, "--pairs", 10, "--out", out_dir)
    assert got == code
    assert (out_dir / "report.csv").exists() and (out_dir / "access_pattern_0.png").exists()
    if code:
        assert "diverges" in out


def test_verify_utility_heavy_hitters(tmp_path, capsys):
    out_dir = tmp_path / "hh"
    code, _, _ = run(
        capsys, "verify", "utility", "--alg", "heavy-hitters", "--n", 2000, "--k", 10, "--m", 256,
        "--trials", 20, "--out", out_dir,
    )
    rows = list(csv.DictReader((out_dir / "report.csv").open()))
    assert [r["name"] for r in rows] == ["heavy_hitters_item_error", "heavy_hitters_floor", "heavy_hitters_completeness"]
    assert code == 0


def test_verify_trace_dp_small(tmp_path, capsys):
    out_dir = tmp_path / "tdp"
    run(capsys, "verify", "trace-dp", "--alg", "histogram", "--n", 60, "--trials", 500, "--strawman-trials", 300, "--out", out_dir)
    rows = {r["name"]: r for r in csv.DictReader((out_dir / "report.csv").open())}
    assert set(rows) == {"estimator_calibration", "histogram_trace_dp", "strawman_no_noise"}
    assert rows["strawman_no_noise"]["pass"] == "pass"
    assert (out_dir / "log_ratios_histogram.png").exists()


def test_unknown_algorithm(capsys, tmp_path):
    assert run(capsys, "verify", "obliviousness", "--alg", "bogus", "--out", tmp_path)[0] == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "odp.cli", "gen", "--n", "3", "--k", "2", "--seed", "0"],
        capture_output=True, text=True, check=True,
    )
    assert proc.stdout.startswith("record_id,item_type")
