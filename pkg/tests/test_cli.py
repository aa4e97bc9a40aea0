import csv
import io
import json
import subprocess
import sys

import pytest

from mmapq.cli import COLUMNS, run
from mmapq.fixtures import fixture_path


def table(capsys, argv):
    status = run(argv)
    out = capsys.readouterr()
    return status, list(csv.DictReader(io.StringIO(out.out))), out.err


def test_analyze_mm_inf(capsys):
    status, rows, _ = table(capsys, ["analyze", "--model", "mm_inf"])
    assert status == 0
    lq = [r for r in rows if r["quantity"] == "L_q" and r["type_index"] == ""]
    assert len(lq) == 1 and float(lq[0]["value"]) == pytest.approx(1.0, abs=1e-8)
    assert list(rows[0]) == list(COLUMNS)
    assert all(r["stderr"] == "" for r in rows)


def test_analyze_with_points_and_pmf(capsys):
    status, rows, _ = table(capsys, ["analyze", "--model", "mm_inf_catastrophes", "--horizon", "5",
                                     "--z-points", "0,0.5", "--s-points", "1", "--pmf"])
    assert status == 0
    names = {r["quantity"] for r in rows}
    assert {"in_service_pgf[z=0.0]", "in_service_pgf[z=0.5]", "resource_lst[s=1.0]", "pmf[n=0]", "pmf_tail"} <= names
    pmf = [float(r["value"]) for r in rows if r["quantity"].startswith("pmf[")]
    assert sum(pmf) == pytest.approx(1.0, abs=1e-6)


def test_invalid_model_exits_2(capsys):
    status, rows, err = table(capsys, ["analyze", "--model", str(fixture_path("non_generator"))])
    assert status == 2 and rows == []
    assert "NonGenerator" in err


def test_missing_file_exits_2(capsys, tmp_path):
    status, _, err = table(capsys, ["analyze", "--model", str(tmp_path / "nope.yaml")])
    assert status == 2 and "error" in err


def test_off_grid_override_exits_2(capsys):
    status, _, err = table(capsys, ["analyze", "--model", "mm_inf", "--horizon", "1.005"])
    assert status == 2 and "GridError" in err


def test_outputs_are_deterministic(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert run(["simulate", "--model", "two_state", "--horizon", "2", "--reps", "200", "--seed", "4",
                    "--z-points", "0.5", "--output", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_json_round_trip(tmp_path):
    out = tmp_path / "r.json"
    assert run(["analyze", "--model", "two_state", "--horizon", "1", "--format", "json", "--output", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["columns"] == list(COLUMNS)
    row = next(r for r in data["rows"] if r["quantity"] == "L_q" and r["type_index"] is None)
    assert isinstance(row["value"], float) and row["stderr"] is None


def test_compare_passes_and_fails(capsys):
    argv = ["compare", "--model", "mm_inf_catastrophes", "--reps", "1000", "--seed", "1", "--z-points", "0.5"]
    status, rows, _ = table(capsys, argv)
    assert status == 0
    methods = [r["method"] for r in rows]
    assert methods[:3] == ["ode", "simulation", "z-score PASS"]
    assert "L_q" in {r["quantity"] for r in rows}
    status, _, err = table(capsys, argv + ["--z-threshold", "1e-9"])
    assert status == 1 and "FAIL" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mmapq", "analyze", "--model", "mm_inf", "--format", "json"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["columns"] == list(COLUMNS)
