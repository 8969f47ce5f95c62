from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from lockfree_markov.cli import fmt_number, main

FIXTURES = Path(__file__).parent / "fixtures"


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_lifting_verify_pass(capsys):
    assert main(["lifting", "verify", "--model", "scu", "--n", "2"]) == 0
    assert "lifting pass" in capsys.readouterr().out


def test_lifting_verify_corrupted_map(capsys):
    code = main(["lifting", "verify", "--model", "scu", "--n", "2", "--map", str(FIXTURES / "corrupted_scu2_map.json")])
    assert code == 1
    assert "lifting FAIL" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    assert main(["lifting", "verify", "--model", "scu", "--n", "2", "--bogus"]) == 2
    assert main(["sim", "run", "--model", "scu", "--n", "2", "--steps", "100"]) == 2
    assert main(["bins", "run", "--n", "4", "--phases", "10"]) == 2
    assert main(["sweep", "--model", "scu", "--mode", "sim", "--n", "4,8"]) == 2
    assert main(["sim", "run", "--model", "scu", "--n", "2", "--steps", "10", "--seed", "1",
                 "--weights", "0.95,0.05", "--theta", "0.1"]) == 2
    assert main(["chain", "build", "--model", "scu-ind", "--n", "40"]) == 2
    assert main([]) == 2
    err = capsys.readouterr().err
    assert "usage" in err


def test_help_exits_zero(capsys):
    assert main(["sim", "run", "--help"]) == 0
    assert "--crash" in capsys.readouterr().out


def test_chain_build_and_solve(tmp_path, capsys):
    chain_file = tmp_path / "scu2.json"
    assert main(["chain", "build", "--model", "scu-sys", "--n", "2", "--out", str(chain_file)]) == 0
    assert (tmp_path / "scu2.config.json").exists()
    out = tmp_path / "solved.json"
    assert main(["chain", "solve", "--in", str(chain_file), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["latency"] == pytest.approx(20 / 7, abs=1e-12)
    assert data["period"] == 2

    dot = tmp_path / "par.dot"
    assert main(["chain", "build", "--model", "par-sys", "--n", "3", "--q", "2", "--out", str(dot)]) == 0
    assert dot.read_text().startswith("digraph")


def test_sim_stats_csv(tmp_path):
    out = tmp_path / "stats.csv"
    assert main(["sim", "run", "--model", "scu", "--n", "2", "--steps", "200000", "--seed", "3", "--out", str(out)]) == 0
    (row,) = read_csv(out)
    assert list(row) == ["model", "n", "q", "s", "steps", "seed", "W_emp", "Wi_emp_min", "Wi_emp_max", "completion_rate"]
    assert float(row["W_emp"]) == pytest.approx(20 / 7, rel=0.02)
    config = json.loads((tmp_path / "stats.config.json").read_text())
    assert config["command"] == "sim run"
    assert config["seed"] == 3
    assert "tool_version" in config


def test_sim_trace_json_with_crash(tmp_path):
    out = tmp_path / "trace.json"
    assert main(["sim", "run", "--model", "unbounded", "--n", "4", "--steps", "20000", "--seed", "1",
                 "--crash", "3:0", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["crashed"] == [3]
    assert data["register_version"] == len(data["success_steps"])
    assert 3 not in data["success_process"]
    assert data["monopoly"]["total_successes"] == len(data["success_steps"])


def test_bins_csv(tmp_path):
    out = tmp_path / "phases.csv"
    assert main(["bins", "run", "--n", "64", "--phases", "500", "--seed", "2", "--out", str(out),
                 "--stats", str(tmp_path / "ranges.json")]) == 0
    rows = read_csv(out)
    assert len(rows) == 500
    assert list(rows[0]) == ["phase_index", "a_start", "b_start", "length", "range"]
    assert all(int(r["a_start"]) + int(r["b_start"]) == 64 for r in rows)
    assert json.loads((tmp_path / "ranges.json").read_text())["phases"] == 500


def test_sweep_bins_four_rows(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    fit = tmp_path / "fit.json"
    curve = tmp_path / "curve.dat"
    code = main(["sweep", "--model", "scu", "--mode", "bins", "--n", "64,256,1024,4096", "--seed", "7",
                 "--out", str(out), "--fit", str(fit), "--curve", str(curve)])
    assert code == 0
    assert len(read_csv(out)) == 4
    assert 0.4 <= json.loads(fit.read_text())["fit"]["gamma"] <= 0.6
    assert "fitted exponent" in capsys.readouterr().err
    lines = curve.read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 5


def test_crash_sweep_command(tmp_path):
    out = tmp_path / "crash.csv"
    assert main(["crash-sweep", "--n", "8", "--k", "2,8", "--steps", "200000", "--seed", "1", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r["k_correct"] for r in rows] == ["2", "8"]


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LFMC_OUTPUT_DIR", str(tmp_path))
    assert main(["bins", "run", "--n", "8", "--phases", "10", "--seed", "1", "--out", "sub/p.csv"]) == 0
    assert (tmp_path / "sub" / "p.csv").exists()
    assert (tmp_path / "sub" / "p.config.json").exists()


def test_precision_flag(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["sim", "run", "--model", "fai", "--n", "3", "--steps", "50000", "--seed", "4"]
    main(base + ["--out", str(a)])
    main(base + ["--out", str(b), "--full-precision"])
    short = read_csv(a)[0]["W_emp"]
    full = read_csv(b)[0]["W_emp"]
    assert len(short.replace(".", "")) <= 7
    assert float(full) == pytest.approx(float(short), rel=1e-5)
    assert fmt_number(1 / 3, False) == "0.333333"
    assert float(fmt_number(1 / 3, True)) == 1 / 3


@pytest.mark.parametrize(
    "argv",
    [
        ["sim", "run", "--model", "scu", "--n", "3", "--q", "1", "--s", "2", "--steps", "30000", "--seed", "5"],
        ["sim", "run", "--model", "parallel", "--n", "3", "--q", "2", "--steps", "30000", "--seed", "5"],
        ["bins", "run", "--n", "32", "--phases", "300", "--seed", "5"],
        ["sweep", "--model", "scu", "--mode", "sim", "--n", "4,8", "--budget", "30000", "--seed", "5"],
        ["crash-sweep", "--n", "6", "--k", "3", "--steps", "30000", "--seed", "5"],
    ],
)
def test_rerun_is_byte_identical(tmp_path, argv):
    outputs = []
    for run in ("first", "second"):
        d = tmp_path / run
        d.mkdir()
        ext = ".json" if argv[1] == "run" and argv[0] == "sim" else ".csv"
        assert main(argv + ["--out", str(d / f"out{ext}")]) == 0
        outputs.append(((d / f"out{ext}").read_bytes(), (d / "out.config.json").read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    # the sidecar differs only by the output directory it records
    assert outputs[0][1].replace(b"first", b"second") == outputs[1][1]
