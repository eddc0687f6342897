import json
import shutil
import subprocess
import sys

import pytest

from poldec import __version__
from poldec.cli import main
from poldec.input_tree import InputTree


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_header(text):
    first = text.splitlines()[0]
    assert first.startswith("# ")
    return json.loads(first[2:])


def test_count(capsys):
    code, out, _ = run(capsys, "count", "--n", "2", "--m", "2")
    assert code == 0 and out.strip() == "8"


def test_count_json(capsys):
    code, out, _ = run(capsys, "count", "--n", "3", "--m", "3", "--json")
    rec = json.loads(out)
    assert code == 0
    assert rec["count"] == 288
    assert sum(row["count"] for row in rec["per_r_k"]) == 288
    assert rec["header"]["tool"] == "poldec" and rec["header"]["version"] == __version__


def test_count_single_input_is_usage_error(capsys):
    code, _, err = run(capsys, "count", "--n", "2", "--m", "1")
    rec = json.loads(err)
    assert code == 2 and rec["exit_code"] == 2 and rec["error"] == "usage"


def test_enumerate_and_sample(capsys):
    code, out, _ = run(capsys, "enumerate", "--n", "2", "--m", "2")
    trees = [ln for ln in out.splitlines() if ln and not ln.startswith("#")]
    assert code == 0 and len(trees) == 8
    assert len({InputTree.parse(t, 2, 2) for t in trees}) == 8
    code, out, _ = run(capsys, "sample", "--n", "4", "--m", "3", "--count", "5", "--seed", "3")
    first = out
    run_again = run(capsys, "sample", "--n", "4", "--m", "3", "--count", "5", "--seed", "3")[1]
    assert code == 0 and first == run_again
    assert len([ln for ln in out.splitlines() if ln.startswith("[")]) == 5


def test_enumerate_cap(capsys):
    code, _, err = run(capsys, "enumerate", "--n", "6", "--m", "4", "--cap", "10")
    assert code == 2 and "cap" in json.loads(err)["message"]


def test_estimate_separable(capsys):
    code, out, _ = run(capsys, "estimate", "--model", "sep-2di", "--tree", "[(u1|x1,x2), (u2|x3,x4)]")
    rec = json.loads(out)
    assert code == 0
    assert rec["err_lqr"] <= 1e-10
    assert rec["F"] == 0.0 and 0 < rec["F_comp"] < 1


def test_unknown_model(capsys):
    code, _, err = run(capsys, "estimate", "--model", "nope", "--tree", "[(u1|x1)]")
    assert code == 2 and json.loads(err)["error"] == "usage"


def test_bad_tree(capsys):
    code, _, err = run(capsys, "estimate", "--model", "sep-2di", "--tree", "[(u1|x1)]")
    assert code == 2
    code, _, _ = run(capsys, "estimate", "--model", "sep-2di", "--tree", "garbage")
    assert code == 2


def test_unknown_flag(capsys):
    code, _, err = run(capsys, "count", "--n", "2", "--m", "2", "--bogus")
    assert code == 2 and json.loads(err)["exit_code"] == 2


def test_bad_config_key(capsys):
    code, _, err = run(capsys, "search", "--model", "toy-2x2", "--budget-steps", "1", "--set", "colour=red")
    assert code == 2


def test_search_needs_budget(capsys):
    code, _, err = run(capsys, "search", "--model", "toy-2x2")
    assert code == 2


@pytest.mark.parametrize("method", ["ga", "mcts", "random"])
def test_search_report(capsys, tmp_path, method):
    out = tmp_path / "report.json"
    code, _, _ = run(
        capsys, "search", "--model", "toy-3x2", "--method", method, "--budget-steps", "20", "--seed", "4",
        "--out", str(out), "--set", "population_size=10",
    )
    rep = json.loads(out.read_text())
    assert code == 0
    assert rep["header"]["seed"] == 4
    assert rep["best_tree"] and rep["unique_decompositions"] >= 1
    assert {"step", "evaluations", "best_F"} <= set(rep["history"][0])


def test_search_deterministic_bytes(tmp_path, capsys):
    paths = [tmp_path / f"r{i}.json" for i in range(2)]
    for p in paths:
        code, _, _ = run(capsys, "search", "--model", "biped", "--method", "ga", "--budget-seconds", "2",
                         "--seed", "7", "--out", str(p))
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert "elapsed_s" not in json.loads(paths[0].read_text())


@pytest.mark.slow
def test_search_quadcopter_60s_deterministic(tmp_path, capsys):
    paths = [tmp_path / f"q{i}.json" for i in range(2)]
    for p in paths:
        code, _, _ = run(capsys, "search", "--model", "quadcopter", "--method", "ga", "--budget-seconds", "60",
                         "--seed", "7", "--out", str(p))
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_pareto_rows(capsys):
    code, out, _ = run(capsys, "pareto", "--model", "toy-3x2", "--budget-steps", "5", "--set", "population_size=12")
    rec = json.loads(out)
    assert code == 0
    rows = rec["front"]
    assert rows and {"tree", "F_err", "F_comp"} <= set(rows[0])
    assert [r["F_err"] for r in rows] == sorted(r["F_err"] for r in rows)


def test_solve_simulate_roundtrip(tmp_path, capsys):
    pol = tmp_path / "policy.bin"
    code, out, _ = run(capsys, "solve", "--model", "sep-2di", "--tree", "[(u1|x1,x2), (u2|x3,x4)]",
                       "--out", str(pol), "--set", "points=9", "--set", "max_policy_iterations=10")
    summary = json.loads(out)
    assert code == 0 and summary["n_parameters"] == 2 * 81
    assert [n["node"] for n in summary["nodes"]] == ["(u1|x1,x2)", "(u2|x3,x4)"]
    trajs = []
    for i in range(2):
        path = tmp_path / f"traj{i}.csv"
        code, _, _ = run(capsys, "simulate", "--policy", str(pol), "--x0", "0.5,0,-0.5,0.2", "--duration", "2",
                         "--out", str(path))
        assert code == 0
        trajs.append(path.read_text())
    assert trajs[0] == trajs[1]
    lines = trajs[0].splitlines()
    assert lines[1].split(",")[:2] == ["t", "p1"]
    assert len(lines) == 2 + 1001


def test_basin_csv(tmp_path, capsys):
    path = tmp_path / "basin.csv"
    code, _, _ = run(capsys, "basin", "--model", "pendulum", "--lqr", "--slice", "0,1", "--points", "5",
                     "--duration", "3", "--out", str(path))
    assert code == 0
    text = path.read_text()
    hdr = csv_header(text)
    assert hdr["slice"] == [0, 1] and hdr["converged_fraction"] == 1.0
    assert text.splitlines()[1] == "theta,thetadot,converged"
    assert len(text.splitlines()) == 2 + 25


def test_simulate_destabilising_gain(capsys):
    code, out, _ = run(capsys, "simulate", "--model", "manip4", "--lqr", "--gain-scale", "-1",
                       "--x0", "0.05,0.05,0.05,0.05,0,0,0,0", "--duration", "10")
    hdr = csv_header(out)
    assert code == 0 and hdr["diverged"] and hdr["divergence_time"] < 10


def test_simulate_needs_controller(capsys):
    code, _, _ = run(capsys, "simulate", "--model", "pendulum")
    assert code == 2


def test_bad_policy_file(tmp_path, capsys):
    bad = tmp_path / "x.bin"
    bad.write_bytes(b"junk")
    code, _, _ = run(capsys, "simulate", "--policy", str(bad))
    assert code == 2


def test_output_dir_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("POLDEC_OUTPUT_DIR", str(tmp_path))
    code, _, _ = run(capsys, "count", "--n", "2", "--m", "3", "--json", "--out", "c.json")
    assert code == 0 and json.loads((tmp_path / "c.json").read_text())["count"] == 72


def test_console_script():
    exe = shutil.which("poldec")
    cmd = [exe] if exe else [sys.executable, "-m", "poldec.cli"]
    res = subprocess.run(cmd + ["count", "--n", "1", "--m", "2"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "2"
