import json
import subprocess
import sys

import pytest

from probeplan.cli import main

LOCKED = "object_interaction_locked_drawer"


def test_run_json(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["run", "--scenario", LOCKED, "--trials", "2", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["schema_version"] == 1 and len(data["episodes"]) == 2
    assert main(["report", str(out)]) == 0
    assert LOCKED in capsys.readouterr().out


def test_run_table_all_levels(capsys):
    assert main(["run", "--scenario", LOCKED, "--level", "all", "--trials", "1", "--format", "table"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 6


@pytest.mark.parametrize("argv", [
    ["run", "--trials", "0"],
    ["run", "--level", "Murky"],
    ["run", "--epsilon", "1.5"],
    ["run", "--mode", "psychic"],
    ["run", "--backend", "llm", "--scenario", LOCKED, "--jobs", "2"],
    ["plan"],
    ["probe", "--scenario", LOCKED],
    ["report", "/no/such/file.json"],
])
def test_config_errors_exit_1(argv):
    # argparse rejections exit through SystemExit, the rest return the code
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_llm_backend_needs_environment(monkeypatch):
    monkeypatch.delenv("PROBEPLAN_LLM_ENDPOINT", raising=False)
    assert main(["run", "--scenario", LOCKED, "--backend", "llm", "--trials", "1"]) == 1


def test_bad_scenario_exits_2(tmp_path):
    assert main(["run", "--scenario", "no_such_scenario", "--trials", "1"]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["plan", "--scenario", str(broken)]) == 2


def test_abort_threshold_exits_3():
    argv = ["run", "--scenario", LOCKED, "--trials", "2", "--mode", "naive", "--out", "/dev/null"]
    assert main(argv) == 0
    assert main(argv + ["--abort-threshold", "0"]) == 3


def test_verify(tmp_path, capsys):
    good = tmp_path / "good.pol"
    good.write_text("check_lock(top_drawer)\nopen(top_drawer)\n")
    assert main(["verify", "--scenario", LOCKED, str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["verified"] is True
    bad = tmp_path / "bad.pol"
    bad.write_text("opn(top_drawer)\n")
    assert main(["verify", "--scenario", LOCKED, str(bad)]) == 3
    assert "C1" in capsys.readouterr().out


def test_plan_and_probe(capsys):
    assert main(["plan", "--scenario", LOCKED, "--level", "Complete"]) == 0
    assert capsys.readouterr().out.strip() == "open(top_drawer)"
    assert main(["probe", "--scenario", LOCKED, "--atom", "(unlocked middle_drawer)"]) == 0
    assert capsys.readouterr().out.strip() == "check_lock(middle_drawer)"
    assert main(["probe", "--scenario", LOCKED, "--atom", "(open middle_drawer)"]) == 3


def test_calibrate(capsys):
    assert main(["calibrate", "--scenario", "long_horizon_die_drawer"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["samples"] == 35 and 0 < data["epsilon"] < 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "probeplan", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "calibrate" in res.stdout
