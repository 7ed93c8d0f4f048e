import csv
import json
from pathlib import Path

import pytest

from branchlab import cli
from branchlab.anchors import ANCHORS

ROOT = Path(__file__).resolve().parents[1]

FAST = {
    "solve": ["--set", "horizon=0.5", "--set", "steps=64"],
    "mass": ["--set", "t_max=20", "--set", "profile_horizon=2"],
    "simulate": ["--set", "R=500", "--set", 'functionals=["count","occupation","laplace"]',
                 "--set", "phi=0.5", "--set", "f=0.2", "--set", "dump_replicas=true"],
    "duality": ["--set", "R=2000", "--set", "T=0.5"],
    "splitting": ["--set", "Ns=[4,8]", "--set", "ref_steps=1024", "--set", "inner_total=256"],
    "occupation": ["--set", "steps=2000", "--set", "horizon=5", "--set", "T_grid=[100,1000]"],
}


def run(tmp_path, command, *extra):
    out = tmp_path / command
    code = cli.main([command, "--out", str(out), *extra])
    return code, out


@pytest.mark.parametrize("command", sorted(FAST))
def test_subcommand_writes_outputs(tmp_path, command):
    code, out = run(tmp_path, command, *FAST[command])
    assert code in (0, 1)
    summary = json.loads((out / "summary.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == command and manifest["config"]["seed"] == 12345
    assert "numpy" in manifest["versions"]
    assert set(summary) <= set(ANCHORS)
    for key, entry in summary.items():
        assert entry["anchor"] == ANCHORS[key]
    failed = any(e["kind"] == "check" and not e["pass"] for e in summary.values())
    assert code == (1 if failed else 0)
    assert any(p.suffix == ".csv" for p in out.iterdir())


def test_occupation_exit_reflects_limit_two(tmp_path):
    code, out = run(tmp_path, "occupation", *FAST["occupation"])
    summary = json.loads((out / "summary.json").read_text())
    assert not summary["limit_two"]["pass"]
    assert summary["g_T_oracle"]["pass"] and summary["g_T_lower_bound"]["pass"]
    assert code == 1


@pytest.mark.parametrize("law", ['{"0":0.5,"2":0.5}', '{"1":0.6,"2":0.3}', '{"1":1.0}'])
def test_bad_offspring_exits_2(tmp_path, capsys, law):
    code, out = run(tmp_path, "solve", "--set", f"offspring={law}")
    assert code == 2
    assert "offspring law violates the standing hypothesis" in capsys.readouterr().err
    assert not (out / "summary.json").exists()


@pytest.mark.parametrize("extra", [
    ["--set", "phi.peak=1.5"],
    ["--set", "grid.n=0"],
    ["--set", "noequals"],
    ["--seed", "-1"],
    ["--jobs", "0"],
])
def test_config_errors_exit_2(tmp_path, extra):
    assert run(tmp_path, "solve", *extra)[0] == 2


def test_margin_violation_exits_2(tmp_path, capsys):
    code, _ = run(tmp_path, "duality", "--set", "x0=[17.0]", "--set", "R=200")
    assert code == 2
    assert "BoxMarginViolated" in capsys.readouterr().err


def test_constant_solve_single_value(tmp_path):
    code, out = run(tmp_path, "solve", "--set", "phi=0.5", "--set", "horizon=0.5",
                    "--set", "steps=32")
    assert code == 0
    by_t = {}
    with open(out / "trajectory.csv") as fh:
        for row in csv.DictReader(fh):
            by_t.setdefault(row["t"], set()).add(row["value"])
    assert len(by_t) == 33
    assert all(len(v) == 1 for v in by_t.values())


def test_rerun_is_byte_identical(tmp_path):
    args = FAST["simulate"]
    _, a = run(tmp_path / "a", "simulate", *args)
    _, b = run(tmp_path / "b", "simulate", *args, "--jobs", "2")
    for name in ("estimates.csv", "replicas.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_overrides_and_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"R": 300, "grid": {"d": 1, "half_width": 10.0, "n": 64}}))
    cfg = cli.load_config("duality", path, ["grid.n=128", "phi.peak=0.4", "x0=[0.0, 1.0]"],
                          seed=7)
    assert cfg["R"] == 300 and cfg["seed"] == 7
    assert cfg["grid"] == {"d": 1, "half_width": 10.0, "n": 128}
    assert cfg["phi"]["peak"] == 0.4 and cfg["x0"] == [0.0, 1.0]
    assert cli.parse_value("gaussian") == "gaussian"


def test_traceability_file_matches_anchors():
    data = json.loads((ROOT / "docs" / "traceability.json").read_text())
    assert data == ANCHORS
