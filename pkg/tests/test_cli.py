from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from curvrod.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "q2": """
[section]
kind = "disc"
triangles = 500
[q2]
stations = [0.0, 0.5]
ladder = [200, 500]
""",
    "rod-solve": """
[section]
triangles = 200
[rod]
n = 40
start = "twist"
wobble = 0.5
q2_source = "pointwise"
""",
    "string": """
[geometry]
curve = "circle-arc"
[section]
triangles = 100
[string]
samples = 200
r_max = 2.0
n = 20
""",
    "gamma-check": """
[section]
triangles = 200
[gamma]
h = [0.125, 0.0625, 0.03125]
n_panels = 8
stations = 2
""",
    "demo-intermediate": """
[section]
triangles = 200
[intermediate]
h = [0.125, 0.0625, 0.03125]
""",
}


def run(tmp_path: Path, command: str, text: str, *extra: str, name: str = "run"):
    cfg = tmp_path / f"{name}.toml"
    cfg.write_text(text)
    out = tmp_path / name
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


@pytest.mark.parametrize("command", sorted(SMALL))
def test_commands_succeed_and_write_manifest(tmp_path, command):
    code, out = run(tmp_path, command, SMALL[command])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    for f in manifest["outputs"]:
        assert (out / f).exists()
    assert len(manifest["config_sha256"]) == 64


def test_q2_csv_row_matches_beam_value(tmp_path):
    code, out = run(tmp_path, "q2", SMALL["q2"])
    assert code == 0
    rows = list(csv.DictReader((out / "q2.csv").open()))
    assert [float(r["s"]) for r in rows] == [0.0, 0.5]
    Q11 = float(rows[0]["Q11"])
    # single 500-triangle mesh: within 2% of E / (4 pi) from above
    assert 5 / (8 * np.pi) <= Q11 <= 1.02 * 5 / (8 * np.pi)
    meta = json.loads((out / "q2.json").read_text())
    assert np.max(meta["g_norms"]) < 1e-8
    assert "extrapolated" in meta["ladder"]


def test_reruns_are_byte_identical(tmp_path):
    _, a = run(tmp_path, "q2", SMALL["q2"], name="a")
    _, b = run(tmp_path, "q2", SMALL["q2"], "--threads", "3", name="b")
    for f in ("q2.csv", "q2.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_rod_solve_reports_convergence(tmp_path):
    code, out = run(tmp_path, "rod-solve", SMALL["rod-solve"])
    assert code == 0
    log = json.loads((out / "rod_log.json").read_text())
    assert log["converged"]
    assert np.all(np.diff(log["history"]) <= 0.0)
    frames = np.loadtxt(out / "rod_frames.csv", delimiter=",", skiprows=1)
    assert frames.shape == (41, 8)
    assert np.allclose(np.linalg.norm(frames[:, 1:5], axis=1), 1.0)


def test_negative_mu_is_config_error(tmp_path, capsys):
    code = main(["q2", "--config", str(CONFIGS / "bad_negative_mu.toml"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "material.mu" in capsys.readouterr().err
    err = json.loads((tmp_path / "o" / "error.json").read_text())
    assert err["kind"] == "config"


@pytest.mark.parametrize(
    "text",
    ['[material]\nshear = 1.0\n', '[gamma]\nh = []\n', '[intermediate]\nalpha = 1.0\nbeta = 1.5\n', "not = [valid"],
    ids=["unknown-key", "empty-ladder", "beta-range", "toml-syntax"],
)
def test_invalid_configs_exit_2(tmp_path, text):
    code, out = run(tmp_path, "q2", text)
    assert code == 2
    assert (out / "error.json").exists()


def test_missing_config_file_exits_2(tmp_path):
    assert main(["q2", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 2


def test_numerical_failure_exits_3(tmp_path):
    text = """
[geometry]
curve = "circle-arc"
radius = 0.2
length = 0.5
[section]
triangles = 100
[gamma]
h = [1.0]
deformation = "reference"
n_panels = 4
"""
    code, out = run(tmp_path, "gamma-check", text)
    assert code == 3
    err = json.loads((out / "error.json").read_text())
    assert err["kind"] == "numerical"
    assert json.loads((out / "manifest.json").read_text())["status"] == "numerical"


def test_rod_mesh_too_coarse_exits_3(tmp_path):
    text = """
[rod]
n = 2
start = "twist"
turns = 1.0
q2_source = "closed-form"
"""
    code, _ = run(tmp_path, "rod-solve", text)
    assert code == 3


def test_verify_exit_code_reflects_acceptance(tmp_path):
    out = tmp_path / "v"
    code = main(["verify", "--out", str(out)])
    data = json.loads((out / "acceptance.json").read_text())
    assert len(data["criteria"]) == 11
    all_pass = all(c["passed"] for c in data["criteria"])
    assert code == (0 if all_pass else 4)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "curvrod", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()
