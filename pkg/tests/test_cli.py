import csv
import json
from pathlib import Path

import pytest

from spde_hjb.cli import main
from spde_hjb.config import config_digest, config_from_dict, load_config
from spde_hjb.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """schema = 1
[model]
kind = "heat"
dim_h = 32
[control]
eta = 0.1
[cost]
kind = "saturated_quadratic"
[solver]
grid_nodes = 33
[simulation]
paths = 100
seed = 7
initial_states = [[-0.3], [0.3]]
n_constant_policies = 2
[estimates]
samples = 12
"""


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.toml"
    p.write_text(SMALL)
    return p


@pytest.fixture(scope="module")
def solved(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert main(["solve", "--config", str(small_cfg), "--out", str(out), "--quiet"]) == 0
    return out


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def _assert_manifest_complete(out):
    listed = set(_manifest(out)["outputs"])
    assert listed == {p.name for p in out.iterdir()}


def test_estimates_heat_and_wave(small_cfg, tmp_path):
    assert main(["estimates", "--config", str(small_cfg), "--out", str(tmp_path / "h"), "--quiet"]) == 0
    est = json.loads((tmp_path / "h" / "estimates.json").read_text())
    assert -1 < est["fitted_exponent"] < 0
    _assert_manifest_complete(tmp_path / "h")
    rows = list(csv.reader((tmp_path / "h" / "estimates.csv").open()))
    assert rows[0][0] == "t" and len(rows) == 13
    assert b"\r\n" not in (tmp_path / "h" / "estimates.csv").read_bytes()
    assert main(["estimates", "--config", str(CONFIGS / "wave.toml"), "--out", str(tmp_path / "w"), "--quiet"]) == 0
    est = json.loads((tmp_path / "w" / "estimates.json").read_text())
    assert -0.6 <= est["fitted_exponent"] <= -0.4


def test_solve_outputs_and_determinism(small_cfg, solved, tmp_path):
    doc = json.loads((solved / "solution.json").read_text())
    assert doc["converged"] and doc["residual_history"][-1] <= 1e-6
    _assert_manifest_complete(solved)
    assert main(["solve", "--config", str(small_cfg), "--out", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "solution.json").read_bytes() == (solved / "solution.json").read_bytes()
    assert (tmp_path / "residuals.csv").read_bytes() == (solved / "residuals.csv").read_bytes()


def test_solve_threshold_guard(small_cfg, tmp_path, capsys):
    assert main(["solve", "--config", str(small_cfg), "--out", str(tmp_path), "--lambda", "0.01"]) == 4
    assert "lambda0" in capsys.readouterr().err.replace("λ0", "lambda0")


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    assert main(["solve", "--config", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_values(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(SMALL.replace("schema = 1", "schema = 2"))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    p.write_text(SMALL.replace("eta = 0.1", "eta = 0.1\nspeed = 3"))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_simulate(small_cfg, solved, tmp_path):
    args = ["simulate", "--config", str(small_cfg), "--solution", str(solved / "solution.json"),
            "--out", str(tmp_path), "--trajectories", "2", "--quiet"]
    assert main(args) == 0
    sim = json.loads((tmp_path / "simulation.json").read_text())
    assert len(sim["results"]) == 2
    header = next(csv.reader((tmp_path / "trajectories.csv").open()))
    assert header == ["state", "path", "t", "z_1", "u_1", "u_2"]
    _assert_manifest_complete(tmp_path)
    again = tmp_path / "again"
    assert main(args[:-5] + ["--out", str(again), "--trajectories", "2", "--quiet"]) == 0
    assert (again / "simulation.json").read_bytes() == (tmp_path / "simulation.json").read_bytes()


def test_verify(small_cfg, solved, tmp_path):
    assert main(["verify", "--config", str(small_cfg), "--solution", str(solved / "solution.json"),
                 "--out", str(tmp_path), "--quiet"]) == 0
    rep = json.loads((tmp_path / "verification.json").read_text())
    assert rep["pass"]["optimal_gap"]
    assert all(len(s["constant_policies"]) == 2 for s in rep["states"])
    _assert_manifest_complete(tmp_path)


def test_corrupt_solution(small_cfg, tmp_path, capsys):
    bad = tmp_path / "solution.json"
    bad.write_text('{"lambda": 80.0, "v": ')
    assert main(["verify", "--config", str(small_cfg), "--solution", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "solution" in capsys.readouterr().err
    bad.write_text('{"lambda": 80.0}')
    assert main(["simulate", "--config", str(small_cfg), "--solution", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_digest_invariant_under_reordering():
    a = {"schema": 1, "model": {"kind": "heat", "dim_h": 8}, "cost": {"kind": "zero"}}
    b = {"cost": {"kind": "zero"}, "model": {"dim_h": 8, "kind": "heat"}, "schema": 1}
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest({**a, "schema": 2})


def test_schema_required_and_shipped_configs_load():
    with pytest.raises(ConfigError):
        config_from_dict({"model": {"kind": "heat"}})
    for name in ("heat.toml", "wave.toml"):
        cfg = load_config(CONFIGS / name)
        assert cfg.schema == 1
