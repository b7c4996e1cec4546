import json

import pytest

from projfpe import cli, harness
from projfpe.errors import NumericalError

BASE = {"model": {"name": "linear", "F": -1.0, "A": 2.0}, "family": {"basis": "poly", "max_degree": 2},
        "initial": {"gaussian": {"mean": 0.5, "var": 0.3}}, "T": 0.05, "h": 0.01,
        "mc": {"N": 500, "delta": 0.01, "seed": 1}}


def _write(tmp_path, **over):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**BASE, **over}))
    return str(path)


def test_project_ok(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["project", _write(tmp_path), "--out", str(out), "--quiet"]) == 0
    assert (out / "trajectory.csv").exists()


def test_grid_nodes_flag(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["project", _write(tmp_path), "--out", str(out), "--grid-nodes", "256", "--quiet"]) == 0


def test_seed_flag_changes_simulation(tmp_path):
    cfg = _write(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", cfg, "--out", str(a), "--seed", "11", "--quiet"]) == 0
    assert cli.main(["reconstruct", cfg, "--out", str(b), "--seed", "12", "--quiet"]) == 0
    assert (a / "histogram.csv").read_bytes() != (b / "histogram.csv").read_bytes()
    assert not (a / "ustar.csv").exists() and (b / "ustar.csv").exists()


@pytest.mark.parametrize("over", [{"family": {"basis": "poly", "max_degree": 3}}, {"h": -1.0},
                                  {"initial": {"theta": [0.0, 1.0]}}])
def test_validation_exit_code(tmp_path, over):
    assert cli.main(["project", _write(tmp_path, **over), "--out", str(tmp_path), "--quiet"]) == 2


def test_missing_config_exit_code(tmp_path):
    assert cli.main(["project", str(tmp_path / "nope.json"), "--quiet"]) == 2


def test_bad_seed_exit_code(tmp_path):
    assert cli.main(["simulate", _write(tmp_path), "--seed", "-3", "--quiet"]) == 2


def test_numerical_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("diverged")
    monkeypatch.setattr(harness, "run_projection", boom)
    assert cli.main(["project", _write(tmp_path), "--out", str(tmp_path), "--quiet"]) == 3


def test_geometry_check(tmp_path):
    assert cli.main(["geometry-check", "--out", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "geometry_check.csv").exists()


def test_oracle_and_converge(tmp_path):
    cfg = _write(tmp_path, reference={"nodes": 400, "x_min": -10.0, "x_max": 10.0})
    assert cli.main(["oracle", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 0
    cfg = _write(tmp_path, family={"basis": "poly", "sizes": [2, 4]}, T=0.02)
    assert cli.main(["converge", cfg, "--out", str(tmp_path / "c"), "--quiet"]) == 0
    assert (tmp_path / "c" / "convergence.csv").exists()
