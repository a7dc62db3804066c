import json
import logging

import numpy as np
import pandas as pd
import pytest

from vortexlab.cli import main
from vortexlab.errors import ConfigError
from vortexlab.geometry import make_surface
from vortexlab.gl import DiscreteField, save_checkpoint
from vortexlab.io import (config_hash, load_config, log_level, parse_config, read_csv, write_csv,
                          write_json)

TORUS = {"kind": "flat_torus", "n": 16}
DIPOLE = {"points": [[0.25, 0.25, 0.0], [0.75, 0.75, 0.0]], "degrees": [1, -1]}


def write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


@pytest.mark.parametrize("raw", [
    {},
    {"surface": {"kind": "klein_bottle"}},
    {"surface": {"kind": "unit_sphere", "radius": 2.0}},
    {"surface": TORUS, "potential": {"name": "quartic"}},
    {"surface": TORUS, "potential": {"name": "gl", "strength": 2}},
    {"surface": TORUS, "vortices": {"points": [[0.1, 0.1, 0.0]], "degrees": [1, -1]}},
    {"surface": TORUS, "phi": "zero"},
    {"surface": TORUS, "epsilons": [0.1, -0.05]},
])
def test_parse_config_rejects(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_parse_config_defaults():
    cfg = parse_config({"surface": TORUS, "vortices": DIPOLE, "epsilons": [0.1]})
    assert cfg.potential.name == "gl"
    assert cfg.phi == "nearest_lattice"
    assert cfg.epsilons == (0.1,)
    assert cfg.vortices.degrees == (1, -1)
    assert cfg.option("radii", "none") == "none"
    with pytest.raises(ConfigError):
        cfg.require_seed()
    assert parse_config({"surface": TORUS, "seed": 7}).require_seed() == 7


def test_config_hash_ignores_key_order():
    a = {"surface": TORUS, "seed": 1}
    b = {"seed": 1, "surface": {"n": 16, "kind": "flat_torus"}}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seed": 2})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    (tmp_path / "bad.json").write_text("{surface")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "bad.json"))


def test_csv_and_json_writers(tmp_path):
    path = tmp_path / "table.csv"
    write_csv(str(path), pd.DataFrame({"x": [0.1, 1.0 / 3.0]}), "h123")
    assert path.read_text().splitlines()[0] == "# config_hash=h123"
    assert read_csv(str(path))["x"].tolist() == [0.1, 1.0 / 3.0]
    write_json(str(tmp_path / "out.json"), {"b": np.float64(1.5), "a": np.arange(2)}, "h123")
    body = json.loads((tmp_path / "out.json").read_text())
    assert body == {"a": [0, 1], "b": 1.5, "config_hash": "h123"}


@pytest.mark.parametrize("value, level", [("debug", logging.DEBUG), ("WARNING", logging.WARNING),
                                          ("loud", logging.INFO)])
def test_log_level(monkeypatch, value, level):
    monkeypatch.setenv("VORTEXLAB_LOG", value)
    assert log_level() == level


def test_renorm_command(tmp_path):
    config = write_config(tmp_path, {"surface": TORUS, "vortices": DIPOLE, "options": {"radii": [1e-2]}})
    out = tmp_path / "out"
    assert main(["renorm", "--config", config, "--out", str(out)]) == 0
    report = json.loads((out / "renorm_report.json").read_text())
    assert report["config_hash"] == load_config(config).hash
    assert report["phi_admissible"] is True
    table = read_csv(str(out / "quadrature_convergence.csv"))
    assert list(table.columns) == ["r", "W_quadrature", "W_closed", "error"]
    assert table["r"].tolist() == [1e-2]
    meta = json.loads((out / "run_metadata.json").read_text())
    assert meta["command"] == "renorm" and meta["threads"] == 1


def test_exit_codes(tmp_path):
    bad = write_config(tmp_path, {"surface": {"kind": "klein_bottle"}}, "bad.json")
    assert main(["renorm", "--config", bad, "--out", str(tmp_path / "o1")]) == 2
    assert main(["renorm", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o2")]) == 2
    no_vortices = write_config(tmp_path, {"surface": TORUS}, "nov.json")
    assert main(["renorm", "--config", no_vortices, "--out", str(tmp_path / "o3")]) == 2
    coincident = write_config(tmp_path, {"surface": TORUS, "vortices": {
        "points": [[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]], "degrees": [1, -1]}}, "same.json")
    assert main(["renorm", "--config", coincident, "--out", str(tmp_path / "o4")]) == 3


def test_unknown_command_is_rejected(tmp_path):
    config = write_config(tmp_path, {"surface": TORUS})
    with pytest.raises(SystemExit):
        main(["simulate", "--config", config])


def test_minimize_w_needs_a_seed(tmp_path):
    config = write_config(tmp_path, {"surface": {"kind": "unit_sphere", "subdivisions": 1},
                                     "options": {"max_iter": 50}})
    assert main(["minimize-w", "--config", config, "--out", str(tmp_path / "a")]) == 2
    assert main(["minimize-w", "--config", config, "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    result = json.loads((tmp_path / "b" / "minimize_w.json").read_text())
    assert result["degrees"] == [1, 1]
    assert json.loads((tmp_path / "b" / "run_metadata.json").read_text())["seed"] == 3
    history = read_csv(str(tmp_path / "b" / "trajectory.csv"))["W"].to_numpy()
    assert np.all(np.diff(history) <= 1e-12)


def test_profile_command(tmp_path):
    config = write_config(tmp_path, {"surface": TORUS, "options": {"t": [0.2, 0.1], "grid_size": 400}})
    out = tmp_path / "out"
    assert main(["profile", "--config", config, "--out", str(out)]) == 0
    table = read_csv(str(out / "profiles.csv"))
    assert len(table) == 4 and set(table["kind"]) == {"intrinsic", "micromagnetic"}
    summary = json.loads((out / "iota.json").read_text())
    assert summary["intrinsic_below_micromagnetic"] is True


def test_gl_command_writes_checkpoints(tmp_path):
    config = write_config(tmp_path, {"surface": {"kind": "unit_sphere", "subdivisions": 1}, "epsilons": [0.5],
                                     "seed": 0, "options": {"flow_steps": 5, "max_outer": 5}})
    out = tmp_path / "out"
    assert main(["gl", "--config", config, "--out", str(out)]) == 0
    assert (out / "field_eps0.5.csv").exists() and (out / "trajectory_eps0.5.csv").exists()
    summary = read_csv(str(out / "gl_summary.csv"))
    assert summary["epsilon"].tolist() == [0.5]


def test_detect_command(tmp_path):
    sphere = {"kind": "unit_sphere", "subdivisions": 1}
    S = make_surface(sphere)
    checkpoint = tmp_path / "field.csv"
    save_checkpoint(checkpoint, DiscreteField(S, np.ones(len(S.vertices))), 0.1, "gl", "intrinsic")
    assert main(["detect", "--config", write_config(tmp_path, {"surface": sphere}, "nockpt.json"),
                 "--out", str(tmp_path / "a")]) == 2
    config = write_config(tmp_path, {"surface": sphere, "options": {"checkpoint": str(checkpoint), "sigma": 0.4}})
    assert main(["detect", "--config", config, "--out", str(tmp_path / "b")]) == 0
    balls = json.loads((tmp_path / "b" / "balls.json").read_text())
    assert balls["balls"] == [] and balls["epsilon"] == 0.1 and balls["sigma"] == 0.4


def test_gl_command_with_planted_start(tmp_path):
    config = write_config(tmp_path, {
        "surface": {"kind": "unit_sphere", "subdivisions": 2},
        "vortices": {"points": [[0, 0, 1.0], [0, 0, -1.0]], "degrees": [1, 1]},
        "epsilons": [0.3], "seed": 1, "options": {"init": "planted", "flow_steps": 5, "max_outer": 5}})
    out = tmp_path / "out"
    assert main(["gl", "--config", config, "--out", str(out)]) == 0
    field = read_csv(str(out / "field_eps0.3.csv"))
    assert np.all(np.hypot(field["re"], field["im"]) <= 1.0 + 1e-12)
