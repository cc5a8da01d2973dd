import json

import numpy as np
import pytest

from palign.cli import EXIT_USAGE, main
from palign.experiment import EXIT_SIM_ERROR, load_suite_config, run_experiment

TWO_AGENT = """
mode = "agents"
name = "two"
[kernel]
beta = 0.0
[dynamics]
p = 1.0
t_end = 5.0
n_agents = 2
dim = 1
dt = 0.01
[dynamics.initial]
generator = "explicit"
positions = [[0.0], [1.0]]
velocities = [[1.0], [-1.0]]
[checks]
enabled = ["closed_form", "conservation", "riccati"]
"""

VACUUM = """
mode = "hydro"
name = "vacuum"
[kernel]
beta = 0.5
dim = 1
[dynamics]
t_end = 1.0
n_cells = 64
rho_floor = 0.9
[dynamics.initial]
generator = "sine"
amplitude = 1.0
"""


def write(tmp_path, text, name="c.toml"):
    f = tmp_path / name
    f.write_text(text)
    return f


def test_simulate_writes_artifacts(tmp_path):
    cfg = write(tmp_path, TWO_AGENT)
    out = tmp_path / "out"
    assert main(["simulate", str(cfg), "--out", str(out)]) == 0
    for name in ("trace.csv", "trace.meta.json", "report.json", "config.toml", "manifest.json"):
        assert (out / name).exists()
    data = np.loadtxt(out / "trace.csv", delimiter=",", skiprows=1)
    t, de = data[:, 0], data[:, 1]
    np.testing.assert_allclose(de, de[0] * np.exp(-2 * t), rtol=1e-7)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 0 and "numpy" in manifest["versions"]


def test_vacuum_gives_nonzero_exit_and_partial_trace(tmp_path):
    cfg = write(tmp_path, VACUUM)
    out = tmp_path / "out"
    assert main(["simulate", str(cfg), "--out", str(out)]) == EXIT_SIM_ERROR
    manifest = json.loads((out / "manifest.json").read_text())
    assert "VacuumError" in manifest["error"]
    assert len((out / "trace.csv").read_text().splitlines()) >= 3


def test_analyze_existing_trace(tmp_path):
    out = tmp_path / "sim"
    main(["simulate", str(write(tmp_path, TWO_AGENT)), "--out", str(out)])
    analyze = TWO_AGENT.replace('mode = "agents"', 'mode = "analyze"\nsystem = "agents"')
    cfg = write(tmp_path, analyze, "a.toml")
    out2 = tmp_path / "ana"
    assert main(["analyze", str(out / "trace.csv"), str(cfg), "--out", str(out2)]) == 0
    assert (out2 / "report.json").exists()
    assert not (out2 / "trace.csv").exists()


def test_analyze_detects_corrupted_trace(tmp_path):
    out = tmp_path / "sim"
    main(["simulate", str(write(tmp_path, TWO_AGENT)), "--out", str(out)])
    lines = (out / "trace.csv").read_text().splitlines()
    cols = lines[0].split(",")
    k = cols.index("dE")
    row = lines[100].split(",")
    row[k] = repr(float(row[k]) * 1.5)
    lines[100] = ",".join(row)
    (out / "trace.csv").write_text("\n".join(lines) + "\n")
    cfg = write(tmp_path, TWO_AGENT.replace('mode = "agents"', 'mode = "analyze"\nsystem = "agents"'), "a.toml")
    assert main(["analyze", str(out / "trace.csv"), str(cfg), "--out", str(tmp_path / "ana")]) == 1


def test_unknown_suite_is_usage_error(tmp_path, capsys):
    assert main(["suite", "nope", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "unknown suite" in capsys.readouterr().err


def test_bad_config_is_usage_error(tmp_path):
    cfg = write(tmp_path, TWO_AGENT.replace("beta = 0.0", "betta = 0.0"))
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_seed_override(tmp_path):
    cfg = write(tmp_path, TWO_AGENT.replace("n_agents = 2", "n_agents = 4").replace(
        'generator = "explicit"\npositions = [[0.0], [1.0]]\nvelocities = [[1.0], [-1.0]]', "seed = 1")
        .replace("t_end = 5.0", "t_end = 0.1").replace('"closed_form", ', ""))
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", str(cfg), "--out", str(a), "--seed", "3"])
    main(["simulate", str(cfg), "--out", str(b), "--seed", "4"])
    assert json.loads((a / "manifest.json").read_text())["seed"] == 3
    assert (a / "trace.csv").read_text() != (b / "trace.csv").read_text()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PALIGN_OUT", str(tmp_path / "root"))
    assert main(["simulate", str(write(tmp_path, TWO_AGENT))]) == 0
    assert (tmp_path / "root" / "two" / "report.json").exists()


def test_conservation_suite(tmp_path, monkeypatch):
    # shorten the members so the whole bundle stays quick
    import palign.experiment as ex

    def short(member):
        cfg = load_suite_config(member)
        data = cfg.model_dump(mode="json", exclude_none=True)
        data["dynamics"]["t_end"] = min(cfg.dynamics.t_end, 0.2)
        return ex.config_from_dict(data)

    monkeypatch.setattr(ex, "load_suite_config", short)
    assert main(["suite", "conservation", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "conservation" / "summary.json").read_text())
    assert summary["exit_status"] == 0 and len(summary["members"]) == 10
    assert (tmp_path / "conservation" / "summary.txt").read_text().startswith("suite conservation: PASS")


def test_snapshots_written(tmp_path):
    cfg = load_suite_config("hydro-pressureless.toml")
    data = cfg.model_dump(mode="json", exclude_none=True)
    data["dynamics"]["t_end"] = 0.1
    data["output"]["snapshot_every"] = 5
    from palign.config import config_from_dict

    res = run_experiment(config_from_dict(data), tmp_path)
    assert res.exit_status == 0
    assert len(list((tmp_path / "snapshots").glob("snap_*.csv"))) >= 2
