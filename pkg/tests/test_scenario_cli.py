from __future__ import annotations

import json
import textwrap

import numpy as np
import pytest

from congesta.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main
from congesta.errors import ConfigError
from congesta.scenario import (
    build_scenario,
    load_scenario,
    run_scenario,
    shipped_scenarios,
    with_overrides,
)

SMALL = """
name = "small"

[field]
potential = "harmonic"
volume = "linear_time(0.5)"
N = 4.0

[grid]
lower = [-2.0, -2.0]
upper = [2.0, 2.0]
resolution = 96

[time]
start = 0.0
end = 0.2
steps = 2

[levels]
p = [1.0, 2.0, 3.0]
n_vertices = 128
"""


def _write(tmp_path, text, name="scn.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def _raw():
    return {
        "field": {"potential": "harmonic", "volume": "constant(0.5)", "N": 4.0},
        "grid": {"lower": [-2.0, -2.0], "upper": [2.0, 2.0]},
        "time": {"start": 0.0},
    }


def test_shipped_scenarios_load():
    names = shipped_scenarios()
    assert {"harmonic_radial", "anisotropic_growth", "counterexample_52", "oned_quadratic"} <= set(names)
    for name in names:
        s = load_scenario(name)
        assert s.name == name
        assert all(0 < p < s.N for p in s.levels)


def test_defaults_are_filled():
    s = build_scenario(_raw())
    assert s.grid.cells == (256, 256)
    assert s.levels == pytest.approx([4 * q for q in (0.25, 0.5, 0.75, 1 - 1e-3)])
    assert s.config["tolerances"]["tol_mass"] == pytest.approx(4e-4)
    assert len(s.times) == 1


def test_unknown_key():
    raw = _raw()
    raw["field"]["potental"] = "harmonic"
    with pytest.raises(ConfigError, match="unknown key: potental"):
        build_scenario(raw)
    raw = _raw()
    raw["solver"] = {}
    with pytest.raises(ConfigError, match="unknown key: solver"):
        build_scenario(raw)


def test_missing_key():
    raw = _raw()
    del raw["field"]["N"]
    with pytest.raises(ConfigError, match="missing required key: field.N"):
        build_scenario(raw)


def test_invalid_family():
    raw = _raw()
    raw["field"]["volume"] = "wobbly(1.0)"
    with pytest.raises(ConfigError, match="invalid volume family"):
        build_scenario(raw)


@pytest.mark.parametrize("p", [0.0, 4.0, 5.0])
def test_level_out_of_range(p):
    raw = _raw()
    raw["levels"] = {"p": [p]}
    with pytest.raises(ConfigError):
        build_scenario(raw)


def test_grid_dimension_mismatch():
    raw = _raw()
    raw["grid"]["lower"] = [-2.0]
    with pytest.raises(ConfigError):
        build_scenario(raw)


def test_overrides():
    s = load_scenario("harmonic_radial")
    o = with_overrides(s, levels=[1.0, 2.0], resolution=[64, 64])
    assert o.levels == [1.0, 2.0] and o.grid.cells == (64, 64)
    assert s.grid.cells == (256, 256)


def test_run_summary_schema(tmp_path):
    s = load_scenario(_write(tmp_path, SMALL))
    summary = run_scenario(s, tmp_path / "out")
    assert summary["status"] == "pass"
    assert set(summary) >= {"scenario", "config", "steps", "status"}
    on_disk = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert on_disk == summary
    step = summary["steps"][0]
    assert set(step) >= {"t", "U_N", "mass", "curves", "invariants"}
    assert len(step["curves"]) == 3
    for c in step["curves"]:
        assert abs(c["coarea"] - 1) < 1e-2
        assert c["avg_residual"] < c["tol_avg"]
    files = {p.name for p in (tmp_path / "out" / "step_000").iterdir()}
    assert {"equilibrium.csv", "dos.csv", "curve_p1.csv", "kinematics_p2.csv", "tangential_p3.csv"} <= files
    head = (tmp_path / "out" / "step_000" / "dos.csv").read_text().splitlines()[0]
    assert head == "u,P,dPdu"


def test_run_is_deterministic(tmp_path):
    s = load_scenario(_write(tmp_path, SMALL))
    run_scenario(s, tmp_path / "a")
    run_scenario(s, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes(), f.name


def test_cli_run_ok(tmp_path, capsys):
    path = _write(tmp_path, SMALL)
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    assert "status: pass" in capsys.readouterr().out


def test_cli_overrides(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--levels", "2.0",
                 "--resolution", "80x80", "--quiet"]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["config"]["grid"]["resolution"] == [80, 80]
    assert [c["p"] for c in summary["steps"][0]["curves"]] == [2.0]


def test_cli_invariant_failure(tmp_path):
    path = _write(tmp_path, SMALL + "\n[tolerances]\ncoarea = 1e-14\n")
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_INVARIANT


def test_cli_config_error(tmp_path, capsys):
    path = _write(tmp_path, SMALL.replace("potential =", "potental ="))
    assert main(["run", str(path), "--quiet"]) == EXIT_CONFIG
    assert "unknown key: potental" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_cli_abort_on_truncated_box(tmp_path):
    text = SMALL.replace("lower = [-2.0, -2.0]", "lower = [-0.5, -0.5]").replace("upper = [2.0, 2.0]",
                                                                                 "upper = [0.5, 0.5]")
    path = _write(tmp_path, text)
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_ABORT
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["status"] == "abort"


def test_cli_oned(tmp_path, capsys):
    assert main(["oned", "oned_quadratic", "--out", str(tmp_path)]) == EXIT_OK
    data = np.loadtxt(tmp_path / "oned.csv", delimiter=",", skiprows=1)
    assert data.shape[0] == 5
    assert data[-1, 1:5] == pytest.approx([-2.0, 2.0, -1.0, 1.0], abs=1e-8)
    assert main(["oned", "harmonic_radial"]) == EXIT_CONFIG


def test_oned_scenario_run(tmp_path):
    summary = run_scenario(load_scenario("oned_quadratic"), tmp_path)
    assert summary["status"] == "pass"
    assert all(v == "pass" for v in summary["oned"]["invariants"].values())
    assert (tmp_path / "oned.csv").is_file()


def test_cli_counterexample(tmp_path, capsys):
    code = main(["counterexample", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK, out
    rep = json.loads((tmp_path / "counterexample.json").read_text())
    assert rep["max_pointwise_residual"] > 0.05
    assert all(lv["avg_residual"] < 1e-3 for lv in rep["levels"])
