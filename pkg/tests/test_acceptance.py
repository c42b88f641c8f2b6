"""Acceptance criteria C1-C9.

Each test records its checks through the ``report`` fixture; the terminal
summary prints one PASS/FAIL line per criterion.  Run on its own with

    pytest tests/test_acceptance.py -v
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

import oracles as O
from congesta.equilibrium import Grid, clear_cache, solve_equilibrium
from congesta.fields import FieldSpec
from congesta.kinematics import VelocityField, advect_particle, normal_speed, source_at, time_probe
from congesta.levelset import extract_level_curve, extract_level_curves, weighted_level_integral
from congesta.oned import continuity_residual_1d, endpoint_speed_1d, solve_domain_1d, velocity_1d
from congesta.scenario import counterexample_report, load_scenario, run_scenario, shipped_scenarios, with_overrides
from congesta.tangential import assemble, solve_theta_on_curve

pytestmark = pytest.mark.acceptance

SHIPPED = shipped_scenarios()
PLANAR = [n for n in SHIPPED if load_scenario(n).dimension == 2]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Every shipped scenario run twice from a cold cache, into separate directories."""
    base = tmp_path_factory.mktemp("acceptance")
    out = {}
    for name in SHIPPED:
        s = load_scenario(name)
        summaries = []
        for tag in ("a", "b"):
            clear_cache()
            summaries.append(run_scenario(s, base / tag / name))
        out[name] = (s, summaries[0], base / "a" / name, base / "b" / name)
    return out


def _curves(summary):
    for step in summary["steps"]:
        for c in step.get("curves", []):
            yield step["t"], c


# ---------------------------------------------------------------- C1


def test_c1_harmonic_equilibrium(report):
    spec = FieldSpec.from_ids("harmonic", "constant(0.5)")
    clear_cache()
    t0 = time.perf_counter()
    state = solve_equilibrium(spec, 10.0, 0.0, Grid.square(3.0, 256))
    elapsed = time.perf_counter() - t0
    exact = 10.0 * 0.5 / (2 * math.pi)
    rel = abs(state.U_N - exact) / state.U_N
    ok = [
        report("C1", "Fermi level vs N tau0 / 2 pi", rel < 1e-3, f"rel err {rel:.2e} < 1e-3"),
        report("C1", "quadrature mass", abs(state.mass - 10.0) <= 1e-3 * 10.0,
               f"|mass - N| = {abs(state.mass - 10.0):.2e} <= 1e-2"),
        report("C1", "runtime", elapsed < 5.0, f"{elapsed:.2f} s < 5 s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- C2


def test_c2_P_strictly_increasing(runs, report):
    ok = []
    for name, (s, summary, _, _) in runs.items():
        flags = [step["invariants"]["P_strictly_increasing"] == "pass" for step in summary["steps"]]
        direct = True
        for t in s.times:
            state = solve_equilibrium(s.field_spec, s.N, float(t), s.grid)
            direct &= len(state.P_table) == 512 and bool(np.all(np.diff(state.P_table) > 0))
        ok.append(report("C2", f"{name}: 512-entry P_table", all(flags) and direct,
                         f"{len(s.times)} time samples"))
    assert all(ok)


# ---------------------------------------------------------------- C3


def test_c3_coarea_normalisation(runs, report):
    ok = []
    for name in PLANAR:
        s, summary, _, _ = runs[name]
        errs = [abs(c["coarea"] - 1.0) for _, c in _curves(summary)]
        ok.append(report("C3", f"{name}: coarea = 1 +- 1e-2", max(errs) <= 1e-2,
                         f"{len(errs)} curves, max |err| {max(errs):.2e}"))
        # two-fold refinement study at the first time sample
        t = float(s.times[0])
        means = []
        for res in (s.grid.cells[0] // 2, s.grid.cells[0]):
            r = with_overrides(s, resolution=[res, res * s.grid.cells[1] // s.grid.cells[0]])
            state = solve_equilibrium(r.field_spec, r.N, t, r.grid)
            e = [abs(sum(weighted_level_integral(c, c.tau_inv)
                         for c in extract_level_curves(state, p, s.config["levels"]["n_vertices"])) - 1.0)
                 for p in s.levels]
            means.append(float(np.mean(e)))
        ok.append(report("C3", f"{name}: converges under 2x refinement", means[1] < means[0],
                         f"mean |err| {means[0]:.2e} -> {means[1]:.2e}"))
    assert all(ok)


# ---------------------------------------------------------------- C4


def test_c4_normal_speed_and_trajectories(report):
    s = load_scenario("harmonic_radial")
    par = s.config["particles"]
    clear_cache()
    t0 = time.perf_counter()
    state = solve_equilibrium(s.field_spec, s.N, 0.0, s.grid)
    w = normal_speed(state, [1.0, 0.0])
    vf = VelocityField(s.field_spec, s.N, s.grid, n_levels=par["n_levels"], n_vertices=par["n_vertices"])
    radius_err, drift = 0.0, 0.0
    for x0 in par["starts"]:
        tr = advect_particle(vf, np.asarray(x0, dtype=float), 0.0, 1.0, par["dt"])
        r0 = float(np.linalg.norm(x0))
        exact = np.array([O.radial_radius(r0, t) for t in tr.times])
        radius_err = max(radius_err, float(np.max(np.abs(np.linalg.norm(tr.points, axis=1) - exact))))
        drift = max(drift, float(np.max(np.abs(tr.pi - tr.pi[0]))))
    elapsed = time.perf_counter() - t0
    ok = [
        report("C4", "w_perp at |x| = 1, t = 0", abs(w - 0.5) < 1e-3, f"{w:.6f} vs 0.5"),
        report("C4", "particle radius r0 sqrt(1 + t)", radius_err < 1e-3, f"max err {radius_err:.2e}"),
        report("C4", "pi conserved along paths", drift < 1e-2 * s.N, f"max drift {drift:.2e} < {1e-2 * s.N:g}"),
        report("C4", "runtime", elapsed < 30.0, f"{elapsed:.1f} s < 30 s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- C5


def test_c5_averaged_continuity(runs, report):
    ok = []
    for name in PLANAR:
        s, summary, _, _ = runs[name]
        worst = 0.0
        good = True
        for _, c in _curves(summary):
            tol = 1e-3 * s.N / c["length"]
            worst = max(worst, c["avg_residual"] / tol)
            good &= c["avg_residual"] < tol
            for comp in c["per_component"]:
                tol_k = 1e-3 * s.N / comp["length"]
                worst = max(worst, comp["avg_residual"] / tol_k)
                good &= comp["avg_residual"] < tol_k
        ok.append(report("C5", f"{name}: residual < 1e-3 N / L", good, f"worst residual / tol = {worst:.3f}"))
    assert all(ok)


# ---------------------------------------------------------------- C6


def test_c6_counterexample(report):
    s = load_scenario("counterexample_52")
    clear_cache()
    t0 = time.perf_counter()
    rep = counterexample_report(s, t=1.0)
    elapsed = time.perf_counter() - t0
    avg = max(lv["avg_residual"] for lv in rep["levels"])
    vpar = max(lv["max_v_par"] for lv in rep["levels"])
    solver = s.config["tolerances"]["solver"]
    ok = [
        report("C6", "grid resolution", rep["resolution"] == [256, 256], f"{rep['resolution']}"),
        report("C6", "pointwise residual under pure normal velocity", rep["max_pointwise_residual"] > 0.05,
               f"{rep['max_pointwise_residual']:.4g} > 0.05"),
        report("C6", "averaged residual", avg < 1e-3, f"max {avg:.2e} < 1e-3"),
        report("C6", "tangential component present", vpar > 10 * solver, f"max |v_par| {vpar:.4g} > {10 * solver:g}"),
        report("C6", "runtime", elapsed < 60.0, f"{elapsed:.1f} s < 60 s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- C7


def test_c7_tangential_solver(runs, report):
    spec = FieldSpec.from_ids("harmonic", "constant(0.5)")
    state = solve_equilibrium(spec, 10.0, 0.0, Grid.square(3.0, 256))
    circle = extract_level_curve(state, 2 * math.pi, n_vertices=512)
    stiff = assemble(circle, np.zeros(circle.n))
    worst = 0.0
    for k in (1, 2, 3, 5, 8):
        theta = O.manufactured_theta(circle.arclength, circle.length, k)
        got = solve_theta_on_curve(circle, stiff.apply(theta) / circle.weights)
        worst = max(worst, float(np.linalg.norm(got - theta) / np.linalg.norm(theta)))
    ok = [report("C7", "manufactured solution on the circle, 512 vertices", worst < 1e-6,
                 f"rel L2 err {worst:.2e} < 1e-6")]

    grow = solve_equilibrium(FieldSpec.from_ids("harmonic", "linear_time(0.5)"), 10.0, 0.0, Grid.square(3.0, 256))
    probe = time_probe(grow)
    theta_max = 0.0
    for p in (2.5, 5.0, 7.5, 9.99):
        c = extract_level_curve(grow, p, n_vertices=512)
        theta_max = max(theta_max, float(np.max(np.abs(solve_theta_on_curve(c, source_at(probe, c.vertices).f)))))
    _, radial, _, _ = runs["harmonic_radial"]
    theta_max = max([theta_max] + [c["theta_norm"] for _, c in _curves(radial)])
    ok.append(report("C7", "theta = 0 on the radial scenario", theta_max < 1e-8, f"max |theta| {theta_max:.2e}"))

    n_curves, margin, good = 0, math.inf, True
    for name in PLANAR:
        _, summary, _, _ = runs[name]
        for step in summary["steps"]:
            good &= step["invariants"]["kinetic_energy_minimality"] == "pass"
            for c in step["curves"]:
                for comp in c["per_component"]:
                    n_curves += 1
                    margin = min(margin, comp["minimality_margin"])
    ok.append(report("C7", "minimality for c in {+-0.1, +-1}", good and margin >= 0,
                     f"{n_curves} curves, smallest energy gap {margin:.3e}"))
    assert all(ok)


# ---------------------------------------------------------------- C8


def test_c8_oned_suite(report):
    t0 = time.perf_counter()
    specs = {
        "symmetric": FieldSpec.from_ids("harmonic", "linear_time(1.0)", dimension=1),
        "asymmetric": FieldSpec.from_ids("polynomial(0.0, 0.0, 0.5, 0.1)", "tilted_time(1.0, 0.3)", dimension=1),
    }
    endpoint, cont, sym = 0.0, 0.0, 0.0
    for name, spec in specs.items():
        for t in (0.0, 0.5, 1.0):
            iv = solve_domain_1d(spec, 2.0, t)
            sp = endpoint_speed_1d(spec, 2.0, t, iv)
            endpoint = max(endpoint, abs(velocity_1d(spec, 2.0, iv.a, t, iv, sp) - sp[0]),
                           abs(velocity_1d(spec, 2.0, iv.b, t, iv, sp) - sp[1]))
            xs = np.linspace(iv.a, iv.b, 102)[1:-1]
            cont = max(cont, float(np.max(np.abs(continuity_residual_1d(spec, 2.0, t, xs)))))
            if name == "symmetric":
                for x in np.linspace(iv.a, iv.b, 11):
                    sym = max(sym, abs(velocity_1d(spec, 2.0, x, t, iv, sp) - O.oned_velocity(x, t)))
    elapsed = time.perf_counter() - t0
    ok = [
        report("C8", "v(a) = a', v(b) = b'", endpoint < 1e-8, f"max err {endpoint:.2e}"),
        report("C8", "continuity residual, 100 interior points", cont < 1e-6, f"max {cont:.2e}"),
        report("C8", "symmetric case v = x tau'/tau", sym < 1e-8, f"max err {sym:.2e}"),
        report("C8", "runtime", elapsed < 1.0, f"{elapsed:.2f} s < 1 s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- C9


def test_c9_determinism(runs, report):
    ok = []
    for name, (_, _, a, b) in runs.items():
        files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
        other = sorted(p.relative_to(b) for p in b.rglob("*.csv"))
        same = files == other and all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
        ok.append(report("C9", f"{name}: byte-identical CSVs", same and bool(files), f"{len(files)} files"))
    assert all(ok)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([__file__, "-v"]))
