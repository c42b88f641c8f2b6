"""Scenario files, orchestration over a time window, and file emission."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .equilibrium import CellQuadrature, EquilibriumState, Grid, solve_equilibrium
from .errors import CongestaError, ConfigError, DomainTruncatedError
from .fields import FULL_PLANE, FieldSpec
from .kinematics import DT_PROBE, VelocityField, advect_particle, decompose, pointwise_residual_grid, time_probe
from .levelset import extract_level_curves, is_simple, weighted_level_integral
from .oned import continuity_residual_1d, endpoint_speed_1d, mass_identity_residual, oned_table, solve_domain_1d, velocity_1d
from .tangential import perturbed_energy

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"
DEFAULT_LEVEL_FRACTIONS = (0.25, 0.5, 0.75, 1.0 - 1e-3)
MINIMALITY_SHIFTS = (-1.0, -0.1, 0.1, 1.0)

SCHEMA: dict[str, dict[str, Any]] = {
    "field": {"potential": None, "volume": None, "dimension": 2, "topology": FULL_PLANE,
              "critical_point": None, "N": None},
    "grid": {"lower": None, "upper": None, "resolution": 256, "refine": 2},
    "time": {"start": None, "end": None, "steps": 1, "dt_probe": DT_PROBE},
    "levels": {"p": None, "n_vertices": 512},
    "tolerances": {"tol_mass": None, "tol_u": 1e-6, "tol_avg": None, "mass_recovery": None,
                   "coarea": 1e-2, "weak": 1e-8, "solver": 1e-8, "theta_average": 1e-10},
    "outputs": {"dir": None, "equilibrium": True, "dos": True, "curves": True, "kinematics": True,
                "tangential": True, "trajectories": True},
    "particles": {"starts": [], "dt": 0.1, "n_levels": 6, "n_vertices": 256, "tangential": True},
    "checks": {"theta_max": None, "nonzero_v_par": False, "oned_samples": 100},
}
TOP_LEVEL = {"name": None, "description": ""}


@dataclass
class Scenario:
    name: str
    description: str
    field_spec: FieldSpec
    N: float
    grid: Grid
    times: np.ndarray
    levels: list[float]
    config: dict
    source: str | None = None
    extras: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.field_spec.dimension

    @property
    def topology(self) -> str:
        return self.field_spec.topology

    def section(self, name: str) -> dict:
        return self.config[name]

    def tol(self, key: str):
        return self.config["tolerances"][key]


# ------------------------------------------------------------------ loading


def shipped_scenarios() -> list[str]:
    root = resources.files("congesta") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_path(ref: str | Path) -> Path:
    """A file path, or the name of a shipped scenario (with or without .toml)."""
    p = Path(ref)
    if p.is_file():
        return p
    name = p.name[:-5] if p.name.endswith(".toml") else p.name
    candidate = resources.files("congesta") / "scenarios" / f"{name}.toml"
    if candidate.is_file():
        return Path(str(candidate))
    raise ConfigError(f"scenario not found: {ref}")


def _merge(raw: dict) -> dict:
    cfg: dict[str, Any] = {}
    for key, val in raw.items():
        if key in TOP_LEVEL:
            cfg[key] = val
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key: {key}")
        if not isinstance(val, dict):
            raise ConfigError(f"section [{key}] must be a table")
        for sub in val:
            if sub not in SCHEMA[key]:
                raise ConfigError(f"unknown key: {sub}")
    for key, default in TOP_LEVEL.items():
        cfg.setdefault(key, default)
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        cfg[sec] = {k: copy.deepcopy(given.get(k, d)) for k, d in keys.items()}
    return cfg


def _require(cfg: dict, sec: str, key: str):
    if cfg[sec][key] is None:
        raise ConfigError(f"missing required key: {sec}.{key}")
    return cfg[sec][key]


def build_scenario(raw: dict, source: str | None = None) -> Scenario:
    cfg = _merge(raw)
    if cfg["name"] is None:
        cfg["name"] = Path(source).stem if source else "scenario"
    f = cfg["field"]
    spec = FieldSpec.from_ids(_require(cfg, "field", "potential"), _require(cfg, "field", "volume"),
                              dimension=int(f["dimension"]), topology=f["topology"],
                              critical_point=f["critical_point"])
    N = float(_require(cfg, "field", "N"))
    if not N > 0:
        raise ConfigError("field.N must be positive")

    g = cfg["grid"]
    lower = _require(cfg, "grid", "lower")
    upper = _require(cfg, "grid", "upper")
    lower = [float(v) for v in np.atleast_1d(lower)]
    upper = [float(v) for v in np.atleast_1d(upper)]
    res = g["resolution"]
    res = [int(r) for r in np.atleast_1d(res)]
    if len(res) == 1:
        res = res * spec.dimension
    if not (len(lower) == len(upper) == len(res) == spec.dimension):
        raise ConfigError("grid.lower, grid.upper and grid.resolution must match the field dimension")
    try:
        grid = Grid(tuple(lower), tuple(upper), tuple(res), int(g["refine"]))
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc

    t = cfg["time"]
    start = float(_require(cfg, "time", "start"))
    end = float(start if t["end"] is None else t["end"])
    steps = int(t["steps"])
    if steps < 1 or end < start:
        raise ConfigError("time window needs end >= start and steps >= 1")
    times = np.linspace(start, end, steps)

    lv = cfg["levels"]
    levels = [float(p) for p in lv["p"]] if lv["p"] is not None else [N * q for q in DEFAULT_LEVEL_FRACTIONS]
    for p in levels:
        if not 0 < p < N:
            raise ConfigError(f"level p={p} must satisfy 0 < p < N={N}")

    tol = cfg["tolerances"]
    if tol["tol_mass"] is None:
        tol["tol_mass"] = 1e-4 * N
    if tol["mass_recovery"] is None:
        tol["mass_recovery"] = 1e-3 * N
    if cfg["outputs"]["dir"] is None:
        cfg["outputs"]["dir"] = str(Path("runs") / cfg["name"])
    cfg["levels"]["p"] = levels
    cfg["grid"].update(lower=lower, upper=upper, resolution=res)
    cfg["time"].update(start=start, end=end)
    return Scenario(cfg["name"], cfg["description"], spec, N, grid, times, levels, cfg, source)


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file (or a shipped scenario name)."""
    p = resolve_path(path)
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return build_scenario(raw, str(p))


def with_overrides(s: Scenario, levels=None, resolution=None, out=None, times=None) -> Scenario:
    raw = copy.deepcopy(s.config)
    if levels is not None:
        raw["levels"]["p"] = list(levels)
    if resolution is not None:
        raw["grid"]["resolution"] = list(resolution)
    if out is not None:
        raw["outputs"]["dir"] = str(out)
    if times is not None:
        raw["time"].update(start=float(times[0]), end=float(times[-1]), steps=len(times))
    return build_scenario(raw, s.source)


# ------------------------------------------------------------------ output


def _fmt_level(p: float) -> str:
    return f"{p:g}"


def write_csv(path: Path, header: list[str], columns) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=FLOAT_FMT)


def _write_equilibrium(state: EquilibriumState, out: Path) -> None:
    d = state.spec.dimension
    X = state.nodes.reshape(-1, d)
    W = state.W_nodes.reshape(-1)
    ti = state.tau_inv_nodes.reshape(-1)
    n = np.where(W <= state.U_N, ti, 0.0)
    pi = state.pi_nodes.reshape(-1)
    cols = [X[:, i] for i in range(d)] + [W, ti, n, pi]
    write_csv(out / "equilibrium.csv", [f"x{i + 1}" for i in range(d)] + ["W", "tau_inv", "n", "pi"], cols)


def _write_dos(state: EquilibriumState, out: Path) -> None:
    write_csv(out / "dos.csv", ["u", "P", "dPdu"], [state.u_table, state.P_table, state.dPdu_table])


# ------------------------------------------------------------------ running


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def enclosed_masses(state: EquilibriumState, levels) -> list[float]:
    """Quadrature mass of {pi <= p} for each level, straight from the quadrature."""
    q = CellQuadrature(state.spec, state.t, state.grid)
    return [float(v) for v in q.P([state.U_of_p(p) for p in levels])]


def _level_report(s: Scenario, state, probe, p, out: Path | None) -> tuple[dict, dict]:
    tol = s.config["tolerances"]
    outs = s.config["outputs"]
    curves = extract_level_curves(state, p, s.config["levels"]["n_vertices"])
    length = sum(c.length for c in curves)
    tol_avg = tol["tol_avg"] if tol["tol_avg"] is not None else 1e-3 * s.N / length
    coarea = sum(weighted_level_integral(c, c.tau_inv) for c in curves)
    f_int = 0.0
    comps = []
    checks = {"simple": True, "minimality": True, "weak": True, "theta_average": True,
              "coercive": True, "outward": True}
    for k, c in enumerate(curves):
        dec = decompose(probe, c, tol_avg=10 * tol_avg, coercivity=True)
        sol = dec.tangential
        f_int += weighted_level_integral(c, dec.f)
        e0 = sol.energy
        mins = [perturbed_energy(c, sol.v_par, a) - e0 for a in MINIMALITY_SHIFTS]
        mean_theta = abs(weighted_level_integral(c, sol.theta)) / max(np.sum(c.weights), 1e-300)
        checks["simple"] &= is_simple(c)
        checks["minimality"] &= min(mins) >= -1e-12 * max(e0, 1e-300)
        checks["weak"] &= sol.weak_residual <= tol["weak"] * max(sol.source_norm, 1e-300)
        checks["theta_average"] &= mean_theta <= tol["theta_average"] * max(1.0, float(np.max(np.abs(sol.theta))))
        checks["coercive"] &= sol.coercivity > 0
        if s.topology == FULL_PLANE:
            cp = np.asarray(s.field_spec.critical_point)
            checks["outward"] &= bool(np.all(np.sum(c.normal * (c.vertices - cp), axis=1) > 0))
        comps.append({
            "length": c.length,
            "avg_residual": abs(weighted_level_integral(c, dec.f)),
            "theta_norm": float(np.max(np.abs(sol.theta))),
            "max_v_par": float(np.max(np.abs(sol.v_par))),
            "energy": sol.energy,
            "weak_residual": sol.weak_residual,
            "source_norm": sol.source_norm,
            "coercivity": sol.coercivity,
            "minimality_margin": min(mins),
            "flagged_vertices": int(np.sum(dec.flags)),
            "warnings": sol.warnings,
        })
        if out is not None:
            tag = _fmt_level(p) if len(curves) == 1 else f"{_fmt_level(p)}_{k}"
            if outs["curves"]:
                write_csv(out / f"curve_p{tag}.csv", ["s", "x1", "x2", "nu1", "nu2", "tau_inv", "grad_pi_norm"],
                          [c.arclength, c.vertices[:, 0], c.vertices[:, 1], c.normal[:, 0], c.normal[:, 1],
                           c.tau_inv, c.grad_pi_norm])
            if outs["kinematics"]:
                write_csv(out / f"kinematics_p{tag}.csv", ["s", "w_perp", "f"], [c.arclength, dec.w_perp, dec.f])
            if outs["tangential"]:
                write_csv(out / f"tangential_p{tag}.csv", ["s", "theta", "v_par"], [c.arclength, sol.theta, sol.v_par])
    entry = {
        "p": p,
        "components": len(curves),
        "length": length,
        "coarea": coarea,
        "avg_residual": abs(f_int),
        "tol_avg": tol_avg,
        "theta_norm": max(c["theta_norm"] for c in comps),
        "max_v_par": max(c["max_v_par"] for c in comps),
        "energy": sum(c["energy"] for c in comps),
        "weak_residual": max(c["weak_residual"] for c in comps),
        "coercivity": min(c["coercivity"] for c in comps),
        "per_component": comps,
    }
    checks["coarea"] = abs(coarea - 1.0) <= tol["coarea"]
    checks["averaged_continuity"] = abs(f_int) < tol_avg
    return entry, checks


def _run_step(s: Scenario, t: float, out: Path | None) -> dict:
    tol = s.config["tolerances"]
    outs = s.config["outputs"]
    state = solve_equilibrium(s.field_spec, s.N, t, s.grid, tol_u=tol["tol_u"], tol_mass=tol["tol_mass"])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if outs["equilibrium"]:
            _write_equilibrium(state, out)
        if outs["dos"]:
            _write_dos(state, out)
    inv: dict[str, Any] = {
        "P_strictly_increasing": _verdict(state.strictly_increasing),
        "fermi_residual": _verdict(abs(float(state.P(state.U_N)) - s.N) <= tol["tol_mass"]),
        "mass_recovery": _verdict(abs(state.mass - s.N) <= tol["mass_recovery"]),
    }
    step = {"t": t, "U_N": state.U_N, "mass": state.mass, "energy": state.energy,
            "u_max": state.u_max, "warnings": list(state.warnings), "curves": []}
    if s.dimension == 1:
        step["invariants"] = inv
        return step
    probe = time_probe(state, s.config["time"]["dt_probe"])
    masses = enclosed_masses(state, s.levels)
    inv["enclosed_mass"] = _verdict(all(abs(m - p) <= tol["tol_mass"] for m, p in zip(masses, s.levels)))
    agg = {}
    for p in s.levels:
        entry, checks = _level_report(s, state, probe, p, out)
        step["curves"].append(entry)
        for k, v in checks.items():
            agg[k] = agg.get(k, True) and bool(v)
    names = {"coarea": "coarea_normalisation", "averaged_continuity": "averaged_continuity",
             "simple": "curves_simple", "minimality": "kinetic_energy_minimality",
             "weak": "weak_residual", "theta_average": "theta_zero_average",
             "coercive": "coercivity_positive", "outward": "normal_outward"}
    for k, name in names.items():
        inv[name] = _verdict(agg[k])
    chk = s.config["checks"]
    if chk["theta_max"] is not None:
        inv["theta_max"] = _verdict(max(c["theta_norm"] for c in step["curves"]) < chk["theta_max"])
    if chk["nonzero_v_par"]:
        inv["nonzero_v_par"] = _verdict(max(c["max_v_par"] for c in step["curves"]) > 10 * tol["solver"])
    step["invariants"] = inv
    return step


def _run_oned(s: Scenario, out: Path | None) -> dict:
    spec, N = s.field_spec, s.N
    header, rows = oned_table(spec, N, s.times)
    if out is not None:
        write_csv(out / "oned.csv", header, rows.T)
    endpoint, cont, ident = 0.0, 0.0, 0.0
    for t in s.times:
        iv = solve_domain_1d(spec, N, t)
        sp = endpoint_speed_1d(spec, N, t, iv)
        endpoint = max(endpoint, abs(velocity_1d(spec, N, iv.a, t, iv, sp) - sp[0]),
                       abs(velocity_1d(spec, N, iv.b, t, iv, sp) - sp[1]))
        m = int(s.config["checks"]["oned_samples"])
        margin = 0.01 * (iv.b - iv.a)
        xs = np.linspace(iv.a + margin, iv.b - margin, m)
        cont = max(cont, float(np.max(np.abs(continuity_residual_1d(spec, N, t, xs)))))
        ident = max(ident, abs(mass_identity_residual(spec, N, t)))
    return {
        "endpoint_consistency": endpoint,
        "continuity_residual": cont,
        "mass_identity": ident,
        "invariants": {
            "endpoint_consistency": _verdict(endpoint < 1e-8),
            "continuity_residual": _verdict(cont < 1e-6),
            "mass_identity": _verdict(ident < 1e-8),
        },
    }


def _run_particles(s: Scenario, out: Path | None) -> dict:
    par = s.config["particles"]
    starts = [np.asarray(x, dtype=float) for x in par["starts"]]
    if not starts:
        return {}
    vf = VelocityField(s.field_spec, s.N, s.grid, dt_probe=s.config["time"]["dt_probe"],
                       n_levels=int(par["n_levels"]), n_vertices=int(par["n_vertices"]),
                       tangential=bool(par["tangential"]))
    t0, t1 = float(s.times[0]), float(s.times[-1])
    trajs = []
    for i, x0 in enumerate(starts):
        tr = advect_particle(vf, x0, t0, t1, float(par["dt"]))
        trajs.append(tr)
        if out is not None and s.config["outputs"]["trajectories"]:
            write_csv(out / f"trajectory_{i}.csv", ["t", "x1", "x2", "pi"],
                      [tr.times, tr.points[:, 0], tr.points[:, 1], tr.pi])
    drift = max(float(np.max(np.abs(tr.pi - tr.pi[0]))) for tr in trajs)
    order = np.argsort([tr.pi[0] for tr in trajs], kind="stable")
    distinct = [i for i in order]
    ordered = True
    n = min(len(tr.pi) for tr in trajs)
    for a, b in zip(distinct[:-1], distinct[1:]):
        if trajs[a].pi[0] < trajs[b].pi[0]:
            ordered &= bool(np.all(trajs[a].pi[:n] < trajs[b].pi[:n]))
    return {
        "pi_drift": drift,
        "clamped": [bool(tr.clamped) for tr in trajs],
        "invariants": {
            "pi_conservation": _verdict(drift < 1e-2 * s.N),
            "non_swapping": _verdict(ordered),
        },
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _json_float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _all_pass(inv: dict) -> bool:
    return all(v != "fail" for v in inv.values())


def run_scenario(s: Scenario, out_dir: str | Path | None = None, write: bool = True) -> dict:
    """Run every time sample, emit files and return the summary (also written as summary.json)."""
    out = Path(out_dir if out_dir is not None else s.config["outputs"]["dir"]) if write else None
    summary: dict[str, Any] = {"scenario": s.name, "config": s.config, "steps": []}
    aborted = False
    try:
        # the box must hold the medium over the whole window
        tol = s.config["tolerances"]
        solve_equilibrium(s.field_spec, s.N, float(s.times[-1]), s.grid, tol_u=tol["tol_u"], tol_mass=tol["tol_mass"])
    except DomainTruncatedError as exc:
        summary["error"] = f"domain-truncated at t_end={s.times[-1]:g}: {exc}"
        aborted = True
    if not aborted:
        for i, t in enumerate(s.times):
            step_out = out / f"step_{i:03d}" if out is not None else None
            try:
                summary["steps"].append(_run_step(s, float(t), step_out))
            except CongestaError as exc:
                summary["steps"].append({"t": float(t), "error": f"{type(exc).__name__}: {exc}"})
                aborted = True
        try:
            if s.dimension == 1:
                summary["oned"] = _run_oned(s, out)
            elif s.config["particles"]["starts"]:
                summary["particles"] = _run_particles(s, out)
        except CongestaError as exc:
            summary["error"] = f"{type(exc).__name__}: {exc}"
            aborted = True
    invs = [st.get("invariants", {}) for st in summary["steps"]]
    invs += [summary[k]["invariants"] for k in ("oned", "particles") if k in summary and summary[k]]
    passed = all(_all_pass(i) for i in invs)
    summary["status"] = "abort" if aborted else ("pass" if passed else "fail")
    summary = _jsonable(summary)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=False)
            fh.write("\n")
    return summary


# ------------------------------------------------------- counter-example


def counterexample_report(s: Scenario, t: float | None = None, out_dir: str | Path | None = None,
                          threshold: float = 0.05, avg_tol: float = 1e-3, weak_tol: float = 1e-6) -> dict:
    """Continuity under the purely normal velocity, before and after the tangential correction.

    Reports (i) the largest pointwise residual on grid nodes of the medium,
    (ii) the averaged residual on each level, and (iii) the weak residual of
    the tangential problem and the size of the resulting v_par.
    """
    spec = s.field_spec
    if spec.topology != "torus-strip" or spec.potential.ident != "separable_x2" or spec.volume.ident != "radial_time":
        raise ConfigError("the counter-example needs separable_x2, radial_time on the torus strip")
    t = float(s.times[0]) if t is None else float(t)
    if t <= 0:
        raise ConfigError("the counter-example needs t > 0")
    state = solve_equilibrium(spec, s.N, t, s.grid)
    probe = time_probe(state, s.config["time"]["dt_probe"])
    h = float(np.min(s.grid.spacing))
    band = 3 * h
    pts, f = pointwise_residual_grid(state, s.config["time"]["dt_probe"], exclude_radius=band)
    k = int(np.argmax(np.abs(f)))
    levels = []
    for p in s.levels:
        curves = extract_level_curves(state, p, s.config["levels"]["n_vertices"])
        total = 0.0
        weak, vmax, fmax = 0.0, 0.0, 0.0
        for c in curves:
            dec = decompose(probe, c, coercivity=False)
            total += weighted_level_integral(c, dec.f)
            weak = max(weak, dec.tangential.weak_residual)
            vmax = max(vmax, float(np.max(np.abs(dec.v_par))))
            fmax = max(fmax, float(np.max(np.abs(dec.f))))
        levels.append({"p": p, "components": len(curves), "avg_residual": abs(total),
                       "max_f": fmax, "weak_residual": weak, "max_v_par": vmax})
    report = {
        "scenario": s.name,
        "t": t,
        "resolution": list(s.grid.cells),
        "excluded_band": band,
        "grid_points": int(len(pts)),
        "max_pointwise_residual": float(abs(f[k])),
        "argmax": [float(v) for v in pts[k]],
        "levels": levels,
    }
    solver_tol = s.config["tolerances"]["solver"]
    report["checks"] = {
        "pointwise_residual_large": _verdict(report["max_pointwise_residual"] > threshold),
        "averaged_residual_small": _verdict(all(lv["avg_residual"] < avg_tol for lv in levels)),
        "weak_residual_small": _verdict(all(lv["weak_residual"] < weak_tol for lv in levels)),
        "nonzero_v_par": _verdict(max(lv["max_v_par"] for lv in levels) > 10 * solver_tol),
    }
    report["status"] = "pass" if _all_pass(report["checks"]) else "fail"
    report = _jsonable(report)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "counterexample.json", "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    return report
