"""Normal kinematics of the level sets of pi and particle transport.

The normal speed is ``w = -d_t pi / |grad pi|``, with ``d_t pi`` taken by
differencing frozen equilibria at neighbouring times.  The tangential source
is ``f = -d_t tau^-1 - div(tau^-1 w nu)``: the part of the continuity
equation the normal velocity leaves unbalanced.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import EquilibriumState, solve_equilibrium
from .errors import (
    DegenerateNormalError,
    DomainTruncatedError,
    EscapeError,
    InvalidFieldError,
)
from .levelset import GRAD_FLOOR, LevelCurve, extract_level_curves, weighted_level_integral
from .tangential import TangentialSolution, solve_tangential

log = logging.getLogger(__name__)

DT_PROBE = 1e-3


@dataclass(frozen=True, eq=False)
class TimeProbe:
    """Equilibria around ``state.t`` used to difference pi in time."""

    state: EquilibriumState
    dt: float
    others: tuple[EquilibriumState, ...]
    centred: bool

    def dpi_dt(self, x) -> np.ndarray:
        spec, t, dt = self.state.spec, self.state.t, self.dt
        if self.centred:
            lo, hi = self.others
            return (hi.P(spec.W(x, t + dt)) - lo.P(spec.W(x, t - dt))) / (2 * dt)
        p1, p2 = self.others
        p0 = self.state.P(spec.W(x, t))
        return (-3 * p0 + 4 * p1.P(spec.W(x, t + dt)) - p2.P(spec.W(x, t + 2 * dt))) / (2 * dt)


def _probe_solve(state, t):
    try:
        return solve_equilibrium(state.spec, state.N, t, state.grid, u_max=state.u_max)
    except DomainTruncatedError:
        return solve_equilibrium(state.spec, state.N, t, state.grid)


def time_probe(state: EquilibriumState, dt_probe: float = DT_PROBE) -> TimeProbe:
    """Centred probes at t +- dt, or forward second-order ones if t - dt is not admissible."""
    if dt_probe <= 0:
        raise ValueError("dt_probe must be positive")
    t = state.t
    try:
        lo = _probe_solve(state, t - dt_probe)
        hi = _probe_solve(state, t + dt_probe)
        return TimeProbe(state, dt_probe, (lo, hi), True)
    except InvalidFieldError:
        pass
    p1 = _probe_solve(state, t + dt_probe)
    p2 = _probe_solve(state, t + 2 * dt_probe)
    return TimeProbe(state, dt_probe, (p1, p2), False)


def _normal_fields(probe: TimeProbe, x):
    """(w_perp, nu, grad W) at points x; raises on degenerate gradients."""
    state = probe.state
    spec, t = state.spec, state.t
    gW = spec.grad_W(x, t)
    gn = np.linalg.norm(gW, axis=-1)
    gpi = state.dPdu(np.clip(spec.W(x, t), 0.0, state.u_max)) * gn
    if np.any(gpi < GRAD_FLOOR):
        raise DegenerateNormalError("|grad pi| vanishes; normal speed undefined")
    nu = gW / gn[..., None]
    w = -probe.dpi_dt(x) / gpi
    return w, nu


def normal_speed(state: EquilibriumState, x, dt_probe: float = DT_PROBE):
    """Normal speed of the level set of pi through ``x``."""
    w, _ = _normal_fields(time_probe(state, dt_probe), np.asarray(x, dtype=float))
    return float(np.reshape(w, -1)[0]) if np.size(w) == 1 else w


def _flux(probe: TimeProbe, x) -> np.ndarray:
    w, nu = _normal_fields(probe, x)
    return (probe.state.spec.tau_inv(x, probe.state.t) * w)[..., None] * nu


@dataclass(eq=False)
class SourceTerm:
    f: np.ndarray
    one_sided: np.ndarray
    extended: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        return self.one_sided | self.extended


def _source_once(probe: TimeProbe, x: np.ndarray, h: float) -> SourceTerm:
    state = probe.state
    spec, t = state.spec, state.t
    gW = spec.grad_W(x, t)
    gn = np.linalg.norm(gW, axis=-1)
    if np.any(gn < GRAD_FLOOR):
        raise DegenerateNormalError("stencil centre at a critical point")
    nu = gW / gn[:, None]
    tan = np.stack([-nu[:, 1], nu[:, 0]], axis=1)

    out_plus = spec.W(x + h * nu, t) > state.U_N
    F0 = _flux(probe, x)
    Fm = _flux(probe, x - h * nu)
    dn = np.empty(len(x))
    inner = ~out_plus
    if np.any(inner):
        Fp = _flux(probe, x[inner] + h * nu[inner])
        dn[inner] = np.sum((Fp - Fm[inner]) * nu[inner], axis=1) / (2 * h)
    if np.any(out_plus):
        Fmm = _flux(probe, x[out_plus] - 2 * h * nu[out_plus])
        d = 3 * F0[out_plus] - 4 * Fm[out_plus] + Fmm
        dn[out_plus] = np.sum(d * nu[out_plus], axis=1) / (2 * h)

    xs_p = x + h * tan
    xs_m = x - h * tan
    extended = (spec.W(xs_p, t) > state.U_N) | (spec.W(xs_m, t) > state.U_N)
    dt_ = np.sum((_flux(probe, xs_p) - _flux(probe, xs_m)) * tan, axis=1) / (2 * h)

    f = -spec.dtau_inv_dt(x, t) - (dn + dt_)
    return SourceTerm(f, out_plus, extended)


def source_at(probe: TimeProbe, x, h: float | None = None, extrapolate: bool = True) -> SourceTerm:
    """Tangential source at arbitrary points inside the medium.

    The divergence is taken on a five-point stencil aligned with the local
    normal and tangent, so it does not depend on the orientation of the grid.
    Where ``x + h nu`` leaves the medium a one-sided normal difference is used.
    Tangential stencil points beyond the medium use the smooth extension of the
    fields and are flagged.  Both stencils are second order, so by default the
    results for steps h and h/2 are combined to cancel the h^2 term.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h = float(np.min(probe.state.grid.spacing)) if h is None else float(h)
    coarse = _source_once(probe, x, h)
    if not extrapolate:
        return coarse
    fine = _source_once(probe, x, 0.5 * h)
    return SourceTerm((4 * fine.f - coarse.f) / 3, coarse.one_sided | fine.one_sided,
                      coarse.extended | fine.extended)


def tangential_source(state: EquilibriumState, curve: LevelCurve, dt_probe: float = DT_PROBE) -> SourceTerm:
    """f at the vertices of ``curve``."""
    if abs(curve.t - state.t) > 1e-14:
        raise ValueError("curve and state are at different times")
    return source_at(time_probe(state, dt_probe), curve.vertices)


def check_averaged_continuity(curve: LevelCurve, f) -> float:
    """|integral of f against ds/|grad pi|| on the curve."""
    return abs(weighted_level_integral(curve, f))


@dataclass(eq=False)
class VelocityDecomposition:
    curve: LevelCurve
    w_perp: np.ndarray
    f: np.ndarray
    flags: np.ndarray
    theta: np.ndarray | None = None
    v_par: np.ndarray | None = None
    tangential: TangentialSolution | None = None

    @property
    def averaged_residual(self) -> float:
        return check_averaged_continuity(self.curve, self.f)

    def velocity(self) -> np.ndarray:
        """Full velocity w nu + v_par t at each vertex."""
        v = self.w_perp[:, None] * self.curve.normal
        if self.v_par is not None:
            v = v + self.v_par[:, None] * self.curve.tangent
        return v


def decompose(probe: TimeProbe, curve: LevelCurve, tol_avg: float | None = None,
              solve: bool = True, coercivity: bool = True) -> VelocityDecomposition:
    w, _ = _normal_fields(probe, curve.vertices)
    src = source_at(probe, curve.vertices)
    dec = VelocityDecomposition(curve, w, src.f, src.flagged)
    if solve:
        sol = solve_tangential(curve, src.f, tol_avg, coercivity=coercivity)
        dec.theta, dec.v_par, dec.tangential = sol.theta, sol.v_par, sol
    return dec


# --------------------------------------------------------------- transport


def _closest_on_polyline(curve: LevelCurve, values: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Vertex ``values`` interpolated at the point of ``curve`` closest to ``x``, and the squared distance."""
    a = curve.vertices
    seg = curve.segments
    d = x - a
    if np.any(curve.period):
        d[:, 0] = d[:, 0] - 2.0 * np.round(d[:, 0] / 2.0)
    lam = np.clip(np.sum(d * seg, axis=1) / np.maximum(np.sum(seg * seg, axis=1), 1e-300), 0.0, 1.0)
    dist = np.sum((d - lam[:, None] * seg) ** 2, axis=1)
    k = int(np.argmin(dist))
    return float((1 - lam[k]) * values[k] + lam[k] * values[(k + 1) % len(values)]), float(dist[k])


@dataclass
class VelocityField:
    """v = w nu + v_par t at any time, from frozen equilibria.

    v_par is solved on ``n_levels`` curves spread over (0, N) and interpolated
    linearly in p between the two nearest ones.
    """

    spec: object
    N: float
    grid: object
    dt_probe: float = DT_PROBE
    n_levels: int = 8
    n_vertices: int = 256
    tangential: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def at(self, t: float):
        key = float(t)
        if key not in self._cache:
            state = solve_equilibrium(self.spec, self.N, key, self.grid)
            probe = time_probe(state, self.dt_probe)
            tables = []
            if self.tangential:
                for p in self.N * (np.arange(1, self.n_levels + 1) - 0.5) / self.n_levels:
                    for c in extract_level_curves(state, p, self.n_vertices):
                        src = source_at(probe, c.vertices)
                        sol = solve_tangential(c, src.f, coercivity=False)
                        tables.append((p, c, sol.v_par))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = (state, probe, tables)
        return self._cache[key]

    def v_par_at(self, x: np.ndarray, p: float, tables) -> float:
        if not tables:
            return 0.0
        ps = np.array(sorted({tp for tp, _, _ in tables}))
        k = int(np.searchsorted(ps, p))
        lo, hi = ps[max(k - 1, 0)], ps[min(k, len(ps) - 1)]

        def val(level):
            hits = [_closest_on_polyline(c, v, x) for tp, c, v in tables if tp == level]
            return min(hits, key=lambda h: h[1])[0]

        if hi == lo:
            return val(lo)
        s = (p - lo) / (hi - lo)
        return (1 - s) * val(lo) + s * val(hi)

    def __call__(self, x, t: float) -> np.ndarray:
        state, probe, tables = self.at(t)
        x = np.asarray(x, dtype=float)
        W = self.spec.W(x, t)
        if W > state.u_max:
            raise EscapeError(f"particle left the tabulated region at t={t:g}")
        w, nu = _normal_fields(probe, x[None])
        v = w[0] * nu[0]
        if self.tangential and tables:
            p = float(state.P(W))
            v = v + self.v_par_at(x, p, tables) * np.array([-nu[0, 1], nu[0, 0]])
        return v


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    pi: np.ndarray
    clamped: bool = False


def advect_particle(velocity: VelocityField, x0, t0: float, t1: float, dt: float,
                    escape_band: float = 1e-2) -> Trajectory:
    """Classical RK4 for dx/dt = v(x, t) from t0 to t1.

    Integration stops early (``clamped``) if the particle's level reaches N,
    and raises EscapeError if it leaves the medium by more than
    ``escape_band * N``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).copy()
    N = velocity.N
    state0 = velocity.at(t0)[0]
    if velocity.spec.W(x, t0) > state0.U_N:
        raise EscapeError("starting point lies outside the medium")
    steps = max(1, int(round((t1 - t0) / dt)))
    h = (t1 - t0) / steps
    ts, xs, pis = [t0], [x.copy()], [float(state0.P(velocity.spec.W(x, t0)))]
    clamped = False
    for i in range(steps):
        t = t0 + i * h
        try:
            k1 = velocity(x, t)
            k2 = velocity(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = velocity(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = velocity(x + h * k3, t + h)
        except (EscapeError, DegenerateNormalError) as exc:
            raise EscapeError(f"trajectory failed at t={t:g}: {exc}") from exc
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tn = t0 + (i + 1) * h
        st = velocity.at(tn)[0]
        W = velocity.spec.W(x, tn)
        if W > st.u_max:
            raise EscapeError(f"particle left the medium at t={tn:g}")
        p = float(st.P(W))
        if p > N * (1 + escape_band):
            raise EscapeError(f"particle level {p:.6g} exceeds N={N:g} at t={tn:g}")
        ts.append(tn)
        xs.append(x.copy())
        pis.append(p)
        if p > N:
            clamped = True
            log.warning("trajectory clamped at t=%g: level %.6g above N", tn, p)
            break
    return Trajectory(np.array(ts), np.array(xs), np.array(pis), clamped)


def pointwise_residual_grid(state: EquilibriumState, dt_probe: float = DT_PROBE, stride: int = 1,
                            exclude_radius: float | None = None, level_fraction: float = 1.0):
    """Source f under the pure normal velocity at grid nodes inside {pi <= level_fraction N}.

    Nodes within ``exclude_radius`` of the critical point are skipped.  Returns
    ``(points, f)``.
    """
    probe = time_probe(state, dt_probe)
    pts = state.nodes[::stride, ::stride].reshape(-1, 2)
    W = state.spec.W(pts, state.t)
    h = float(np.min(state.grid.spacing))
    r = 3 * h if exclude_radius is None else exclude_radius
    cp = np.asarray(state.spec.critical_point)
    if state.spec.periodic:
        dist = np.abs(pts[:, 1] - cp[1])
    else:
        dist = np.linalg.norm(pts - cp, axis=1)
    keep = dist > r
    if getattr(state.spec.volume, "singular_at_origin", False):
        keep &= np.linalg.norm(pts, axis=1) > r
    U = state.U_of_p(level_fraction * state.N) if level_fraction < 1 else state.U_N
    keep &= W <= U
    pts = pts[keep]
    return pts, source_at(probe, pts).f
