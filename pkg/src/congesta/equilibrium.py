"""Frozen-time packed equilibrium.

The filled-mass function ``P(u, t) = int_{W <= u} 1/tau dx`` is evaluated on
a sub-grid of the state grid.  Each sub-cell carries the integral of
``1/tau`` over itself (midpoint value, or adaptive bisection near integrable
singularities) and spreads it over the ``u`` axis with a smooth kernel built
from a local quadratic model of ``W``, so that P is smooth in ``u`` and its
derivative, the density of states, is free of grid ripple.  The mass
diagnostic uses the plain area fraction of a linear model of ``W`` instead.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import brentq

from .errors import (
    DomainTruncatedError,
    InsufficientCapacityError,
    OutOfTableError,
    DegenerateNormalError,
)
from .fields import FieldSpec

log = logging.getLogger(__name__)

ROUGH_VARIATION = 0.05
ROUGH_DEPTH = 14
TABLE_SIZE = 512
DOS_WINDOW = 1
TOL_U = 1e-6
TOL_MASS_REL = 1e-4


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid; ``cells`` per axis, quadrature sub-grid factor ``refine``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]
    refine: int = 2

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "cells", tuple(int(v) for v in self.cells))
        if not (len(self.lower) == len(self.upper) == len(self.cells)):
            raise ValueError("lower, upper and cells must have equal length")
        if any(u <= lo for lo, u in zip(self.lower, self.upper)):
            raise ValueError("empty grid box")
        if min(self.cells) < 2 or self.refine < 1:
            raise ValueError("grid needs at least 2 cells per axis and refine >= 1")

    @classmethod
    def square(cls, half_width: float, resolution: int = 256, dimension: int = 2, refine: int = 2):
        return cls((-half_width,) * dimension, (half_width,) * dimension, (resolution,) * dimension, refine)

    @property
    def dimension(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.cells)

    def node_axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, up, n + 1) for lo, up, n in zip(self.lower, self.upper, self.cells)]

    def node_points(self) -> np.ndarray:
        axes = np.meshgrid(*self.node_axes(), indexing="ij")
        return np.stack(axes, axis=-1)

    def subcell_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Sub-cell centres, flattened to ``(M, d)``, and the sub-cell spacing."""
        hs = self.spacing / self.refine
        axes = [lo + hs[i] * (np.arange(n * self.refine) + 0.5)
                for i, (lo, n) in enumerate(zip(self.lower, self.cells))]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dimension)
        return pts, hs

    def boundary_points(self, periodic: bool = False) -> np.ndarray:
        """Nodes on the faces of the box (only the x2 faces for a periodic x1)."""
        nodes = self.node_points()
        if self.dimension == 1:
            return nodes[[0, -1]]
        faces = [nodes[:, 0], nodes[:, -1]]
        if not periodic:
            faces += [nodes[0, :], nodes[-1, :]]
        return np.concatenate(faces)


TENT_SPLIT = 1e-3
_TENT_TERMS = [(k, m, ck * cm) for k, ck in ((0, 1), (1, -2), (2, 1)) for m, cm in ((0, 1), (1, -2), (2, 1))]
_LINE_TERMS = [(0, 1.0), (1, -2.0), (2, 1.0)]


def cell_masses(spec: FieldSpec, t: float, pts: np.ndarray, hs: np.ndarray) -> np.ndarray:
    """Integral of ``1/tau`` over each sub-cell.

    The midpoint value is used unless ``1/tau`` changes by more than
    ``ROUGH_VARIATION`` of itself across the cell (near an integrable
    singularity); such cells are bisected per axis until the variation is
    small or ``ROUGH_DEPTH`` levels are reached.
    """
    d = pts.shape[1]
    mass = spec.tau_inv(pts, t) * np.prod(hs)

    def rough(x, h, vals):
        g = spec.grad_tau_inv(x, t)
        return np.linalg.norm(g * h, axis=1) > ROUGH_VARIATION * vals

    sel = np.nonzero(rough(pts, hs, mass / np.prod(hs)))[0]
    if sel.size == 0:
        return mass
    corners = np.array(np.meshgrid(*[[-0.25, 0.25]] * d, indexing="ij")).reshape(d, -1).T
    owner, x, h = sel, pts[sel], np.asarray(hs, dtype=float)
    total = np.zeros(len(pts))
    for level in range(ROUGH_DEPTH):
        x = (x[:, None, :] + corners[None] * h).reshape(-1, d)
        owner = np.repeat(owner, len(corners))
        h = 0.5 * h
        vals = spec.tau_inv(x, t)
        split = rough(x, h, vals) if level < ROUGH_DEPTH - 1 else np.zeros(len(x), dtype=bool)
        np.add.at(total, owner[~split], vals[~split] * np.prod(h))
        x, owner = x[split], owner[split]
        if owner.size == 0:
            break
    mass[sel] = total[sel]
    return mass


def tent_cdf(c, a, b, order: int = 0) -> list[np.ndarray]:
    """CDF of ``a T1 + b T2`` at ``c`` and its first ``order`` derivatives in ``c``.

    T1, T2 are iid with the triangular density on [-1, 1], i.e. each is a sum
    of two uniforms on [-1/2, 1/2], so the CDF is that of a sum of four
    uniforms and is written by inclusion-exclusion.  A width below
    ``TENT_SPLIT`` times the other is treated as zero.
    """
    c, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (c, a, b)))
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    out = [np.zeros(c.shape) for _ in range(order + 1)]
    four = lo > TENT_SPLIT * hi
    two = ~four & (hi > 0)

    def fill(mask, fn):
        if np.all(mask):
            res = fn(c, hi, lo)
            for k in range(order + 1):
                out[k] = res[k]
        elif np.any(mask):
            res = fn(c[mask], hi[mask], lo[mask])
            for k in range(order + 1):
                out[k][mask] = res[k]

    def quartic(cc, A, B):
        s = cc + A + B
        acc = [np.zeros_like(s) for _ in range(order + 1)]
        for k, m, w in _TENT_TERMS:
            z = np.maximum(s - k * A - m * B, 0.0)
            z2 = z * z
            acc[0] += w * z2 * z2
            if order >= 1:
                acc[1] += 4 * w * z2 * z
            if order >= 2:
                acc[2] += 12 * w * z2
        den = 24.0 * A * A * B * B
        return [v / den for v in acc]

    def quadratic(cc, A, _):
        s = cc + A
        acc = [np.zeros_like(s) for _ in range(order + 1)]
        for k, w in _LINE_TERMS:
            z = np.maximum(s - k * A, 0.0)
            acc[0] += w * z * z
            if order >= 1:
                acc[1] += 2 * w * z
            if order >= 2:
                acc[2] += 2 * w * (z > 0)
        den = 2.0 * A * A
        return [v / den for v in acc]

    fill(four, quartic)
    fill(two, quadratic)
    # exact tails; the polynomial sums cancel only to rounding there
    above = (c >= np.where(four, hi + lo, hi)) & (hi > 0)
    if np.any(above):
        out[0][above] = 1.0
        for k in range(1, order + 1):
            out[k][above] = 0.0
    zero = hi == 0
    if np.any(zero):
        out[0][zero] = (c[zero] >= 0).astype(float)
    out[0] = np.clip(out[0], 0.0, 1.0)
    return out


class CellQuadrature:
    """Sub-grid data for evaluating ``P(u)`` at one time.

    Each sub-cell carries the mass ``h^d / tau`` at its centre, spread over a
    tent (linear B-spline) footprint of twice the sub-cell width; the tents
    form a partition of unity.  Inside a footprint ``W`` is modelled as

        W0 + c0 / 2 + L + kappa L^2 / 2,    L = grad W . dx,

    where ``kappa = g.Hg / |g|^4`` is the curvature of ``W`` along its
    gradient and ``c0`` the mean of the transverse second-order term.  The
    mass below a level is then the tent CDF of ``L`` at the inverted level.
    Keeping the curvature makes neighbouring footprints tile the ``u`` axis,
    so the density of states is free of the sub-grid ripple a purely linear
    model leaves when level sets run along grid lines.
    """

    def __init__(self, spec: FieldSpec, t: float, grid: Grid, curvature: bool = True):
        if grid.dimension != spec.dimension:
            raise ValueError("grid and field dimension differ")
        if spec.periodic and not np.allclose([grid.lower[0], grid.upper[0]], [-1.0, 1.0]):
            raise ValueError("torus-strip grids must span x1 in (-1, 1]")
        pts, hs = grid.subcell_points()
        self.spec, self.t, self.grid = spec, t, grid
        self.box_level = float(np.min(spec.W(grid.boundary_points(spec.periodic), t)))
        W = spec.W(pts, t)
        g = spec.grad_W(pts, t)
        A = np.abs(g[:, 0]) * hs[0]
        B = np.abs(g[:, 1]) * hs[1] if spec.dimension == 2 else np.zeros_like(A)
        mass = cell_masses(spec, t, pts, hs)
        kappa = np.zeros_like(W)
        shift = np.zeros_like(W)
        if curvature:
            kappa, shift = self._curvature(g, hs)
        self._set(W, A, B, mass, kappa, shift)

    def _curvature(self, g, hs):
        shape = tuple(n * self.grid.refine for n in self.grid.cells)
        d = len(shape)
        gg = g.reshape(shape + (d,))
        H = np.empty(shape + (d, d))
        for i in range(d):
            for j in range(d):
                H[..., i, j] = np.gradient(gg[..., i], hs[j], axis=j, edge_order=2)
        H = 0.5 * (H + np.swapaxes(H, -1, -2)).reshape(-1, d, d)
        g2 = np.sum(g * g, axis=1)
        gHg = np.einsum("ki,kij,kj->k", g, H, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            kappa = np.where(g2 > 0, gHg / (g2 * g2), 0.0)
            trans = np.where(g2 > 0, np.trace(H, axis1=1, axis2=2) - gHg / g2, 0.0)
        var = np.mean(hs**2) / 6.0
        shift = 0.5 * var * trans
        # fall back to the linear model where the quadratic one folds over
        reach = np.sum(np.abs(g) * hs, axis=1)
        bad = ~np.isfinite(kappa) | (np.abs(kappa) * reach > 0.5) | ~np.isfinite(shift)
        kappa[bad] = 0.0
        shift[bad] = 0.0
        return kappa, shift

    def _set(self, W, A, B, mass, kappa, shift):
        self.W, self.A, self.B, self.mass = W, A, B, mass
        self.kappa, self.shift = kappa, shift
        r = A + B
        self.centre = W + shift
        self.lo = self.centre - r + 0.5 * kappa * r * r
        self.hi = self.centre + r + 0.5 * kappa * r * r
        order = np.argsort(self.hi, kind="stable")
        self._hi_sorted = self.hi[order]
        self._cum = np.concatenate([[0.0], np.cumsum(mass[order])])

    def restrict(self, u_max: float) -> None:
        """Forget sub-cells that lie entirely above ``u_max``."""
        keep = self.lo < u_max
        self._set(*(v[keep] for v in (self.W, self.A, self.B, self.mass, self.kappa, self.shift)))

    def evaluate(self, us, order: int = 0) -> list[np.ndarray]:
        """P and (if ``order`` is 1) dP/du at each level in ``us`` (any order)."""
        us = np.atleast_1d(np.asarray(us, dtype=float))
        if np.any(us > self.box_level):
            raise DomainTruncatedError(
                f"sublevel set W <= {us.max():.6g} leaves the grid box (box level {self.box_level:.6g})")
        perm = np.argsort(us, kind="stable")
        u = us[perm]
        out = [self._cum[np.searchsorted(self._hi_sorted, u, side="right")]]
        out += [np.zeros(u.size) for _ in range(order)]
        j0 = np.searchsorted(u, self.lo, side="right")
        j1 = np.searchsorted(u, self.hi, side="left")
        cnt = np.maximum(j1 - j0, 0)
        cells = np.nonzero(cnt)[0]
        if cells.size:
            c = cnt[cells]
            rep = np.repeat(cells, c)
            start = np.repeat(np.cumsum(c) - c, c)
            js = np.repeat(j0[cells], c) + (np.arange(rep.size) - start)
            m = self.mass[rep]
            kap = self.kappa[rep]
            v = u[js] - self.centre[rep]
            root = np.sqrt(np.maximum(1.0 + 2.0 * kap * v, 0.0))
            ell = 2.0 * v / (1.0 + root)
            parts = tent_cdf(ell, self.A[rep], self.B[rep], order)
            out[0] = out[0] + np.bincount(js, weights=parts[0] * m, minlength=u.size)
            if order >= 1:
                dens = parts[1] / np.maximum(1.0 + kap * ell, 1e-12)
                out[1] = out[1] + np.bincount(js, weights=dens * m, minlength=u.size)
        out[0] = np.where(u <= 0, 0.0, out[0])
        res = []
        for v in out:
            r = np.empty_like(v)
            r[perm] = v
            res.append(r)
        return res

    def P(self, us) -> np.ndarray:
        return self.evaluate(us)[0]

    def _box_fraction(self, U: float) -> np.ndarray:
        """Area fraction of each sub-cell below ``U`` for the linear model of W (no tent)."""
        a = np.maximum(self.A, self.B)
        b = np.minimum(self.A, self.B)
        z = U - self.W + 0.5 * (a + b)
        with np.errstate(divide="ignore", invalid="ignore"):
            ramp = np.where(a > 0, (z - 0.5 * b) / a, (z >= 0.5 * b).astype(float))
            lo = np.where(b > 0, z * z / (2 * a * b), ramp)
            hi = np.where(b > 0, 1.0 - (a + b - z) ** 2 / (2 * a * b), ramp)
        frac = np.where(z < b, lo, np.where(z > a, hi, ramp))
        frac = np.where(z <= 0, 0.0, np.where(z >= a + b, 1.0, frac))
        return np.clip(frac, 0.0, 1.0)

    def midpoint_mass(self, U: float) -> float:
        """Mass of ``{W <= U}``: cell masses times the linear area fraction below ``U``."""
        return float(np.sum(self.mass * self._box_fraction(U)))

    def midpoint_energy(self, U: float) -> float:
        return float(np.sum(self.W * self.mass * self._box_fraction(U)))


def compute_P(spec: FieldSpec, u: float, t: float, grid: Grid) -> float:
    """Filled mass ``P(u, t)``; raises DomainTruncatedError if ``{W <= u}`` leaves the box."""
    if u < 0:
        raise ValueError("u must be non-negative")
    return float(CellQuadrature(spec, t, grid).P([u])[0])


def _bracket(q: CellQuadrature, N: float) -> float:
    ladder = 2.0 ** np.arange(-30, 31)
    ladder = ladder[ladder < q.box_level]
    if ladder.size == 0:
        raise DomainTruncatedError("grid box too small to hold any sublevel set")
    Ps = q.P(ladder)
    above = np.nonzero(Ps > N)[0]
    if above.size == 0:
        if q.P([q.box_level])[0] > N:
            return q.box_level
        raise DomainTruncatedError(
            f"mass {N} does not fit in the grid box at t={q.t}; enlarge the box")
    return float(ladder[above[0]])


def _fermi(nodes, Pn, interp, q: CellQuadrature, N, tol_u, tol_mass) -> float:
    k = int(np.searchsorted(Pn, N, side="left"))
    if k == 0:
        return 0.0
    if k >= len(nodes):
        raise InsufficientCapacityError(f"N={N} exceeds P(u_max)={Pn[-1]:.6g}")
    U = brentq(lambda u: float(interp(u)) - N, nodes[k - 1], nodes[k], xtol=1e-15, rtol=1e-15)
    # Newton refinement against the quadrature itself
    for _ in range(8):
        P, dP = q.evaluate([U], order=1)
        step = (P[0] - N) / max(dP[0], 1e-300)
        U = min(max(U - step, nodes[k - 1]), nodes[k])
        if abs(P[0] - N) <= 1e-3 * tol_mass or abs(step) < 1e-3 * tol_u:
            break
    return U


def windowed_slope(u: np.ndarray, P: np.ndarray, k: int | None = None) -> np.ndarray:
    """Secant slope of P between nodes i-k and i+k (clamped at the ends)."""
    k = DOS_WINDOW if k is None else k
    i = np.arange(len(u))
    lo = np.clip(i - k, 0, len(u) - 1)
    hi = np.clip(i + k, 0, len(u) - 1)
    return (P[hi] - P[lo]) / (u[hi] - u[lo])


def solve_fermi_level(spec: FieldSpec, N: float, t: float, grid: Grid,
                      tol_u: float = TOL_U, tol_mass: float | None = None) -> float:
    return solve_equilibrium(spec, N, t, grid, tol_u=tol_u, tol_mass=tol_mass).U_N


@dataclass(eq=False)
class EquilibriumState:
    """Solved frozen-time problem; treat as immutable.

    The quadrature is sampled at nodes ``u_max * s**2`` with ``s`` uniform,
    which cluster where the density of states varies fastest.  ``dP/du`` at a
    node is the centred secant slope of P over the neighbouring nodes.  P is
    a cubic Hermite interpolant through the node values and those slopes,
    dP/du a cubic spline through the slopes (its derivative enters the
    tangential source, so it must be smooth).
    ``u_table`` / ``P_table`` / ``dPdu_table`` are the uniform report table
    sampled from the same interpolants.
    """

    spec: FieldSpec
    N: float
    t: float
    grid: Grid
    U_N: float
    nodes_u: np.ndarray
    nodes_P: np.ndarray
    nodes_dP: np.ndarray
    mass: float
    energy: float
    box_level: float
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._P = CubicHermiteSpline(self.nodes_u, self.nodes_P, self.nodes_dP, extrapolate=False)
        self._dP = CubicSpline(self.nodes_u, self.nodes_dP, extrapolate=False)
        self.u_table = np.linspace(0.0, self.u_max, TABLE_SIZE)
        self.P_table = self._P(self.u_table)
        self.P_table[0] = 0.0
        self.dPdu_table = self._dP(self.u_table)

    @property
    def u_max(self) -> float:
        return float(self.nodes_u[-1])

    @property
    def P_max(self) -> float:
        return float(self.nodes_P[-1])

    def _check_u(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u > self.u_max * (1 + 1e-12)) or np.any(u < 0):
            raise OutOfTableError(f"level outside tabulated range [0, {self.u_max:.6g}]")
        return np.clip(u, 0.0, self.u_max)

    def P(self, u):
        return self._P(self._check_u(u))

    def dPdu(self, u):
        return self._dP(self._check_u(u))

    def U_of_p(self, p: float) -> float:
        """Inverse of P: the W level carrying mass ``p``."""
        if not 0 <= p <= self.P_max:
            raise OutOfTableError(f"p={p} outside [0, {self.P_max:.6g}]")
        k = int(np.searchsorted(self.nodes_P, p, side="left"))
        if k == 0:
            return 0.0
        if self.nodes_P[k] == p:
            return float(self.nodes_u[k])
        return brentq(lambda u: float(self._P(u)) - p, self.nodes_u[k - 1], self.nodes_u[k],
                      xtol=1e-16, rtol=1e-15)

    def pi(self, x):
        return self.P(self.spec.W(x, self.t))

    def grad_pi(self, x):
        W = self.spec.W(x, self.t)
        return self.dPdu(W)[..., None] * self.spec.grad_W(x, self.t)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inside = self.spec.W(x, self.t) <= self.U_N
        return np.where(inside, self.spec.tau_inv(x, self.t, checked=False), 0.0)

    @property
    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.P_table) > 0))

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.grid.node_points()

    @cached_property
    def W_nodes(self) -> np.ndarray:
        return self.spec.W(self.nodes, self.t)

    @cached_property
    def pi_nodes(self) -> np.ndarray:
        """P(W) at grid nodes; NaN beyond the tabulated range."""
        W = self.W_nodes
        out = np.full(W.shape, np.nan)
        ok = W <= self.u_max
        out[ok] = self._P(np.clip(W[ok], 0.0, self.u_max))
        return out

    @cached_property
    def tau_inv_nodes(self) -> np.ndarray:
        return self.spec.tau_inv(self.nodes, self.t, checked=False)


def solve_equilibrium(spec: FieldSpec, N: float, t: float, grid: Grid, u_max: float | None = None,
                      tol_u: float = TOL_U, tol_mass: float | None = None) -> EquilibriumState:
    """Tabulate P, find the Fermi level U_N and package the equilibrium at time ``t``.

    Results are memoised on all arguments, so repeated probes are cheap.
    """
    return _solve(spec, float(N), float(t), grid, None if u_max is None else float(u_max),
                  float(tol_u), None if tol_mass is None else float(tol_mass))


def clear_cache() -> None:
    """Forget memoised equilibria (for timing and independent reruns)."""
    _solve.cache_clear()


@lru_cache(maxsize=96)
def _solve(spec, N, t, grid, u_max, tol_u, tol_mass) -> EquilibriumState:
    if N <= 0:
        raise ValueError("N must be positive")
    tol_mass = TOL_MASS_REL * N if tol_mass is None else tol_mass
    q = CellQuadrature(spec, t, grid)
    warnings = []
    if u_max is None:
        u_max = 1.5 * _bracket(q, N)
        if u_max > q.box_level:
            warnings.append(f"u_max clamped from {u_max:.6g} to box level {q.box_level:.6g}")
            u_max = q.box_level
    elif u_max > q.box_level:
        raise DomainTruncatedError(f"u_max={u_max:.6g} exceeds box level {q.box_level:.6g}")
    q.restrict(u_max)
    us = u_max * np.linspace(0.0, 1.0, TABLE_SIZE) ** 2
    Ps = q.P(us)
    dP = windowed_slope(us, Ps)
    if Ps[-1] <= N:
        raise InsufficientCapacityError(f"N={N} exceeds P(u_max)={Ps[-1]:.6g} at t={t}")
    if np.any(dP[1:] <= 0) or not np.all(np.diff(Ps) > 0):
        raise DegenerateNormalError("density of states vanishes inside the table")
    interp = CubicHermiteSpline(us, Ps, dP, extrapolate=False)
    U = _fermi(us, Ps, interp, q, N, tol_u, tol_mass)
    state = EquilibriumState(
        spec=spec, N=N, t=t, grid=grid, U_N=U, nodes_u=us, nodes_P=Ps, nodes_dP=dP,
        mass=q.midpoint_mass(U), energy=q.midpoint_energy(U), box_level=q.box_level,
        warnings=warnings,
    )
    if not state.strictly_increasing:
        state.warnings.append("P table is not strictly increasing")
    for w in state.warnings:
        log.warning("t=%g: %s", t, w)
    return state


def equilibrium_density(state: EquilibriumState, x):
    """Packing density 1/tau on the closed sublevel set {W <= U_N}, zero outside."""
    out = state.density(x)
    return float(out) if np.ndim(out) == 0 or np.size(out) == 1 else out


def compute_pi(state: EquilibriumState, x):
    out = state.pi(x)
    return float(np.reshape(out, -1)[0]) if np.size(out) == 1 else out


def density_of_states(state: EquilibriumState, u_samples) -> list[tuple[float, float]]:
    u = np.asarray(u_samples, dtype=float)
    return [(float(a), float(b)) for a, b in zip(u, state.dPdu(u))]


def enclosed_mass(state: EquilibriumState, p: float) -> float:
    """Quadrature mass of {pi <= p}, computed independently of the P table."""
    q = CellQuadrature(state.spec, state.t, state.grid)
    return float(q.P([state.U_of_p(p)])[0])
