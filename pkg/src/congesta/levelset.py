"""Level curves of the particle-count coordinate pi = P(W).

Curves are traced with marching squares on the nodal pi grid, then each
vertex is moved onto the exact level ``W = U_p`` by a few Newton steps along
grad W.  Weighted line integrals use the weight ``ds / |grad pi|``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from skimage import measure

from .equilibrium import EquilibriumState
from .errors import DegenerateNormalError, DomainTruncatedError, NoCurveError, ResolutionError

MIN_VERTICES = 16
GRAD_FLOOR = 1e-12


@dataclass(eq=False)
class LevelCurve:
    """Closed (or x1-periodic) polyline on {pi = p}.

    ``period`` is the translation taking the vertex after the last one back
    to the first; it is zero for closed loops.
    """

    p: float
    t: float
    U: float
    vertices: np.ndarray
    tau_inv: np.ndarray
    grad_pi_norm: np.ndarray
    normal: np.ndarray
    period: np.ndarray

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def tangent(self) -> np.ndarray:
        return np.stack([-self.normal[:, 1], self.normal[:, 0]], axis=1)

    @cached_property
    def segments(self) -> np.ndarray:
        nxt = np.roll(self.vertices, -1, axis=0)
        nxt[-1] = nxt[-1] + self.period
        return nxt - self.vertices

    @cached_property
    def chords(self) -> np.ndarray:
        return np.linalg.norm(self.segments, axis=1)

    @cached_property
    def vertex_curvature(self) -> np.ndarray:
        """Curvature of the circle through each vertex and its two neighbours."""
        a = np.roll(self.segments, 1, axis=0)
        b = self.segments
        cross = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        la, lb = np.roll(self.chords, 1), self.chords
        return 2.0 * cross / (la * lb * np.linalg.norm(a + b, axis=1))

    @cached_property
    def seg_lengths(self) -> np.ndarray:
        """Arc length from vertex k to vertex k+1.

        The chord is lengthened by the circular-arc factor 1 + (kappa c)^2 / 24,
        which lifts the polygon error from O(c^2) to O(c^4).
        """
        k = 0.5 * (self.vertex_curvature + np.roll(self.vertex_curvature, -1))
        c = self.chords
        return c * (1.0 + (k * c) ** 2 / 24.0)

    @cached_property
    def arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.seg_lengths[:-1])])

    @property
    def length(self) -> float:
        return float(self.seg_lengths.sum())

    @cached_property
    def dual_lengths(self) -> np.ndarray:
        """Half the lengths of the two segments meeting at each vertex."""
        return 0.5 * (self.seg_lengths + np.roll(self.seg_lengths, 1))

    @cached_property
    def weights(self) -> np.ndarray:
        """Lumped quadrature weights for the measure ds / |grad pi|."""
        return self.dual_lengths / self.grad_pi_norm


def weighted_level_integral(curve: LevelCurve, integrand) -> float:
    """Trapezoidal approximation of the integral of ``integrand / |grad pi|`` ds."""
    g = np.asarray(integrand, dtype=float)
    return float(np.sum(g * curve.weights))


def unit_normal(state: EquilibriumState, x) -> np.ndarray:
    """grad pi / |grad pi|; raises at (near-)critical points.

    Since dP/du > 0 the direction is that of grad W, which also serves
    points beyond the tabulated range; there only |grad W| is checked.
    """
    x = np.asarray(x, dtype=float)
    g = state.spec.grad_W(x, state.t)
    nrm = np.linalg.norm(g, axis=-1, keepdims=True)
    W = state.spec.W(x, state.t)
    inside = W <= state.u_max
    scale = np.ones_like(W)
    if np.any(inside):
        scale[inside] = state.dPdu(W[inside])
    if np.any(nrm[..., 0] * scale < GRAD_FLOOR):
        raise DegenerateNormalError("|grad pi| vanishes; normal undefined")
    return g / nrm


def _snap(state: EquilibriumState, x: np.ndarray, U: float, steps: int = 6) -> np.ndarray:
    spec, t = state.spec, state.t
    for _ in range(steps):
        r = spec.W(x, t) - U
        g = spec.grad_W(x, t)
        g2 = np.sum(g * g, axis=-1)
        if np.any(g2 < GRAD_FLOOR**2):
            raise DegenerateNormalError("grad W vanishes on the traced level curve")
        x = x - (r / g2)[:, None] * g
        if np.max(np.abs(r)) < 1e-15 * max(1.0, abs(U)):
            break
    return x


def _resample(x: np.ndarray, period: np.ndarray, n: int) -> np.ndarray:
    closed = np.vstack([x, x[:1] + period])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, s[-1], n, endpoint=False)
    return np.stack([np.interp(target, s, closed[:, i]) for i in range(2)], axis=1)


def _to_physical(state: EquilibriumState, c: np.ndarray) -> np.ndarray:
    g = state.grid
    return np.asarray(g.lower) + c * g.spacing


def _glue_periodic(pieces: list[np.ndarray], tol: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Join open contours that leave through x1 = 1 and re-enter at x1 = -1."""
    shift = np.array([2.0, 0.0])
    left = [p if p[0, 0] <= p[-1, 0] else p[::-1] for p in pieces]
    used = [False] * len(left)
    out = []
    for i, piece in enumerate(left):
        if used[i]:
            continue
        used[i] = True
        chain = [piece]
        for _ in range(len(left)):
            end = chain[-1][-1]
            if np.isclose(chain[0][0, 0] + 2.0, end[0], atol=tol) and \
                    np.allclose(chain[0][0] + shift, end, atol=tol):
                break
            nxt = None
            for j, other in enumerate(left):
                if not used[j] and np.allclose(other[0] + shift, end, atol=tol):
                    nxt = j
                    break
            if nxt is None:
                raise DomainTruncatedError("open level curve that is not x1-periodic")
            used[nxt] = True
            chain.append(left[nxt] + shift)
        pts = np.vstack([c[:-1] for c in chain])
        if not np.allclose(chain[0][0] + shift, chain[-1][-1], atol=tol):
            raise DomainTruncatedError("level curve does not close across the periodic edge")
        out.append((pts, shift.copy()))
    return out


def extract_level_curves(state: EquilibriumState, p: float, n_vertices: int | None = None) -> list[LevelCurve]:
    """All components of {pi = p} at the state's time, oriented along (-nu2, nu1)."""
    if state.spec.dimension != 2:
        raise ValueError("level curves are defined for dimension 2")
    if not 0 < p < state.P_max:
        raise NoCurveError(f"p={p} outside (0, {state.P_max:.6g})")
    U = state.U_of_p(p)
    pi = np.nan_to_num(state.pi_nodes, nan=state.P_max)
    raw = measure.find_contours(pi, p)
    if not raw:
        raise NoCurveError(f"no contour at p={p}")
    h = float(np.min(state.grid.spacing))
    lower = np.asarray(state.grid.lower)
    upper = np.asarray(state.grid.upper)
    comps: list[tuple[np.ndarray, np.ndarray]] = []
    open_pieces = []
    for c in raw:
        x = _to_physical(state, c)
        closed = np.allclose(c[0], c[-1])
        near_x2 = np.any(x[:, 1] <= lower[1] + 0.5 * h) or np.any(x[:, 1] >= upper[1] - 0.5 * h)
        near_x1 = np.any(x[:, 0] <= lower[0] + 0.5 * h) or np.any(x[:, 0] >= upper[0] - 0.5 * h)
        if near_x2 or (near_x1 and not state.spec.periodic):
            raise DomainTruncatedError(f"level curve p={p} reaches the grid boundary")
        if closed:
            comps.append((x[:-1], np.zeros(2)))
        else:
            open_pieces.append(x)
    if open_pieces:
        if not state.spec.periodic:
            raise DomainTruncatedError(f"open level curve at p={p}")
        comps.extend(_glue_periodic(open_pieces, tol=1e-9 * max(1.0, h)))

    curves = []
    for x, period in comps:
        # drop repeated vertices produced when a contour passes through a node
        keep = np.ones(len(x), dtype=bool)
        keep[1:] = np.any(np.abs(np.diff(x, axis=0)) > 1e-14, axis=1)
        x = x[keep]
        if len(x) < MIN_VERTICES:
            raise ResolutionError(f"level curve p={p} has only {len(x)} vertices; refine the grid")
        x = _snap(state, x, U)
        if n_vertices is not None:
            x = _snap(state, _resample(x, period, int(n_vertices)), U)
        curves.append(_decorate(state, p, U, x, period))
    curves.sort(key=lambda c: (-float(np.mean(c.vertices[:, 1])), float(np.mean(c.vertices[:, 0]))))
    return curves


def _decorate(state: EquilibriumState, p: float, U: float, x: np.ndarray, period: np.ndarray) -> LevelCurve:
    spec, t = state.spec, state.t
    gW = spec.grad_W(x, t)
    gn = np.linalg.norm(gW, axis=1)
    if np.any(gn < GRAD_FLOOR):
        raise DegenerateNormalError("grad W vanishes on the level curve")
    nu = gW / gn[:, None]
    tan = np.stack([-nu[:, 1], nu[:, 0]], axis=1)
    seg = np.roll(x, -1, axis=0) - x
    seg[-1] += period
    if np.sum(seg * tan) < 0:
        x = x[::-1].copy()
        if np.any(period):
            period = -period
        gW, gn, nu = gW[::-1], gn[::-1], nu[::-1]
    Wv = np.clip(spec.W(x, t), 0.0, state.u_max)
    gpi = state.dPdu(Wv) * gn
    if np.any(gpi < GRAD_FLOOR):
        raise DegenerateNormalError("|grad pi| vanishes on the level curve")
    return LevelCurve(p=float(p), t=float(t), U=float(U), vertices=x, tau_inv=spec.tau_inv(x, t),
                      grad_pi_norm=gpi, normal=nu, period=np.asarray(period, dtype=float))


def extract_level_curve(state: EquilibriumState, p: float, n_vertices: int | None = None) -> LevelCurve:
    """The unique component of {pi = p}; use extract_level_curves when there are several."""
    curves = extract_level_curves(state, p, n_vertices)
    if len(curves) != 1:
        raise NoCurveError(f"{{pi = {p}}} has {len(curves)} components")
    return curves[0]


def is_simple(curve: LevelCurve) -> bool:
    """True when no two non-adjacent segments intersect."""
    a = curve.vertices
    b = a + curve.segments
    n = len(a)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                       - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    o1 = orient(a[i], b[i], a[j])
    o2 = orient(a[i], b[i], b[j])
    o3 = orient(a[j], b[j], a[i])
    o4 = orient(a[j], b[j], b[i])
    return not bool(np.any((o1 * o2 < 0) & (o3 * o4 < 0)))
