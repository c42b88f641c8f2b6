"""Explicit one-dimensional pipeline.

In one dimension the medium is an interval [a(t), b(t)] around the minimum
of W, fixed by ``W(a) = W(b)`` and ``int_a^b n = N`` with ``n = 1/tau``.
Differentiating both conditions in time gives the endpoint speeds in closed
form, and the continuity equation integrated from ``a`` gives the velocity:

    v(x) = (n(a) a' - int_a^x d_t n dy) / n(x).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DegenerateEndpointError, InsufficientCapacityError, OutOfDomainError
from .fields import FieldSpec

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-11
ROOT_XTOL = 1e-15
MAX_REACH = 1e6


@dataclass(frozen=True)
class Interval1D:
    a: float
    b: float
    t: float
    N: float
    U: float


def _check(spec: FieldSpec):
    if spec.dimension != 1:
        raise ValueError("the one-dimensional pipeline needs a 1-D field")


def _f(fn, x, t) -> float:
    return float(np.reshape(fn(np.array([float(x)]), t), -1)[0])


def _n(spec, x, t):
    return _f(spec.tau_inv, x, t)


def _dn_dt(spec, x, t):
    return _f(spec.dtau_inv_dt, x, t)


_GAUSS = {n: np.polynomial.legendre.leggauss(n) for n in (24, 48)}


def _integrate(fn, lo, hi) -> float:
    """Integral of a vectorised ``fn`` over [lo, hi].

    Two Gauss-Legendre rules are compared; adaptive quadrature takes over
    when they disagree, which only happens for non-smooth integrands.
    """
    if hi == lo:
        return 0.0
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    coarse, fine = (half * float(np.dot(w, fn(mid + half * x))) for x, w in _GAUSS.values())
    if abs(fine - coarse) <= max(QUAD_EPSABS, QUAD_EPSREL * abs(fine)):
        return fine
    val, _ = quad(lambda y: float(fn(np.array([y]))[0]), lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                  limit=200)
    return float(val)


def _n_vec(spec, t):
    return lambda y: spec.tau_inv(y[:, None], t)


def _dn_dt_vec(spec, t):
    return lambda y: spec.dtau_inv_dt(y[:, None], t)


def _root_on_side(spec: FieldSpec, u: float, t: float, side: int) -> float:
    """Point x on the given side of the minimum with W(x) = u."""
    c = spec.critical_point[0]
    if u <= _f(spec.W, c, t):
        return c
    g = lambda x: _f(spec.W, x, t) - u  # noqa: E731
    step = 1.0
    prev = c
    while step <= MAX_REACH:
        x = c + side * step
        if g(x) >= 0:
            lo, hi = sorted((prev, x))
            return brentq(g, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)
        if _f(spec.W, x, t) <= _f(spec.W, prev, t) and prev != c:
            break
        prev = x
        step *= 2.0
    raise InsufficientCapacityError(f"W does not reach level {u:.6g} on the {'left' if side < 0 else 'right'}")


def _mass(spec, u, t) -> float:
    a = _root_on_side(spec, u, t, -1)
    b = _root_on_side(spec, u, t, +1)
    return _integrate(_n_vec(spec, t), a, b)


def solve_domain_1d(spec: FieldSpec, N: float, t: float) -> Interval1D:
    """Endpoints with equal W and enclosed mass N (outer root on the level u)."""
    _check(spec)
    if N <= 0:
        raise ValueError("N must be positive")
    hi = 1.0
    while _mass(spec, hi, t) < N:
        hi *= 2.0
        if hi > MAX_REACH:
            raise InsufficientCapacityError(f"mass {N} exceeds the capacity of the field")
    U = brentq(lambda u: _mass(spec, u, t) - N, 0.0, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)
    return Interval1D(_root_on_side(spec, U, t, -1), _root_on_side(spec, U, t, +1), float(t), float(N), float(U))


def endpoint_speed_1d(spec: FieldSpec, N: float, t: float, interval: Interval1D | None = None) -> tuple[float, float]:
    """(a'(t), b'(t)) from the time derivatives of the two endpoint conditions."""
    iv = solve_domain_1d(spec, N, t) if interval is None else interval
    a, b = iv.a, iv.b
    na, nb = _n(spec, a, t), _n(spec, b, t)
    wxa, wxb = (_f(lambda x, s: spec.grad_W(x, s)[..., 0], y, t) for y in (a, b))
    wta, wtb = _f(spec.dW_dt, a, t), _f(spec.dW_dt, b, t)
    I = _integrate(_dn_dt_vec(spec, t), a, b)
    den = nb * wxa - na * wxb
    if not np.isfinite(den) or abs(den) < 1e-14 * (abs(nb * wxa) + abs(na * wxb) + 1e-300):
        raise DegenerateEndpointError("endpoint system is singular")
    a_dot = (nb * (wtb - wta) - wxb * I) / den
    b_dot = (na * (wta - wtb) + wxa * I) / (na * wxb - nb * wxa)
    return float(a_dot), float(b_dot)


def velocity_1d(spec: FieldSpec, N: float, x: float, t: float, interval: Interval1D | None = None,
                speeds: tuple[float, float] | None = None) -> float:
    """Velocity at x inside [a(t), b(t)]."""
    iv = solve_domain_1d(spec, N, t) if interval is None else interval
    span = iv.b - iv.a
    if x < iv.a - 1e-12 * span or x > iv.b + 1e-12 * span:
        raise OutOfDomainError(f"x={x} outside [{iv.a}, {iv.b}]")
    a_dot, _ = endpoint_speed_1d(spec, N, t, iv) if speeds is None else speeds
    flux = _n(spec, iv.a, t) * a_dot - _integrate(_dn_dt_vec(spec, t), iv.a, x)
    return float(flux / _n(spec, x, t))


def mass_identity_residual(spec: FieldSpec, N: float, t: float) -> float:
    """b' n(b) - a' n(a) + int_a^b d_t n, which vanishes for the exact speeds."""
    iv = solve_domain_1d(spec, N, t)
    a_dot, b_dot = endpoint_speed_1d(spec, N, t, iv)
    I = _integrate(_dn_dt_vec(spec, t), iv.a, iv.b)
    return float(b_dot * _n(spec, iv.b, t) - a_dot * _n(spec, iv.a, t) + I)


def continuity_residual_1d(spec: FieldSpec, N: float, t: float, xs, h: float = 1e-4) -> np.ndarray:
    """d_t n + d_x(n v) at interior points; n v is differenced with a fourth-order stencil."""
    iv = solve_domain_1d(spec, N, t)
    speeds = endpoint_speed_1d(spec, N, t, iv)

    def flux(y):
        return _n(spec, y, t) * velocity_1d(spec, N, y, t, iv, speeds)

    out = []
    for x in np.atleast_1d(xs):
        d = (-flux(x + 2 * h) + 8 * flux(x + h) - 8 * flux(x - h) + flux(x - 2 * h)) / (12 * h)
        out.append(_dn_dt(spec, x, t) + d)
    return np.array(out)


def oned_table(spec: FieldSpec, N: float, times, fractions=(0.0, 0.25, 0.5, 0.75, 1.0)) -> tuple[list[str], np.ndarray]:
    """Rows of t, a, b, a', b' and v at fixed fractions of [a, b]."""
    header = ["t", "a", "b", "a_prime", "b_prime"] + [f"v_{f:g}" for f in fractions]
    rows = []
    for t in times:
        iv = solve_domain_1d(spec, N, t)
        sp = endpoint_speed_1d(spec, N, t, iv)
        vs = [velocity_1d(spec, N, iv.a + f * (iv.b - iv.a), t, iv, sp) for f in fractions]
        rows.append([t, iv.a, iv.b, sp[0], sp[1], *vs])
    return header, np.array(rows, dtype=float)
