"""Closed-form model inputs: confining potential V, volume field tau, effective potential W.

All evaluators are vectorised over points: ``x`` has shape ``(..., d)`` and
scalar results have shape ``x.shape[:-1]``.  Gradients keep the trailing axis.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidFieldError, SingularVolumeError

FULL_PLANE = "full-plane"
TORUS_STRIP = "torus-strip"
TOPOLOGIES = (FULL_PLANE, TORUS_STRIP)


def _sq(x):
    return np.sum(x * x, axis=-1)


def _norm(x):
    return np.sqrt(_sq(x))


# ---------------------------------------------------------------- potentials


@dataclass(frozen=True)
class Harmonic:
    """V = |x|^2 / 2."""

    ident = "harmonic"

    def value(self, x, t, tau):
        return 0.5 * _sq(x)

    def grad_x(self, x, t, tau):
        return np.array(x, dtype=float, copy=True)

    def d_tau(self, x, t, tau):
        return np.zeros(x.shape[:-1])

    def d_t(self, x, t, tau):
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class AnisoQuadratic:
    """V = (a x1^2 + b x2^2) / 2; in one dimension only ``a`` is used."""

    a: float = 1.0
    b: float = 1.0

    @property
    def ident(self):
        return f"aniso_quadratic({self.a!r}, {self.b!r})"

    def _coef(self, d):
        return np.array([self.a, self.b][:d], dtype=float)

    def value(self, x, t, tau):
        return 0.5 * np.sum(self._coef(x.shape[-1]) * x * x, axis=-1)

    def grad_x(self, x, t, tau):
        return self._coef(x.shape[-1]) * x

    def d_tau(self, x, t, tau):
        return np.zeros(x.shape[:-1])

    def d_t(self, x, t, tau):
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class SeparableX2:
    """V = x2^2 / 2, independent of x1 (the strip counter-example)."""

    ident = "separable_x2"

    def value(self, x, t, tau):
        return 0.5 * x[..., -1] ** 2

    def grad_x(self, x, t, tau):
        g = np.zeros_like(x, dtype=float)
        g[..., -1] = x[..., -1]
        return g

    def d_tau(self, x, t, tau):
        return np.zeros(x.shape[:-1])

    def d_t(self, x, t, tau):
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class Polynomial:
    """V = sum_k c_k x^k, applied to every axis and summed: V = p(x1) + p(x2)."""

    coeffs: tuple[float, ...] = (0.0, 0.0, 0.5)

    @property
    def ident(self):
        return "polynomial(" + ", ".join(repr(c) for c in self.coeffs) + ")"

    def value(self, x, t, tau):
        c = np.asarray(self.coeffs[::-1], dtype=float)
        return np.sum(np.polyval(c, x), axis=-1)

    def grad_x(self, x, t, tau):
        c = np.polyder(np.asarray(self.coeffs[::-1], dtype=float))
        return np.polyval(c, x) if c.size else np.zeros_like(x, dtype=float)

    def d_tau(self, x, t, tau):
        return np.zeros(x.shape[:-1])

    def d_t(self, x, t, tau):
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class Stiffening:
    """V = (1 + k tau) |x|^2 / 2: swelling particles feel a stiffer confinement."""

    k: float = 1.0

    @property
    def ident(self):
        return f"stiffening({self.k!r})"

    def value(self, x, t, tau):
        return 0.5 * (1.0 + self.k * tau) * _sq(x)

    def grad_x(self, x, t, tau):
        return (1.0 + self.k * tau)[..., None] * x

    def d_tau(self, x, t, tau):
        return 0.5 * self.k * _sq(x)

    def d_t(self, x, t, tau):
        return np.zeros(x.shape[:-1])


# ------------------------------------------------------------------- volumes


@dataclass(frozen=True)
class ConstantVolume:
    tau0: float = 1.0

    @property
    def ident(self):
        return f"constant({self.tau0!r})"

    def value(self, x, t):
        return np.full(x.shape[:-1], float(self.tau0))

    def grad(self, x, t):
        return np.zeros_like(x, dtype=float)

    def d_t(self, x, t):
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class LinearTime:
    """tau = tau0 (1 + t), uniform in space."""

    tau0: float = 1.0

    @property
    def ident(self):
        return f"linear_time({self.tau0!r})"

    def value(self, x, t):
        return np.full(x.shape[:-1], self.tau0 * (1.0 + t))

    def grad(self, x, t):
        return np.zeros_like(x, dtype=float)

    def d_t(self, x, t):
        return np.full(x.shape[:-1], float(self.tau0))


@dataclass(frozen=True)
class RadialTime:
    """tau = |x| t; vanishes at the origin."""

    ident = "radial_time"
    singular_at_origin = True

    def value(self, x, t):
        return _norm(x) * t

    def grad(self, x, t):
        r = _norm(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = t * x / r[..., None]
        return np.where(r[..., None] > 0, g, 0.0)

    def d_t(self, x, t):
        return _norm(x)


@dataclass(frozen=True)
class Angular:
    """tau = tau0 (1 + eps x1/|x|); static, direction dependent."""

    tau0: float = 1.0
    eps: float = 0.2
    singular_at_origin = True

    @property
    def ident(self):
        return f"angular({self.tau0!r}, {self.eps!r})"

    def value(self, x, t):
        r = _norm(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(r > 0, x[..., 0] / r, 0.0)
        return self.tau0 * (1.0 + self.eps * c)

    def grad(self, x, t):
        g = np.zeros_like(x, dtype=float)
        if x.shape[-1] == 2:
            r = _norm(x)
            r3 = np.where(r > 0, r**3, np.inf)
            g[..., 0] = x[..., 1] ** 2 / r3
            g[..., 1] = -x[..., 0] * x[..., 1] / r3
        return self.tau0 * self.eps * g

    def d_t(self, x, t):
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class TiltedTime:
    """tau = tau0 exp(k t x1): swelling that grows faster on one side."""

    tau0: float = 1.0
    k: float = 0.3

    @property
    def ident(self):
        return f"tilted_time({self.tau0!r}, {self.k!r})"

    def value(self, x, t):
        return self.tau0 * np.exp(self.k * t * x[..., 0])

    def grad(self, x, t):
        g = np.zeros_like(x, dtype=float)
        g[..., 0] = self.k * t * self.value(x, t)
        return g

    def d_t(self, x, t):
        return self.k * x[..., 0] * self.value(x, t)


_POTENTIALS = {
    "harmonic": (Harmonic, 0, 0),
    "aniso_quadratic": (AnisoQuadratic, 2, 2),
    "separable_x2": (SeparableX2, 0, 0),
    "polynomial": (Polynomial, 1, None),
    "stiffening": (Stiffening, 1, 1),
}
_VOLUMES = {
    "constant": (ConstantVolume, 1, 1),
    "linear_time": (LinearTime, 1, 1),
    "radial_time": (RadialTime, 0, 0),
    "angular": (Angular, 2, 2),
    "tilted_time": (TiltedTime, 2, 2),
}
_IDENT = re.compile(r"^\s*([a-z_0-9]+)\s*(?:\((.*)\))?\s*$")


def _parse(ident: str, table: dict, kind: str):
    m = _IDENT.match(ident)
    if not m or m.group(1) not in table:
        raise ConfigError(f"invalid {kind} family: {ident!r}")
    cls, lo, hi = table[m.group(1)]
    raw = m.group(2)
    try:
        args = [float(a) for a in raw.split(",")] if raw and raw.strip() else []
    except ValueError:
        raise ConfigError(f"non-numeric parameter in {kind} family {ident!r}") from None
    if len(args) < lo or (hi is not None and len(args) > hi):
        raise ConfigError(f"wrong number of parameters for {kind} family {ident!r}")
    if cls is Polynomial:
        return Polynomial(tuple(args))
    return cls(*args)


def parse_potential(ident: str):
    return _parse(ident, _POTENTIALS, "potential")


def parse_volume(ident: str):
    return _parse(ident, _VOLUMES, "volume")


# ---------------------------------------------------------------- FieldSpec


@dataclass(frozen=True)
class FieldSpec:
    """Immutable description of the model inputs at all times."""

    potential: object
    volume: object
    dimension: int = 2
    topology: str = FULL_PLANE
    critical_point: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError(f"unsupported dimension {self.dimension}")
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.topology == TORUS_STRIP and self.dimension != 2:
            raise ConfigError("torus-strip topology requires dimension 2")
        cp = self.critical_point
        if cp is None:
            cp = (0.0,) * self.dimension
        cp = tuple(float(c) for c in cp)
        if len(cp) != self.dimension:
            raise ConfigError("critical_point has the wrong dimension")
        object.__setattr__(self, "critical_point", cp)

    @classmethod
    def from_ids(cls, potential: str, volume: str, dimension: int = 2,
                 topology: str = FULL_PLANE, critical_point: Sequence[float] | None = None):
        return cls(parse_potential(potential), parse_volume(volume), int(dimension),
                   topology, None if critical_point is None else tuple(critical_point))

    @property
    def ids(self) -> tuple[str, str]:
        return self.potential.ident, self.volume.ident

    @property
    def periodic(self) -> bool:
        return self.topology == TORUS_STRIP

    # -- coordinates

    def _pts(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.dimension:
            if self.dimension == 1:
                x = x[..., None]
            else:
                raise ValueError(f"points must have trailing dimension {self.dimension}")
        if self.periodic:
            x = x.copy()
            x[..., 0] = wrap_torus(x[..., 0])
        return x

    # -- volume

    def tau(self, x, t, checked=True):
        x = self._pts(x)
        tau = self.volume.value(x, t)
        if checked:
            self._check_tau(x, tau)
        return tau

    def _check_tau(self, x, tau):
        bad = ~(tau > 0) | ~np.isfinite(tau)
        if np.any(bad):
            if getattr(self.volume, "singular_at_origin", False) and np.any(_norm(x[bad]) == 0):
                raise SingularVolumeError(f"{self.volume.ident} is singular at the origin")
            raise InvalidFieldError(f"{self.volume.ident} is not positive and finite at some point")

    def tau_inv(self, x, t, checked=True):
        tau = self.tau(x, t, checked)
        with np.errstate(divide="ignore"):
            return np.where(tau > 0, 1.0 / np.where(tau > 0, tau, 1.0), np.inf)

    def grad_tau_inv(self, x, t):
        x = self._pts(x)
        tau = self.volume.value(x, t)
        self._check_tau(x, tau)
        return -self.volume.grad(x, t) / (tau * tau)[..., None]

    def dtau_inv_dt(self, x, t):
        x = self._pts(x)
        tau = self.volume.value(x, t)
        self._check_tau(x, tau)
        return -self.volume.d_t(x, t) / (tau * tau)

    # -- effective potential

    def W(self, x, t):
        x = self._pts(x)
        return self.potential.value(x, t, self.volume.value(x, t))

    def grad_W(self, x, t):
        x = self._pts(x)
        tau = self.volume.value(x, t)
        g = self.potential.grad_x(x, t, tau)
        dv = self.potential.d_tau(x, t, tau)
        if np.any(dv != 0):
            g = g + dv[..., None] * self.volume.grad(x, t)
        return g

    def dW_dt(self, x, t):
        x = self._pts(x)
        tau = self.volume.value(x, t)
        return self.potential.d_t(x, t, tau) + self.potential.d_tau(x, t, tau) * self.volume.d_t(x, t)


def wrap_torus(x1):
    """Map x1 to its representative in (-1, 1]."""
    return 1.0 - np.mod(1.0 - np.asarray(x1, dtype=float), 2.0)


# ------------------------------------------------------- point-wise operations


def eval_effective_potential(spec: FieldSpec, x, t: float) -> float:
    spec.tau(x, t)
    return float(spec.W(x, t).reshape(-1)[0])


def eval_inverse_volume(spec: FieldSpec, x, t: float) -> float:
    return float(spec.tau_inv(x, t).reshape(-1)[0])


def grad_effective_potential(spec: FieldSpec, x, t: float):
    """Return ``(grad W, degenerate)``; at the declared critical point the
    gradient is the zero vector and ``degenerate`` is True."""
    x = np.asarray(x, dtype=float).reshape(spec.dimension)
    if np.allclose(x, spec.critical_point, rtol=0.0, atol=1e-14):
        return np.zeros(spec.dimension), True
    return spec.grad_W(x, t).reshape(spec.dimension), False


def check_field(spec: FieldSpec, t: float, radius: float = 4.0, samples: int = 10_000,
                seed: int = 0) -> dict[str, bool]:
    """Sample the standing assumptions on (V, tau) at time ``t``.

    Returns a mapping from assumption name to whether the sample satisfied it.
    Points within ``1e-3 * radius`` of the critical point are ignored when
    probing for stray critical points.
    """
    rng = np.random.default_rng(seed)
    d = spec.dimension
    cp = np.asarray(spec.critical_point)
    pts = cp + rng.uniform(-radius, radius, size=(samples, d))
    if spec.periodic:
        pts[:, 0] = rng.uniform(-1.0, 1.0, size=samples)
    tau = spec.volume.value(spec._pts(pts), t)
    out = {"tau_positive": bool(np.all((tau > 0) & np.isfinite(tau)))}
    out["W_nonnegative"] = bool(np.all(spec.W(pts, t) >= 0))

    # coercivity along rays: W strictly larger far out than at mid range
    dirs = rng.normal(size=(64, d))
    if spec.periodic:
        dirs[:, 0] = 0.0
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    far = spec.W(cp + 10 * radius * dirs, t)
    mid = spec.W(cp + radius * dirs, t)
    out["W_coercive"] = bool(np.all(far > mid))

    g = np.linalg.norm(spec.grad_W(pts, t), axis=-1)
    dist = np.abs(pts[:, -1] - cp[-1]) if spec.periodic else np.linalg.norm(pts - cp, axis=1)
    out["single_critical_point"] = bool(np.all(g[dist > 1e-3 * radius] > 0))
    return out
