"""Weighted Laplace-Beltrami problem on a single level curve.

On a closed curve with arclength ``s`` the potential ``theta`` solves, for
every periodic test function ``xi``,

    int a theta' xi' ds = int (f / |grad pi|) xi ds,    a = tau^-1 / |grad pi|,

with zero average for the weight ``ds / |grad pi|``.  The discretisation is
periodic P1 finite elements on the polyline with a lumped load.  The
tangential velocity is ``v_par = -d theta / ds``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, solve_banded

from .errors import InconsistentSourceError, InvalidCoefficientError, ResolutionError
from .levelset import MIN_VERTICES, LevelCurve, weighted_level_integral

log = logging.getLogger(__name__)

FOURIER_MODES = 8


@dataclass(eq=False)
class CurveEllipticSystem:
    """Assembled per-curve system; ``load`` has already been orthogonalised."""

    curve: LevelCurve
    coefficient: np.ndarray
    load: np.ndarray
    source_mean: float
    solution: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def stiffness_bands(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and the k -> k+1 off-diagonal of the cyclic stiffness."""
        c = self.coefficient / self.curve.seg_lengths
        return c + np.roll(c, 1), -c

    def apply(self, theta: np.ndarray) -> np.ndarray:
        """Stiffness matrix times ``theta``."""
        c = self.coefficient / self.curve.seg_lengths
        d = np.roll(theta, -1) - theta
        flux = c * d
        return np.roll(flux, 1) - flux

    def dense(self) -> np.ndarray:
        n = self.curve.n
        diag, off = self.stiffness_bands
        K = np.diag(diag)
        idx = np.arange(n)
        K[idx, (idx + 1) % n] += off
        K[(idx + 1) % n, idx] += off
        return K


def default_tol_avg(N: float, length: float) -> float:
    return 1e-3 * N / length


def assemble(curve: LevelCurve, f, tol_avg: float | None = None) -> CurveEllipticSystem:
    """Build the stiffness coefficients and the lumped, mean-free load."""
    f = np.asarray(f, dtype=float)
    if f.shape != (curve.n,):
        raise ValueError("f must have one value per curve vertex")
    if curve.n < MIN_VERTICES:
        raise ResolutionError(f"curve has {curve.n} vertices; need at least {MIN_VERTICES}")
    node_a = curve.tau_inv / curve.grad_pi_norm
    coef = 0.5 * (node_a + np.roll(node_a, -1))
    if not np.all(np.isfinite(coef)) or np.any(coef <= 0) or np.any(curve.seg_lengths <= 0):
        raise InvalidCoefficientError("non-positive or non-finite coefficient on the curve")

    w = curve.weights
    resid = weighted_level_integral(curve, f)
    mean = resid / w.sum()
    warnings = []
    if tol_avg is not None:
        if abs(resid) > 10 * tol_avg:
            raise InconsistentSourceError(
                f"averaged source {abs(resid):.3e} exceeds 10 x tol_avg ({tol_avg:.3e})")
        if abs(resid) > tol_avg:
            msg = f"source orthogonalised: averaged residual {abs(resid):.3e} > tol_avg {tol_avg:.3e}"
            warnings.append(msg)
            log.warning("p=%g: %s", curve.p, msg)
    load = (f - mean) * w
    return CurveEllipticSystem(curve, coef, load, float(mean), warnings=warnings)


def _weighted_mean_free(curve: LevelCurve, theta: np.ndarray) -> np.ndarray:
    w = curve.weights
    return theta - np.dot(w, theta) / w.sum()


def solve_system(system: CurveEllipticSystem) -> np.ndarray:
    """Pin vertex 0, solve the remaining tridiagonal system, then project."""
    diag, off = system.stiffness_bands
    n = system.curve.n
    ab = np.zeros((3, n - 1))
    ab[1] = diag[1:]
    ab[0, 1:] = off[1:n - 1]
    ab[2, :-1] = off[1:n - 1]
    inner = solve_banded((1, 1), ab, system.load[1:])
    theta = _weighted_mean_free(system.curve, np.concatenate([[0.0], inner]))
    system.solution = theta
    return theta


def solve_theta_on_curve(curve: LevelCurve, f, tol_avg: float | None = None) -> np.ndarray:
    """Zero-average potential ``theta`` at the curve vertices."""
    return solve_system(assemble(curve, f, tol_avg))


def tangential_velocity(curve: LevelCurve, theta) -> np.ndarray:
    """v_par = -d theta / ds by centred differences over the two adjacent segments."""
    theta = np.asarray(theta, dtype=float)
    span = curve.seg_lengths + np.roll(curve.seg_lengths, 1)
    return -(np.roll(theta, -1) - np.roll(theta, 1)) / span


def parallel_kinetic_energy(curve: LevelCurve, v_par) -> float:
    v = np.asarray(v_par, dtype=float)
    return weighted_level_integral(curve, v * v)


def perturbed_energy(curve: LevelCurve, v_par, c: float) -> float:
    """Energy of v_par + c |grad pi|, a homogeneous perturbation of the tangential field."""
    return parallel_kinetic_energy(curve, np.asarray(v_par) + c * curve.grad_pi_norm)


def fourier_test_functions(curve: LevelCurve, kmax: int = FOURIER_MODES) -> np.ndarray:
    s = curve.arclength / curve.length
    rows = [np.ones_like(s)]
    for k in range(1, kmax + 1):
        rows += [np.cos(2 * np.pi * k * s), np.sin(2 * np.pi * k * s)]
    return np.array(rows)


def weak_residual(system: CurveEllipticSystem, theta=None, kmax: int = FOURIER_MODES) -> float:
    """Largest |a(theta, xi) - (f/|grad pi|, xi)| over low Fourier modes xi."""
    theta = system.solution if theta is None else np.asarray(theta)
    r = system.apply(theta) - system.load
    return float(np.max(np.abs(fourier_test_functions(system.curve, kmax) @ r)))


def source_norm(curve: LevelCurve, f) -> float:
    """Weighted L2 norm of f on the curve."""
    f = np.asarray(f, dtype=float)
    return float(np.sqrt(weighted_level_integral(curve, f * f)))


def coercivity_constant(system: CurveEllipticSystem) -> float:
    """Smallest non-zero eigenvalue of K relative to the lumped weight matrix."""
    vals = eigh(system.dense(), np.diag(system.curve.weights), eigvals_only=True, subset_by_index=[0, 1])
    return float(vals[1])


@dataclass(eq=False)
class TangentialSolution:
    theta: np.ndarray
    v_par: np.ndarray
    energy: float
    weak_residual: float
    source_norm: float
    coercivity: float | None
    averaged_residual: float
    warnings: list[str]


def solve_tangential(curve: LevelCurve, f, tol_avg: float | None = None, coercivity: bool = True) -> TangentialSolution:
    """Solve for theta and collect the diagnostics reported per curve."""
    system = assemble(curve, f, tol_avg)
    theta = solve_system(system)
    v = tangential_velocity(curve, theta)
    return TangentialSolution(
        theta=theta,
        v_par=v,
        energy=parallel_kinetic_energy(curve, v),
        weak_residual=weak_residual(system, theta),
        source_norm=source_norm(curve, f),
        coercivity=coercivity_constant(system) if coercivity else None,
        averaged_residual=abs(weighted_level_integral(curve, f)),
        warnings=list(system.warnings),
    )
