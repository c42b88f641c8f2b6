from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from congesta.equilibrium import Grid, enclosed_mass, solve_equilibrium
from congesta.errors import DegenerateNormalError, DomainTruncatedError, NoCurveError, ResolutionError
from congesta.fields import FieldSpec
from congesta.levelset import (
    MIN_VERTICES,
    extract_level_curve,
    extract_level_curves,
    is_simple,
    unit_normal,
    weighted_level_integral,
)


def _signed_area(c):
    x = np.vstack([c.vertices, c.vertices[:1] + c.period])
    return 0.5 * float(np.sum(x[:-1, 0] * x[1:, 1] - x[1:, 0] * x[:-1, 1]))


def test_unit_circle(harmonic_const):
    c = extract_level_curve(harmonic_const, 2 * math.pi, n_vertices=512)
    r = np.linalg.norm(c.vertices, axis=1)
    assert np.allclose(r, 1.0, atol=1e-6)
    assert c.length == pytest.approx(2 * math.pi, abs=1e-3)
    assert c.n == 512


def test_ellipse_axes(aniso_const):
    p = 5.0
    c = extract_level_curve(aniso_const, p, n_vertices=512)
    ax1 = np.max(np.abs(c.vertices[:, 0]))
    ax2 = np.max(np.abs(c.vertices[:, 1]))
    assert ax1 / ax2 == pytest.approx(2.0, rel=1e-2)
    e1, e2 = O.ellipse_semi_axes(p, 0.5)
    assert ax1 == pytest.approx(e1, rel=1e-3) and ax2 == pytest.approx(e2, rel=1e-3)


def test_outer_curve_encloses_N(harmonic_const):
    c = extract_level_curve(harmonic_const, 10.0)
    assert enclosed_mass(harmonic_const, 10.0) == pytest.approx(10.0, abs=1e-3)
    r = np.linalg.norm(c.vertices, axis=1)
    assert np.allclose(r, O.harmonic_radius(10.0, 0.5), rtol=1e-4)


@pytest.mark.parametrize("fixture", ["harmonic_const", "aniso_const", "harmonic_growing"])
@pytest.mark.parametrize("p", [1.0, 2.5, 5.0, 7.5, 9.99])
def test_curve_invariants(request, fixture, p):
    state = request.getfixturevalue(fixture)
    c = extract_level_curve(state, p, n_vertices=256)
    assert c.n >= MIN_VERTICES
    assert not np.any(c.period)
    assert is_simple(c)
    assert np.allclose(np.linalg.norm(c.normal, axis=1), 1.0, atol=1e-12)
    assert np.max(np.abs(np.sum(c.normal * c.tangent, axis=1))) < 1e-8
    assert np.all(c.grad_pi_norm > 0)
    assert _signed_area(c) > 0  # counter-clockwise
    assert np.all(np.sum(c.normal * c.vertices, axis=1) > 0)  # outward
    assert np.allclose(state.pi(c.vertices), p, atol=1e-8 * state.N)
    assert weighted_level_integral(c, c.tau_inv) == pytest.approx(1.0, abs=1e-3)


def test_arclength_is_cumulative(harmonic_const):
    c = extract_level_curve(harmonic_const, 5.0, n_vertices=128)
    assert c.arclength[0] == 0.0
    assert np.allclose(np.diff(c.arclength), c.seg_lengths[:-1])
    assert c.arclength[-1] < c.length


def test_weighted_integral_examples(harmonic_const):
    p = 2 * math.pi
    c = extract_level_curve(harmonic_const, p, n_vertices=512)
    assert weighted_level_integral(c, np.ones(c.n)) == pytest.approx(0.5, rel=1e-4)
    assert weighted_level_integral(c, np.zeros(c.n)) == 0.0
    assert np.allclose(c.grad_pi_norm, O.harmonic_grad_pi(1.0, 0.5), rtol=1e-4)


def test_coarea_weight_matches_mass_derivative(aniso_const):
    p, dp = 4.0, 0.05
    c = extract_level_curve(aniso_const, p, n_vertices=512)
    brute = (enclosed_mass(aniso_const, p + dp) - enclosed_mass(aniso_const, p - dp)) / (2 * dp)
    assert weighted_level_integral(c, c.tau_inv) == pytest.approx(brute, abs=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 9.9))
def test_harmonic_curves_are_oracle_circles(p):
    from congesta.equilibrium import solve_equilibrium

    state = solve_equilibrium(FieldSpec.from_ids("harmonic", "constant(0.5)"), 10.0, 0.0, Grid.square(3.0, 256))
    c = extract_level_curve(state, p, n_vertices=256)
    assert np.allclose(np.linalg.norm(c.vertices, axis=1), O.harmonic_radius(p, 0.5), rtol=2e-4)
    assert weighted_level_integral(c, c.tau_inv) == pytest.approx(1.0, abs=1e-3)


def test_strip_levels_have_two_periodic_components(strip_state):
    curves = extract_level_curves(strip_state, 2.0, n_vertices=256)
    assert len(curves) == 2
    for c in curves:
        assert abs(c.period[0]) == 2.0 and c.period[1] == 0.0
        assert np.ptp(c.vertices[:, 1]) < 1e-9
        assert weighted_level_integral(c, c.tau_inv) == pytest.approx(0.5, abs=1e-3)
        # outward: away from the line x2 = 0
        assert np.all(c.normal[:, 1] * np.sign(c.vertices[:, 1]) > 0.999)
    assert curves[0].vertices[0, 1] > 0 > curves[1].vertices[0, 1]
    a = math.sqrt(2 * strip_state.U_of_p(2.0))
    assert abs(curves[0].vertices[0, 1]) == pytest.approx(a, rel=1e-12)
    with pytest.raises(NoCurveError):
        extract_level_curve(strip_state, 2.0)


def test_unit_normal_examples(harmonic_const, aniso_const):
    assert np.allclose(unit_normal(harmonic_const, np.array([[1.0, 0.0]])), [[1.0, 0.0]])
    assert np.allclose(unit_normal(harmonic_const, np.array([[0.0, -2.0]])), [[0.0, -1.0]])
    assert np.allclose(unit_normal(aniso_const, np.array([[0.0, 1.0]])), [[0.0, 1.0]])
    with pytest.raises(DegenerateNormalError):
        unit_normal(harmonic_const, np.array([[0.0, 0.0]]))


def test_no_curve_outside_range(harmonic_const):
    for p in (0.0, -1.0, harmonic_const.P_max * 1.01):
        with pytest.raises(NoCurveError):
            extract_level_curve(harmonic_const, p)


def test_truncated_curve_is_rejected():
    spec = FieldSpec.from_ids("harmonic", "constant(0.5)")
    state = solve_equilibrium(spec, 10.0, 0.0, Grid.square(3.0, 256), u_max=4.5)
    with pytest.raises(DomainTruncatedError):
        extract_level_curve(state, 0.9999 * state.P_max)


def test_tiny_curve_is_under_resolved():
    spec = FieldSpec.from_ids("harmonic", "constant(0.5)")
    state = solve_equilibrium(spec, 10.0, 0.0, Grid.square(3.0, 64))
    with pytest.raises((ResolutionError, NoCurveError)):
        extract_level_curve(state, 0.1)


def test_extraction_is_deterministic(aniso_const):
    a = extract_level_curve(aniso_const, 3.0)
    b = extract_level_curve(aniso_const, 3.0)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.grad_pi_norm, b.grad_pi_norm)


def test_coarea_converges_under_refinement():
    spec = FieldSpec.from_ids("aniso_quadratic(1.0, 4.0)", "linear_time(0.5)")
    errs = []
    for n in (32, 64, 128):
        state = solve_equilibrium(spec, 10.0, 0.5, Grid((-3.0, -2.0), (3.0, 2.0), (n, n)))
        c = extract_level_curve(state, 5.0, n_vertices=256)
        errs.append(abs(weighted_level_integral(c, c.tau_inv) - 1.0))
    assert errs[2] < errs[0]


def test_arc_correction_on_circle(harmonic_const):
    c = extract_level_curve(harmonic_const, 2 * math.pi, n_vertices=128)
    assert np.allclose(c.vertex_curvature, 1.0, rtol=1e-5)
    assert np.all(c.seg_lengths > c.chords)
    # the bare polygon is short by (2 pi / n)^2 / 24 relative; the corrected sum is not
    assert abs(c.chords.sum() - 2 * math.pi) > 1e-4
    assert c.length == pytest.approx(2 * math.pi, rel=1e-7)


def test_straight_curves_need_no_correction(strip_state):
    c = extract_level_curves(strip_state, 2.0, n_vertices=256)[0]
    assert np.allclose(c.vertex_curvature, 0.0, atol=1e-9)
    assert c.length == pytest.approx(2.0, rel=1e-12)
