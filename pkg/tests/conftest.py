from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from congesta.equilibrium import Grid, solve_equilibrium  # noqa: E402
from congesta.fields import FieldSpec  # noqa: E402

_CRITERIA: dict[str, list[tuple[str, bool, str]]] = {}


def record(criterion: str, check: str, ok: bool, detail: str = "") -> bool:
    """Log one acceptance check; the terminal summary prints one line per criterion."""
    _CRITERIA.setdefault(criterion, []).append((check, bool(ok), detail))
    return bool(ok)


@pytest.fixture
def report():
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s[1:]) if s[1:].isdigit() else 99):
        checks = _CRITERIA[name]
        ok = all(c[1] for c in checks)
        tr.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  ({sum(c[1] for c in checks)}/{len(checks)} checks)")
        for check, good, detail in checks:
            tr.write_line(f"    [{'ok' if good else 'FAIL'}] {check}  {detail}")


@pytest.fixture(scope="session")
def harmonic_const():
    """W = |x|^2 / 2, tau0 = 0.5, N = 10 on the 256^2 box of half-width 3."""
    spec = FieldSpec.from_ids("harmonic", "constant(0.5)")
    return solve_equilibrium(spec, 10.0, 0.0, Grid.square(3.0, 256))


@pytest.fixture(scope="session")
def harmonic_growing():
    spec = FieldSpec.from_ids("harmonic", "linear_time(0.5)")
    return solve_equilibrium(spec, 10.0, 0.0, Grid.square(3.0, 256))


@pytest.fixture(scope="session")
def aniso_const():
    spec = FieldSpec.from_ids("aniso_quadratic(1.0, 4.0)", "constant(0.5)")
    grid = Grid((-3.0, -2.0), (3.0, 2.0), (256, 256))
    return solve_equilibrium(spec, 10.0, 0.0, grid)


@pytest.fixture(scope="session")
def strip_state():
    spec = FieldSpec.from_ids("separable_x2", "radial_time", topology="torus-strip")
    grid = Grid((-1.0, -0.75), (1.0, 0.75), (256, 256))
    return solve_equilibrium(spec, 4.0, 1.0, grid)
