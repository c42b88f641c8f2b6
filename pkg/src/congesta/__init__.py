"""Kinematics of packed equilibria under slowly varying potentials and volumes."""

from .errors import CongestaError, ConfigError
from .fields import FieldSpec
from .equilibrium import EquilibriumState, Grid, compute_pi, solve_equilibrium
from .levelset import LevelCurve, extract_level_curve, extract_level_curves, weighted_level_integral
from .kinematics import decompose, normal_speed, source_at, time_probe
from .tangential import solve_tangential, solve_theta_on_curve
from .oned import endpoint_speed_1d, solve_domain_1d, velocity_1d
from .scenario import load_scenario, run_scenario

__all__ = [
    "CongestaError", "ConfigError", "FieldSpec", "Grid", "EquilibriumState", "solve_equilibrium", "compute_pi",
    "LevelCurve", "extract_level_curve", "extract_level_curves", "weighted_level_integral",
    "time_probe", "normal_speed", "source_at", "decompose", "solve_tangential", "solve_theta_on_curve",
    "solve_domain_1d", "endpoint_speed_1d", "velocity_1d", "load_scenario", "run_scenario",
]
__version__ = "0.1.0"
