"""Optimality system, solvers, cones and sampled growth checkers."""

from ..objective import EtaFunctional, Perturbation
from .checks import (CheckReport, Sampler, bump_control, check_Ak, check_growth_first,
                     check_struct, default_radius, parallel_map, quadratic_growth_check)
from .solvers import METHODS, OCPResult, solve_ocp
from .system import (BOUND_TOL, ConeResult, ConeSpec, PhiResidual, Triple, UbarData,
                     bang_bang_selection, cone_membership, is_feasible, metric_dY, metric_dZ,
                     phi_residual, project_admissible, require_feasible, ubar_data, vi_gap)

__all__ = [
    "BOUND_TOL", "CheckReport", "ConeResult", "ConeSpec", "EtaFunctional", "METHODS", "OCPResult",
    "Perturbation", "PhiResidual", "Sampler", "Triple", "UbarData", "bang_bang_selection",
    "bump_control", "check_Ak", "check_growth_first", "check_struct", "cone_membership",
    "default_radius", "is_feasible", "metric_dY", "metric_dZ", "parallel_map", "phi_residual",
    "project_admissible", "quadratic_growth_check", "require_feasible", "solve_ocp", "ubar_data",
    "vi_gap",
]
