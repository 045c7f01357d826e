"""Lattice discretisation of the second boundary value problem for Monge-Ampere."""

__version__ = "0.1.0"

from .geometry import Density, HalfPlane, Polygon, integrate_density, intersect_half_planes  # noqa: E402
from .lattice import build_grid, build_partition, build_stencil  # noqa: E402
from .extension import MeshFunction, extend, is_discrete_convex, second_difference  # noqa: E402
from .ma_operator import (  # noqa: E402
    build_problem,
    epsilon_correction,
    r_curvature,
    regularize_degenerate,
    residual,
    subdifferential_cell,
    target_masses,
)
from .solver import SolverConfig, check_uniqueness, initial_guess, solve, solve_monotone, solve_newton  # noqa: E402
from .transport import (  # noqa: E402
    ExactSolution,
    convergence_study,
    select_gradient,
    sup_error,
    target_refinement_study,
)

__all__ = [
    "Density", "HalfPlane", "Polygon", "integrate_density", "intersect_half_planes",
    "build_grid", "build_partition", "build_stencil",
    "MeshFunction", "extend", "is_discrete_convex", "second_difference",
    "build_problem", "epsilon_correction", "r_curvature", "regularize_degenerate", "residual",
    "subdifferential_cell", "target_masses",
    "SolverConfig", "check_uniqueness", "initial_guess", "solve", "solve_monotone", "solve_newton",
    "ExactSolution", "convergence_study", "select_gradient", "sup_error", "target_refinement_study",
]
