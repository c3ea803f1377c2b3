"""Rothe time stepping for the parabolic fractional 1-Laplacian on cell grids."""
from .grid import GridSpec, Grid, KernelWeights, build_grid, assemble_kernel
from .energy import StepData, seminorm_s1, phi_sp, j_sp, grad_j_sp
from .step import (SignField, SolverOptions, StepFailure, StepSolution, complementary_slackness,
                   extract_sign_field, soft_threshold_oracle, solve_step, solve_step_continuation,
                   solve_step_p, solve_step_primal_dual, weak_residual)
from .rothe import RotheFailure, SourceSpec, TimeGrid, Trajectory, interpolate_u, interpolate_Z, run_rothe
from .diagnostics import (check_energy_chain, check_sup_bound, contraction_check, holder_quotient,
                          refinement_study, time_derivative_norm)

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "Grid", "KernelWeights", "build_grid", "assemble_kernel",
    "StepData", "seminorm_s1", "phi_sp", "j_sp", "grad_j_sp",
    "SignField", "SolverOptions", "StepFailure", "StepSolution", "complementary_slackness",
    "extract_sign_field", "soft_threshold_oracle", "solve_step", "solve_step_continuation",
    "solve_step_p", "solve_step_primal_dual", "weak_residual",
    "RotheFailure", "SourceSpec", "TimeGrid", "Trajectory", "interpolate_u", "interpolate_Z", "run_rothe",
    "check_energy_chain", "check_sup_bound", "contraction_check", "holder_quotient",
    "refinement_study", "time_derivative_norm",
]
