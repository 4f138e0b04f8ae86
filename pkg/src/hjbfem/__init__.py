"""Monotone P1 finite element solver for parabolic HJB problems.

Pipeline: build a Mesh, describe a ControlProblem, choose an
OperatorSplitting, size the artificial diffusion with
compute_diffusion_budget, assemble the discrete operators, certify
monotonicity, then run backward_solve.  The diagnostics module measures
errors and reproduces the consistency experiments; the cli module wires
everything to configuration files.
"""

from .errors import (ConfigurationError, MeshFormatError, MonotonicityError,
                     NonConvergenceError, QueryError, SolverError)
from .mesh import (AcutenessCertificate, Mesh, acuteness_certificate,
                   build_interval_mesh, build_patterned_rectangle_mesh,
                   hat_l1_norm, mesh_size, read_mesh, write_mesh)
from .problem import (ControlProblem, DiffusionBudget, OperatorSplitting,
                      compute_diffusion_budget, fixed_diffusion_budget,
                      splitting_consistency_residual)
from .assembly import (DiscreteOperatorSet, MonotonicityReport, apply_operator,
                       assemble, certify_monotonicity, dump_operators,
                       mass_matrix, stiffness_matrix)
from .solver import (DiscreteSolution, HowardStepRecord, PolicyIterationReport,
                     TimeGrid, backward_solve, default_tolerance, dump_policy,
                     dump_report, dump_solution, eq_residual, evaluate,
                     evaluate_gradient, fixed_control_solve, howard_solve_step,
                     select_policy, solve_mmatrix_system)
from .diagnostics import (ConsistencyProbe, EllipticProjection, ErrorReport,
                          coercivity_probe, compute_error_report,
                          consistency_experiment, convergence_study,
                          elliptic_projection, l2h1_error, linf_error,
                          stiffness_action)
from . import catalog

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
