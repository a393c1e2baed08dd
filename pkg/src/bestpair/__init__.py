"""Low-rank plus sparse decomposition as a best-pair problem, solved by an
inertial proximal gradient method, with local rate prediction and synthetic
experiment drivers."""

from .core import (DimensionError, ObservationMask, StackedVar, SvdError, SvdResult,
                   apply_k, svd)
from .projections import (ConstraintSpec, hard_threshold_rank, in_constraint_set,
                          infeasibility, project_affine, project_constraint_set,
                          sparse_project_approx)
from .solver import (Certificate, IterateTrace, SolverParams, certificate, check_descent,
                     merit_phi, solve, step)

__all__ = [
    "Certificate", "ConstraintSpec", "DimensionError", "IterateTrace", "ObservationMask",
    "SolverParams", "StackedVar", "SvdError", "SvdResult", "apply_k", "certificate",
    "check_descent", "hard_threshold_rank", "in_constraint_set", "infeasibility", "merit_phi",
    "project_affine", "project_constraint_set", "solve", "sparse_project_approx", "step", "svd",
]

__version__ = "0.1.0"
