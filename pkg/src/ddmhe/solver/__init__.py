"""Dense numerical solvers used by the estimators and the constants machinery."""
from .linalg import (check_pd, eig_sym, lambda_max, lambda_min, pinv_norm, spectral_radius,
                     weighted_operator_norm)
from .lyapunov import NotSchurError, lyapunov_residual, solve_discrete_lyapunov
from .observer import DetectabilityError, solve_observer_gain
from .qp import (INFEASIBLE, MAX_ITER, OPTIMAL, UNBOUNDED, QuadraticProgram, SolveResult,
                 SolverSettings, dump_qp, load_qp, solve_qp)

__all__ = [
    "check_pd", "eig_sym", "lambda_max", "lambda_min", "pinv_norm", "spectral_radius",
    "weighted_operator_norm", "NotSchurError", "lyapunov_residual", "solve_discrete_lyapunov",
    "DetectabilityError", "solve_observer_gain", "INFEASIBLE", "MAX_ITER", "OPTIMAL", "UNBOUNDED",
    "QuadraticProgram", "SolveResult", "SolverSettings", "dump_qp", "load_qp", "solve_qp",
]
