"""Newton-MR with inexact Hessians: MINRES inner solver, line-searches, drivers, diagnostics."""

from .core import (FUNCTION_COST, GRADIENT_COST, HVP_COST, HessianOperator, NoiseSpec,
                   NumericalFailure, OracleCounter, apply, dense_operator)
from .linesearch import (LineSearchFailure, LineSearchParams, backtrack, forward_backtrack)
from .minres import MinresOutcome, Tag, krylov_oracle_solve, minres_solve
from .problems import (Dataset, load_dataset, logistic_problem, nls_problem, noisy_hessian,
                       pl_quadratic, subsampled_hessian)
from .solver import (NoisyHessian, SolverConfig, SolverResult, SubsampledHessian,
                     TerminationReason, newton_mr_first_order, newton_mr_second_order)

__version__ = "0.1.0"

__all__ = [
    "FUNCTION_COST", "GRADIENT_COST", "HVP_COST", "HessianOperator", "NoiseSpec",
    "NumericalFailure", "OracleCounter", "apply", "dense_operator",
    "LineSearchFailure", "LineSearchParams", "backtrack", "forward_backtrack",
    "MinresOutcome", "Tag", "krylov_oracle_solve", "minres_solve",
    "Dataset", "load_dataset", "logistic_problem", "nls_problem", "noisy_hessian",
    "pl_quadratic", "subsampled_hessian",
    "NoisyHessian", "SolverConfig", "SolverResult", "SubsampledHessian",
    "TerminationReason", "newton_mr_first_order", "newton_mr_second_order",
]
