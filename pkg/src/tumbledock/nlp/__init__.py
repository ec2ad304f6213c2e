"""Dense SQP solver: damped BFGS, dual active-set QP, l1 merit line search."""

from .qp import QPFailure, QPResult, solve_qp
from .sqp import (
    LOG_COLUMNS,
    IterationRecord,
    Multipliers,
    NLPProblem,
    SolveReport,
    SQPSettings,
    gradient,
    kkt_residuals,
    solve,
)

__all__ = [
    "LOG_COLUMNS", "IterationRecord", "Multipliers", "NLPProblem", "QPFailure", "QPResult",
    "SolveReport", "SQPSettings", "gradient", "kkt_residuals", "solve", "solve_qp",
]
