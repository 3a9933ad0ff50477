"""Douglas-Rachford splitting for discrete optimal transport."""

from .core import (
    DualCertificate,
    ResidualReport,
    SolveResult,
    SolveTrace,
    Status,
    TransportPlan,
    TransportProblem,
    kkt_violations,
    objective,
    residual_report,
    validate_problem,
)
from .errors import DrotError
from .probgen import GaussianSpec, gen_gaussian_problem, random_problems
from .reference import lp_exact, run_reference, sinkhorn_solve
from .solver import DrotConfig, drot_step, init_state, solve

__all__ = [
    "DrotConfig",
    "DrotError",
    "DualCertificate",
    "GaussianSpec",
    "ResidualReport",
    "SolveResult",
    "SolveTrace",
    "Status",
    "TransportPlan",
    "TransportProblem",
    "drot_step",
    "gen_gaussian_problem",
    "init_state",
    "kkt_violations",
    "lp_exact",
    "objective",
    "random_problems",
    "residual_report",
    "run_reference",
    "sinkhorn_solve",
    "solve",
    "validate_problem",
]
