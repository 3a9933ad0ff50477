"""Problem, plan and certificate types plus optimality diagnostics.

A transport problem is ``min <C, X>`` over nonnegative ``X`` with row sums
``p`` and column sums ``q``. Everything that reports on how close a pair
``(X, (mu, nu))`` is to optimality lives here so that every solver is judged
by the same numbers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    EmptyDimension,
    MarginalNotSimplex,
    NegativeCost,
    NonFiniteEntry,
    ShapeMismatch,
)

MARGINAL_TOL = 1e-12


def _frozen(a, dtype=None, order="K"):
    out = np.array(a, dtype=dtype, order=order, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Cost matrix and marginals of a discrete OT instance.

    The cost is stored column-major; row-major input is transposed on
    ingestion so the fused kernels always stream contiguous columns.
    """

    cost: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        cost = np.asarray(self.cost)
        dtype = cost.dtype if cost.dtype in (np.float32, np.float64) else np.float64
        object.__setattr__(self, "cost", _frozen(np.atleast_2d(cost), dtype, order="F"))
        object.__setattr__(self, "p", _frozen(np.ravel(self.p), dtype))
        object.__setattr__(self, "q", _frozen(np.ravel(self.q), dtype))
        if self.cost.ndim != 2:
            raise ShapeMismatch(f"cost must be a matrix, got shape {self.cost.shape}")
        m, n = self.cost.shape
        if self.p.shape != (m,) or self.q.shape != (n,):
            raise ShapeMismatch(
                f"cost is {m}x{n} but p has length {self.p.size} and q has length {self.q.size}"
            )

    @property
    def m(self) -> int:
        return self.cost.shape[0]

    @property
    def n(self) -> int:
        return self.cost.shape[1]

    @property
    def shape(self):
        return self.cost.shape

    @property
    def dtype(self):
        return self.cost.dtype

    def astype(self, dtype) -> "TransportProblem":
        dtype = np.dtype(dtype)
        if dtype == self.dtype:
            return self
        return TransportProblem(self.cost.astype(dtype), self.p.astype(dtype), self.q.astype(dtype))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, order="F"))
        if self.x.ndim != 2:
            raise ShapeMismatch(f"plan must be a matrix, got shape {self.x.shape}")

    @property
    def shape(self):
        return self.x.shape

    def nnz(self, threshold: float = 0.0) -> int:
        return int(np.count_nonzero(self.x > threshold))


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """Dual pair ``(mu, nu)`` together with the penalty it was recovered under."""

    mu: np.ndarray
    nu: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen(np.ravel(self.mu), np.float64))
        object.__setattr__(self, "nu", _frozen(np.ravel(self.nu), np.float64))
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.nu))):
            raise NonFiniteEntry("dual certificate has non-finite entries")

    def dual_objective(self, problem: TransportProblem) -> float:
        return float(np.dot(problem.p, self.mu) + np.dot(problem.q, self.nu))


@dataclass(frozen=True)
class ResidualReport:
    """Primal residual, dual infeasibility, duality gap and objective.

    ``nan`` is used as a "not applicable" sentinel for ``r_dual``/``gap`` when
    a solver cannot produce a finite dual certificate (plain Sinkhorn after
    its scalings overflow). All other values are finite and nonnegative.
    """

    r_primal: float
    r_dual: float
    gap: float
    objective: float

    def __post_init__(self):
        for name in ("r_primal", "r_dual", "gap"):
            v = getattr(self, name)
            if not (math.isnan(v) or v >= 0.0):
                raise ValueError(f"{name} must be nonnegative, got {v}")

    def as_dict(self) -> dict:
        return {
            "r_primal": self.r_primal,
            "r_dual": self.r_dual,
            "gap": self.gap,
            "objective": self.objective,
        }


@dataclass
class SolveTrace:
    """Per-iteration record of a solve.

    Columns are kept as parallel lists; ``nan`` marks a value that was not
    available on that iteration (e.g. the cost on a folded skip-cost pass
    before it is back-filled).
    """

    iteration: list = field(default_factory=list)
    r_primal: list = field(default_factory=list)
    r_dual: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    ergodic_objective: list = field(default_factory=list)
    fixed_point_residual: list = field(default_factory=list)
    termination: str = ""
    iterations: int = 0
    wall_time: float = 0.0

    COLUMNS = (
        "iteration",
        "r_primal",
        "r_dual",
        "gap",
        "objective",
        "ergodic_objective",
        "fixed_point_residual",
    )

    def append(self, k, r_primal=math.nan, r_dual=math.nan, gap=math.nan, objective=math.nan,
               ergodic_objective=math.nan, fixed_point_residual=math.nan):
        if self.iteration and k <= self.iteration[-1]:
            raise ValueError(f"trace iterations must increase: {k} after {self.iteration[-1]}")
        self.iteration.append(int(k))
        self.r_primal.append(float(r_primal))
        self.r_dual.append(float(r_dual))
        self.gap.append(float(gap))
        self.objective.append(float(objective))
        self.ergodic_objective.append(float(ergodic_objective))
        self.fixed_point_residual.append(float(fixed_point_residual))

    def __len__(self):
        return len(self.iteration)

    def rows(self):
        for vals in zip(*(getattr(self, c) for c in self.COLUMNS)):
            yield dict(zip(self.COLUMNS, vals))


def validate_problem(problem: TransportProblem, renormalize: bool = False,
                     tol: float = MARGINAL_TOL) -> TransportProblem:
    """Check the invariants of ``problem`` and return it.

    With ``renormalize=True`` marginals that are nonnegative but do not sum
    to one are rescaled instead of rejected.
    """
    m, n = problem.cost.shape
    if m < 1 or n < 1:
        raise EmptyDimension(f"empty problem of shape {m}x{n}")
    for name, arr in (("cost", problem.cost), ("p", problem.p), ("q", problem.q)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteEntry(f"{name} has non-finite entries")
    if np.any(problem.cost < 0):
        raise NegativeCost(f"cost has {int(np.count_nonzero(problem.cost < 0))} negative entries")
    marginals = {}
    for name, vec in (("p", problem.p), ("q", problem.q)):
        if np.any(vec < 0):
            raise MarginalNotSimplex(name, math.fsum(vec.tolist()), reason="sign")
        total = math.fsum(vec.astype(np.float64).tolist())
        if abs(total - 1.0) > tol:
            if not renormalize or total <= 0:
                raise MarginalNotSimplex(name, total)
            vec = vec / total
        marginals[name] = vec
    if marginals["p"] is problem.p and marginals["q"] is problem.q:
        return problem
    return TransportProblem(problem.cost, marginals["p"], marginals["q"])


def _check_shapes(problem, x):
    if x.shape != problem.shape:
        raise ShapeMismatch(f"plan shape {x.shape} does not match problem shape {problem.shape}")


def _plan_array(plan):
    return plan.x if isinstance(plan, TransportPlan) else np.asarray(plan)


def objective(problem: TransportProblem, plan) -> float:
    """Return ``<C, X>``.

    Summation is row-wise then over rows in index order, so the result does
    not depend on how the caller chunks the matrix.
    """
    x = _plan_array(plan)
    _check_shapes(problem, x)
    per_row = np.einsum("ij,ij->i", np.asarray(problem.cost, np.float64), np.asarray(x, np.float64))
    return float(np.sum(per_row))


def dual_infeasibility_sq_rows(cost, mu, nu, block_rows=256):
    """Per-row ``sum_j [mu_i + nu_j - C_ij]_+^2``, streamed by row blocks.

    Only one ``block_rows x n`` slab of ``mu e^T + f nu^T - C`` exists at a
    time. Each row is reduced entirely inside its block, so the result is
    bitwise independent of ``block_rows``.
    """
    m, n = cost.shape
    out = np.empty(m, dtype=np.float64)
    mu = np.asarray(mu, np.float64)
    nu = np.asarray(nu, np.float64)
    step = max(1, int(block_rows))
    for r0 in range(0, m, step):
        r1 = min(m, r0 + step)
        slab = np.array(cost[r0:r1], dtype=np.float64, order="C")
        np.subtract(mu[r0:r1, None] + nu[None, :], slab, out=slab)
        np.maximum(slab, 0.0, out=slab)
        np.multiply(slab, slab, out=slab)
        out[r0:r1] = slab.sum(axis=1)
    return out


def residual_report(problem: TransportProblem, plan, cert: DualCertificate,
                    block_rows: int = 256) -> ResidualReport:
    """Evaluate the primal residual, dual infeasibility and gap of a pair."""
    x = _plan_array(plan)
    _check_shapes(problem, x)
    if cert.mu.shape != (problem.m,) or cert.nu.shape != (problem.n,):
        raise ShapeMismatch("dual certificate length does not match the problem")
    x64 = np.asarray(x, np.float64)
    row_def = x64.sum(axis=1) - problem.p
    col_def = x64.sum(axis=0) - problem.q
    r_primal = math.sqrt(float(np.dot(row_def, row_def) + np.dot(col_def, col_def)))
    r_dual = math.sqrt(float(np.sum(dual_infeasibility_sq_rows(problem.cost, cert.mu, cert.nu, block_rows))))
    obj = objective(problem, x64)
    gap = abs(obj - cert.dual_objective(problem))
    return ResidualReport(r_primal, r_dual, gap, obj)


def kkt_violations(problem: TransportProblem, x, mu, nu) -> dict:
    """Violation of each optimality condition for a primal-dual pair.

    Returns a dict with keys ``primal`` (marginal error, inf-norm),
    ``nonneg`` (most negative entry of X, as a positive number),
    ``dual`` (largest entry of ``mu e^T + f nu^T - C``, clipped at 0) and
    ``slackness`` (``|<X, C - mu e^T - f nu^T>|``).
    """
    x = np.asarray(x, np.float64)
    c = np.asarray(problem.cost, np.float64)
    mu = np.asarray(mu, np.float64)
    nu = np.asarray(nu, np.float64)
    reduced = c - mu[:, None] - nu[None, :]
    return {
        "primal": float(max(np.max(np.abs(x.sum(axis=1) - problem.p)),
                            np.max(np.abs(x.sum(axis=0) - problem.q)))),
        "nonneg": float(max(0.0, -x.min())),
        "dual": float(max(0.0, -reduced.min())),
        "slackness": float(abs(np.sum(x * reduced))),
    }


def is_within_tolerance(report: ResidualReport, problem: TransportProblem, tol_primal: float,
                        tol_dual: float, tol_gap: float, relative: bool = False,
                        ) -> bool:
    r_primal, gap = report.r_primal, report.gap
    if relative:
        r_primal = r_primal / (1.0 + float(np.linalg.norm(problem.p)) + float(np.linalg.norm(problem.q)))
        gap = gap / (1.0 + abs(report.objective))
    return bool(r_primal <= tol_primal and report.r_dual <= tol_dual and gap <= tol_gap)


def product_coupling(problem: TransportProblem, dtype: Optional[np.dtype] = None) -> np.ndarray:
    """``p q^T`` as a fresh column-major array."""
    dtype = problem.dtype if dtype is None else dtype
    return np.asfortranarray(np.outer(problem.p, problem.q).astype(dtype, copy=False))


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True, eq=False)
class SolveResult:
    plan: TransportPlan
    cert: Optional[DualCertificate]
    report: ResidualReport
    trace: SolveTrace
    status: Status
    solver: str = ""
    reason: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def iterations(self) -> int:
        return self.trace.iterations
