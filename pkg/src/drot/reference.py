"""Slow, independent solvers used as oracles and baselines.

Nothing here shares a code path with the fused engine: the DR and ADMM
steps are written with three full matrices, Sinkhorn is the plain scaling
iteration, and :func:`lp_exact` is a transportation simplex.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import (
    DualCertificate,
    ResidualReport,
    SolveResult,
    SolveTrace,
    Status,
    TransportPlan,
    TransportProblem,
    objective,
    product_coupling,
    residual_report,
    validate_problem,
)
from .errors import NonFiniteIterate, NonPositiveRho, ShapeMismatch, TooLarge, ZeroMarginal
from .splitting import project_coupling, prox_nonneg_linear


def _check_rho(rho):
    if not rho > 0:
        raise NonPositiveRho(f"rho must be positive, got {rho}")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteIterate("non-finite entries in a reference iterate")


# ---------------------------------------------------------------- DR / ADMM


@dataclass
class DrReferenceState:
    """Three-matrix DR state. ``x`` and ``z`` are copies of ``y`` before the first step."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    k: int = 0


def dr_reference_init(problem: TransportProblem, y0=None) -> DrReferenceState:
    y = product_coupling(problem, np.float64) if y0 is None else np.array(y0, dtype=np.float64)
    if y.shape != problem.shape:
        raise ShapeMismatch(f"y0 has shape {y.shape}, expected {problem.shape}")
    return DrReferenceState(x=y.copy(), y=y, z=y.copy())


def dr_reference_step(state: DrReferenceState, problem: TransportProblem, rho: float) -> DrReferenceState:
    """``X = [Y - rho C]_+``, ``Z = P(2X - Y)``, ``Y += Z - X``."""
    _check_rho(rho)
    x = prox_nonneg_linear(state.y, problem.cost, rho)
    z = project_coupling(2.0 * x - state.y, problem.p, problem.q)
    y = state.y + z - x
    _check_finite(x, z, y)
    state.x, state.z, state.y = x, z, y
    state.k += 1
    return state


@dataclass
class AdmmReferenceState:
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray
    k: int = 0


def admm_reference_init(problem: TransportProblem, rho: float, x0=None, w0=None) -> AdmmReferenceState:
    """ADMM state; defaults are ``x0 = p q^T`` and ``w0 = 0``."""
    x = product_coupling(problem, np.float64) if x0 is None else np.array(x0, dtype=np.float64)
    w = np.zeros_like(x) if w0 is None else np.array(w0, dtype=np.float64)
    if x.shape != problem.shape or w.shape != problem.shape:
        raise ShapeMismatch("x0/w0 shapes do not match the problem")
    return AdmmReferenceState(x=x, z=x.copy(), w=w)


def admm_from_dr(problem: TransportProblem, rho: float, y0=None) -> AdmmReferenceState:
    """ADMM state whose x-sequence reproduces DR started at ``y0``.

    With ``x_0 = [y_0 - rho C]_+`` and ``w_0 = (x_0 - y_0) / rho`` the ADMM
    iterate ``x_j`` equals the DR iterate ``X_{j+1}``.
    """
    _check_rho(rho)
    y = product_coupling(problem, np.float64) if y0 is None else np.array(y0, dtype=np.float64)
    x = prox_nonneg_linear(y, problem.cost, rho)
    return AdmmReferenceState(x=x, z=x.copy(), w=(x - y) / rho)


def admm_reference_step(state: AdmmReferenceState, problem: TransportProblem, rho: float) -> AdmmReferenceState:
    """``z = P(x + rho w)``, ``x = prox(z - rho w)``, ``w += (x - z) / rho``."""
    _check_rho(rho)
    z = project_coupling(state.x + rho * state.w, problem.p, problem.q)
    x = prox_nonneg_linear(z - rho * state.w, problem.cost, rho)
    w = state.w + (x - z) / rho
    _check_finite(x, z, w)
    state.x, state.z, state.w = x, z, w
    state.k += 1
    return state


# ----------------------------------------------------------------- Sinkhorn


@dataclass
class SinkhornState:
    kernel: np.ndarray
    u: np.ndarray
    v: np.ndarray
    eta: float
    k: int = 0


def _bad(a) -> bool:
    return not (np.all(np.isfinite(a)) and np.all(a > 0))


def sinkhorn_solve(problem: TransportProblem, eta: float, tol: float = 1e-4, max_iters: int = 10_000,
                   precision: str = "f64", check_every: int = 10) -> SolveResult:
    """Plain (not log-domain) Sinkhorn scaling.

    The marginal error ``||u*(Kv) - p|| + ||v*(K^T u) - q||`` is evaluated on
    iterations 1, 1 + check_every, 1 + 2*check_every, ... Underflowed kernel
    entries are allowed; a scaling vector that hits 0, inf or nan ends the
    run with ``NUMERICAL_FAILURE``. Dual variables are ``eta*log(u)`` and
    ``eta*log(v)``; when those are not finite the certificate is None and
    ``r_dual``/``gap`` are nan.
    """
    t_start = time.perf_counter()
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    problem = validate_problem(problem)
    if np.any(problem.p <= 0) or np.any(problem.q <= 0):
        raise ZeroMarginal("Sinkhorn needs strictly positive marginals")
    dtype = np.float32 if precision == "f32" else np.float64
    cost = problem.cost.astype(dtype)
    p = problem.p.astype(dtype)
    q = problem.q.astype(dtype)
    with np.errstate(all="ignore"):
        kernel = np.exp(-cost / dtype(eta))
    st = SinkhornState(kernel, np.ones(problem.m, dtype=dtype), np.ones(problem.n, dtype=dtype), float(eta))
    trace = SolveTrace()
    status = Status.MAX_ITERS
    reason = ""
    with np.errstate(all="ignore"):
        for k in range(1, max_iters + 1):
            st.u = p / (kernel @ st.v)
            st.v = q / (kernel.T @ st.u)
            st.k = k
            if _bad(st.u) or _bad(st.v):
                status = Status.NUMERICAL_FAILURE
                reason = f"scaling vector left (0, inf) at iteration {k}"
                break
            if (k - 1) % check_every == 0:
                err = float(np.linalg.norm(st.u * (kernel @ st.v) - p)
                            + np.linalg.norm(st.v * (kernel.T @ st.u) - q))
                trace.append(k, r_primal=err)
                if err <= tol:
                    status = Status.CONVERGED
                    break
    trace.iterations = st.k
    trace.termination = status.value
    if status is Status.NUMERICAL_FAILURE:
        trace.wall_time = time.perf_counter() - t_start
        nan_report = ResidualReport(math.nan, math.nan, math.nan, math.nan)
        return SolveResult(TransportPlan(np.full(problem.shape, np.nan)), None, nan_report, trace, status,
                           solver="sinkhorn", reason=reason)
    plan = (st.u[:, None] * kernel * st.v[None, :]).astype(np.float64)
    with np.errstate(divide="ignore"):
        mu = eta * np.log(st.u.astype(np.float64))
        nu = eta * np.log(st.v.astype(np.float64))
    cert = None
    if np.all(np.isfinite(mu)) and np.all(np.isfinite(nu)):
        cert = DualCertificate(mu, nu, float(eta))
        report = residual_report(problem, plan, cert)
    else:
        r = plan.sum(axis=1) - problem.p
        s = plan.sum(axis=0) - problem.q
        report = ResidualReport(float(np.sqrt(r @ r + s @ s)), math.nan, math.nan, objective(problem, plan))
    if len(trace):
        trace.objective[-1] = report.objective
    trace.wall_time = time.perf_counter() - t_start
    return SolveResult(TransportPlan(plan), cert, report, trace, status, solver="sinkhorn", reason=reason)


# ------------------------------------------------------------------ exact LP


class LpSolution(NamedTuple):
    objective: float
    plan: np.ndarray
    mu: np.ndarray
    nu: np.ndarray


LP_MAX_CELLS = 400


def _northwest_corner(p, q):
    """Initial basis: a staircase of exactly m + n - 1 cells."""
    m, n = len(p), len(q)
    basis = []
    rp, rq = p.copy(), q.copy()
    i = j = 0
    while True:
        basis.append((i, j))
        amt = min(rp[i], rq[j])
        rp[i] -= amt
        rq[j] -= amt
        if i == m - 1 and j == n - 1:
            return basis
        if i == m - 1:
            j += 1
        elif j == n - 1 or rp[i] <= rq[j]:
            i += 1
        else:
            j += 1


def _adjacency(basis, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append((m + j, (i, j)))
        adj[m + j].append((i, (i, j)))
    return adj


def _tree_flows(basis, p, q):
    """Flows on the spanning-tree basis, found by peeling leaves."""
    m, n = len(p), len(q)
    adj = _adjacency(basis, m, n)
    rem = np.concatenate([p, q]).astype(float)
    live = [set(cell for _, cell in adj[v]) for v in range(m + n)]
    flows = {}
    leaves = deque(v for v in range(m + n) if len(live[v]) == 1)
    while leaves:
        v = leaves.popleft()
        if len(live[v]) != 1:
            continue
        (cell,) = live[v]
        other = cell[0] if v >= m else m + cell[1]
        flows[cell] = rem[v]
        rem[other] -= rem[v]
        rem[v] = 0.0
        live[v].clear()
        live[other].discard(cell)
        if len(live[other]) == 1:
            leaves.append(other)
    return flows


def _potentials(basis, cost, m, n):
    adj = _adjacency(basis, m, n)
    pot = [None] * (m + n)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w, (i, j) in adj[v]:
            if pot[w] is None:
                pot[w] = cost[i, j] - pot[v]
                queue.append(w)
    return np.array(pot[:m]), np.array(pot[m:])


def _tree_path(basis, m, n, start, goal):
    """Cells along the tree path from node ``start`` to node ``goal``."""
    adj = _adjacency(basis, m, n)
    parent = {start: None}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        if v == goal:
            break
        for w, cell in adj[v]:
            if w not in parent:
                parent[w] = (v, cell)
                queue.append(w)
    path = []
    v = goal
    while parent[v] is not None:
        v, cell = parent[v]
        path.append(cell)
    return path[::-1]


def lp_exact(problem: TransportProblem, max_pivots: Optional[int] = None) -> LpSolution:
    """Solve a small OT problem exactly with the transportation simplex.

    Starts from the northwest-corner basis, prices with potentials
    ``u_i + v_j = C_ij`` on basic cells and pivots with Bland's rule, which
    rules out cycling on degenerate bases. Flows are recomputed from the
    tree after every pivot so rounding does not accumulate.

    Raises:
        TooLarge: if ``m * n`` exceeds 400.
    """
    m, n = problem.shape
    if m * n > LP_MAX_CELLS:
        raise TooLarge(f"lp_exact is limited to {LP_MAX_CELLS} cells, got {m}x{n}")
    cost = np.asarray(problem.cost, dtype=np.float64)
    p = np.asarray(problem.p, dtype=np.float64)
    q = np.asarray(problem.q, dtype=np.float64)
    eps = 1e-12 * (1.0 + float(np.abs(cost).max()))
    basis = _northwest_corner(p, q)
    flows = _tree_flows(basis, p, q)
    if max_pivots is None:
        max_pivots = 50 * (m * n) ** 2 + 100
    for _ in range(max_pivots):
        u, v = _potentials(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        in_basis = set(basis)
        entering = None
        for i in range(m):
            for j in range(n):
                if (i, j) not in in_basis and reduced[i, j] < -eps:
                    entering = (i, j)
                    break
            if entering:
                break
        if entering is None:
            break
        i, j = entering
        # Path from column j back to row i; with the entering cell it closes
        # a cycle whose cells alternate between losing and gaining flow.
        path = _tree_path(basis, m, n, m + j, i)
        losing = path[0::2]
        theta = min(max(flows[c], 0.0) for c in losing)
        leaving = min(c for c in losing if max(flows[c], 0.0) == theta)
        basis.remove(leaving)
        basis.append(entering)
        flows = _tree_flows(basis, p, q)
    else:
        raise RuntimeError(f"transportation simplex did not finish in {max_pivots} pivots")
    plan = np.zeros((m, n))
    for (i, j), f in flows.items():
        plan[i, j] = max(f, 0.0)
    u, v = _potentials(basis, cost, m, n)
    obj = math.fsum((cost * plan).ravel())
    return LpSolution(obj, plan, u, v)


# ------------------------------------------------------- reference runners


def split_rank_two(d) -> tuple:
    """``(mu, nu)`` with ``mu_i + nu_j`` closest to ``d`` in the least-squares sense.

    Exact when ``d`` already has the form ``mu e^T + f nu^T``; the free
    constant is split evenly between the two vectors.
    """
    d = np.asarray(d, dtype=np.float64)
    half = d.mean() / 2.0
    return d.mean(axis=1) - half, d.mean(axis=0) - half


def run_reference(problem: TransportProblem, kind: str, rho: float, tol: float = 1e-6,
                  max_iters: int = 10_000, check_every: int = 10) -> SolveResult:
    """Iterate the three-matrix DR (``"dr"``) or ADMM (``"admm"``) form to tolerance.

    Every ``check_every`` iterations the exact residual report is formed from
    the current plan and the dual read off the iterates (``(Y - X)/rho`` for
    DR, ``-w`` for ADMM).
    """
    t_start = time.perf_counter()
    problem = validate_problem(problem)
    if kind == "dr":
        state = dr_reference_init(problem)
        step = dr_reference_step
    elif kind == "admm":
        state = admm_from_dr(problem, rho)
        step = admm_reference_step
    else:
        raise ValueError(f"unknown reference kind {kind!r}")

    def certificate():
        d = (state.y - state.x) / rho if kind == "dr" else -state.w
        return DualCertificate(*split_rank_two(d), rho)

    trace = SolveTrace()
    status = Status.MAX_ITERS
    reason = ""
    report = None
    try:
        for k in range(1, max_iters + 1):
            step(state, problem, rho)
            if k % check_every == 0 or k == max_iters:
                report = residual_report(problem, state.x, certificate())
                trace.append(k, report.r_primal, report.r_dual, report.gap, report.objective)
                if max(report.r_primal, report.r_dual, report.gap) <= tol:
                    status = Status.CONVERGED
                    break
    except NonFiniteIterate as exc:
        status = Status.NUMERICAL_FAILURE
        reason = str(exc)
    trace.iterations = state.k
    trace.termination = status.value
    trace.wall_time = time.perf_counter() - t_start
    if status is Status.NUMERICAL_FAILURE:
        nan_report = ResidualReport(math.nan, math.nan, math.nan, math.nan)
        return SolveResult(TransportPlan(np.full(problem.shape, np.nan)), None, nan_report, trace, status,
                           solver=f"{kind}-reference", reason=reason)
    cert = certificate()
    if report is None:
        report = residual_report(problem, state.x, cert)
    return SolveResult(TransportPlan(state.x), cert, report, trace, status, solver=f"{kind}-reference")
