"""Douglas-Rachford splitting for OT with a single matrix variable.

Each iteration is one sweep over the matrix followed by O(m + n) vector
work::

    X_{k+1}   = [X_k + phi_k e^T + f varphi_k^T - rho C]_+
    r, s      = X_{k+1} e - p,  X_{k+1}^T f - q,   beta = sum(r) / (m + n)
    phi_{k+1} = (a_k - 2 r + (2 beta - alpha_k)) / n
    varphi_{k+1} = (b_k - 2 s + (2 beta - alpha_k)) / m
    a, b, alpha  -= r, s, beta

``phi/rho`` and ``varphi/rho`` converge to optimal dual variables, which is
what makes the primal-dual stopping test free.

Two engines run the same recursion. ``"fused"`` keeps X in the buffer and
applies the rank-one terms inside the next tiled pass; its whole loop runs
in compiled code so small problems are not dominated by interpreter
overhead. ``"reference"`` keeps ``Y_k = X_k + phi_k e^T + f varphi_k^T`` in
the buffer and uses plain numpy sweeps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numba
import numpy as np
from numba import njit

from . import fused
from .core import (
    DualCertificate,
    ResidualReport,
    SolveResult,
    SolveTrace,
    Status,
    TransportPlan,
    TransportProblem,
    dual_infeasibility_sq_rows,
    objective,
    product_coupling,
    residual_report,
    validate_problem,
)
from .errors import InvalidInitialPlan, NonFiniteIterate, NonPositiveRho, ShapeMismatch

PRECISIONS = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class DrotConfig:
    """Solver parameters.

    ``rho = rho0 / (m + n)`` unless ``rho_override`` is given, in which case
    it is used as is. ``relative=True`` divides the primal residual by
    ``1 + ||p|| + ||q||`` and the gap by ``1 + |objective|`` before comparing.
    """

    rho0: float = 2.0
    rho_override: Optional[float] = None
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    tol_gap: float = 1e-4
    max_iters: int = 10_000
    check_every: int = 1
    deterministic: bool = True
    precision: str = "f64"
    engine: str = "fused"
    skip_cost: bool = False
    relative: bool = False
    workers: Optional[int] = None
    bs: int = fused.DEFAULT_BS
    ws: int = fused.DEFAULT_WS
    record_trace: bool = True

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.engine not in ("fused", "reference"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.skip_cost and self.engine != "fused":
            raise ValueError("skip_cost requires the fused engine")
        if self.max_iters < 1 or self.check_every < 1:
            raise ValueError("max_iters and check_every must be positive")
        for name in ("tol_primal", "tol_dual", "tol_gap"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.rho_override is None:
            if not self.rho0 > 0:
                raise NonPositiveRho(f"rho0 must be positive, got {self.rho0}")
        elif not self.rho_override > 0:
            raise NonPositiveRho(f"rho must be positive, got {self.rho_override}")

    @property
    def dtype(self):
        return np.dtype(PRECISIONS[self.precision])

    def rho(self, m: int, n: int) -> float:
        if self.rho_override is not None:
            return float(self.rho_override)
        return float(self.rho0) / (m + n)

    def with_tol(self, tol: float) -> "DrotConfig":
        return replace(self, tol_primal=tol, tol_dual=tol, tol_gap=tol)

    @classmethod
    def log_rule(cls, m: int, **kwargs) -> "DrotConfig":
        """``rho0 = 1/log(m)``: shortens the all-zero warm-up on large problems."""
        return cls(rho0=1.0 / math.log(max(m, 3)), **kwargs)


@dataclass
class DrotState:
    """Mutable iteration state of one solve.

    ``xy`` is the only ``m x n`` array. With the fused engine it holds
    ``X_k`` (or ``X_k - rho C`` when ``cost_folded``) and ``Y_k`` is implied
    by the vectors; with the reference engine it holds ``Y_k`` and the
    clamped ``X_k`` is kept in ``x``.
    """

    xy: np.ndarray
    phi: np.ndarray
    varphi: np.ndarray
    a: np.ndarray
    b: np.ndarray
    alpha: float
    r: np.ndarray
    s: np.ndarray
    beta: float
    k: int = 0
    cost_folded: bool = False
    engine: str = "fused"
    x: Optional[np.ndarray] = None
    fixed_point_residual: float = math.nan


def init_state(problem: TransportProblem, config: DrotConfig, x0=None) -> DrotState:
    """State before the first iteration; ``X_0 = p q^T`` unless given."""
    dtype = config.dtype
    m, n = problem.shape
    if x0 is None:
        xy = product_coupling(problem, dtype)
    else:
        xy = np.array(x0, dtype=dtype, order="F", copy=True)
        if xy.shape != (m, n):
            raise ShapeMismatch(f"initial plan has shape {xy.shape}, expected {(m, n)}")
        if not np.all(np.isfinite(xy)):
            raise InvalidInitialPlan("initial plan has non-finite entries")
        if np.any(xy < 0):
            raise InvalidInitialPlan("initial plan has negative entries")
    p = problem.p.astype(dtype)
    q = problem.q.astype(dtype)
    a = xy.sum(axis=1) - p
    b = xy.sum(axis=0) - q
    alpha = float(a.sum(dtype=np.float64)) / (m + n)
    state = DrotState(
        xy=xy,
        phi=np.zeros(m, dtype=dtype),
        varphi=np.zeros(n, dtype=dtype),
        a=a,
        b=b,
        alpha=alpha,
        r=a.copy(),
        s=b.copy(),
        beta=alpha,
        engine=config.engine,
    )
    if config.engine == "reference":
        state.x = xy.copy(order="F")
    return state


# ------------------------------------------------------------ compiled parts


@njit(cache=True)
def _advance(row_sums, col_sums, p, q, a, b, alpha, phi, varphi, r, s):
    """Residuals of the new X and the phi/varphi/a/b recursions, in place.

    Returns ``(alpha_next, beta)``.
    """
    m = a.size
    n = b.size
    tot = 0.0
    for i in range(m):
        r[i] = row_sums[i] - p[i]
        tot += r[i]
    for j in range(n):
        s[j] = col_sums[j] - q[j]
    beta = tot / (m + n)
    coef = 2.0 * beta - alpha
    for i in range(m):
        phi[i] = (a[i] - 2.0 * r[i] + coef) / n
        a[i] -= r[i]
    for j in range(n):
        varphi[j] = (b[j] - 2.0 * s[j] + coef) / m
        b[j] -= s[j]
    return alpha - beta, beta


@njit(cache=True)
def _fixed_point_residual(delta_sq, r_new, r_old, s_new, s_old, phi_new, phi_old, vp_new, vp_old):
    """``||Y_{k+1} - Y_k||_F`` from ``||X_{k+1} - X_k||^2`` and vector data.

    ``Y_{k+1} - Y_k = dX + dphi e^T + f dvarphi^T``; the cross term only
    needs the row/column sums of ``dX``, which are ``r_{k+1} - r_k`` and
    ``s_{k+1} - s_k``.
    """
    m = phi_new.size
    n = vp_new.size
    cross = 0.0
    sq_phi = 0.0
    sum_phi = 0.0
    for i in range(m):
        d = float(phi_new[i]) - float(phi_old[i])
        cross += d * (float(r_new[i]) - float(r_old[i]))
        sq_phi += d * d
        sum_phi += d
    sq_vp = 0.0
    sum_vp = 0.0
    for j in range(n):
        d = float(vp_new[j]) - float(vp_old[j])
        cross += d * (float(s_new[j]) - float(s_old[j]))
        sq_vp += d * d
        sum_vp += d
    tot = delta_sq + 2.0 * cross + n * sq_phi + m * sq_vp + 2.0 * sum_phi * sum_vp
    return math.sqrt(max(0.0, tot))


@njit(cache=True)
def _residual_scalars(p, q, phi, varphi, r, s, rho):
    """``(r_primal, dual objective)`` from the vectors alone."""
    rp = 0.0
    dv = 0.0
    for i in range(r.size):
        rp += float(r[i]) * float(r[i])
        dv += p[i] * float(phi[i])
    for j in range(s.size):
        rp += float(s[j]) * float(s[j])
        dv += q[j] * float(varphi[j])
    return math.sqrt(rp), dv / rho


# Codes returned by the compiled loop.
_RAN_OUT = 0
_CANDIDATE = 1
_NONFINITE = 2


@njit(cache=True)
def _fused_loop(x, cost, p64, q64, p, q, rho, rho_t, phi, varphi, a, b, r, s, scal,
                rs, re_, cs, ce, rb, cb, use_parallel,
                rowpart, colpart, tvals, bad, cnt_xr, cnt_xw, cnt_cr, instrument,
                skip_cost, n_iters, check_every, tol_p, tol_d, tol_g, relative, pq_norm,
                want_trace, t_rp, t_rd, t_gap, t_obj, t_fpr, row0):
    """Run up to ``n_iters`` fused iterations.

    ``scal`` holds ``[alpha, beta, folded, k, prev_dual_value, last_fpr]``
    and is updated in place. Trace row ``t`` describes iteration ``t + 1``;
    the first row written is ``row0``. Stops early, after the iteration,
    when the cheap stopping test passes (the caller confirms it) or when a
    non-finite entry appears.

    Returns ``(code, iterations run)``.
    """
    m = a.size
    n = b.size
    mu = np.empty(m, dtype=x.dtype)
    nu = np.empty(n, dtype=x.dtype)
    phi_old = np.empty_like(phi)
    vp_old = np.empty_like(varphi)
    r_old = np.empty_like(r)
    s_old = np.empty_like(s)
    for step in range(n_iters):
        it = int(scal[3]) + 1
        row = row0 + step
        check = it % check_every == 0
        folded = scal[2] != 0.0
        reads_cost = not (skip_cost and folded)
        write_folded = skip_cost and not folded
        want_dual = reads_cost and (check or want_trace)
        if want_dual:
            for i in range(m):
                mu[i] = phi[i] / rho_t
            for j in range(n):
                nu[j] = varphi[j] / rho_t
        if use_parallel:
            fused._kernel_parallel(x, cost, phi, varphi, rho_t, mu, nu, rs, re_, cs, ce, rb, cb,
                                   reads_cost, write_folded, want_dual, True, instrument,
                                   rowpart, colpart, tvals[0], tvals[1], tvals[2], tvals[3], tvals[4],
                                   bad, cnt_xr, cnt_xw, cnt_cr)
        else:
            fused._kernel_serial(x, cost, phi, varphi, rho_t, mu, nu, rs, re_, cs, ce, rb, cb,
                                 reads_cost, write_folded, want_dual, True, instrument,
                                 rowpart, colpart, tvals[0], tvals[1], tvals[2], tvals[3], tvals[4],
                                 bad, cnt_xr, cnt_xw, cnt_cr)
        if bad.sum() > 0:
            return _NONFINITE, step
        u, v, tot = fused._merge(rowpart, colpart, tvals[:4])
        if skip_cost:
            scal[2] = 1.0 if write_folded else 0.0
        phi_old[:] = phi
        vp_old[:] = varphi
        r_old[:] = r
        s_old[:] = s
        alpha_next, beta = _advance(u, v, p, q, a, b, scal[0], phi, varphi, r, s)
        scal[0] = alpha_next
        scal[1] = beta
        scal[3] = it
        if folded:
            fpr = np.nan
        else:
            fpr = _fixed_point_residual(float(tot[3]), r, r_old, s, s_old, phi, phi_old, varphi, vp_old)
        scal[5] = fpr
        r_primal, dual_value = _residual_scalars(p64, q64, phi, varphi, r, s, rho)
        obj = float(tot[0]) if reads_cost else np.nan
        gap = abs(obj - dual_value)
        rd_prev = math.sqrt(float(tot[2])) if want_dual else np.nan
        if want_trace:
            t_rp[row] = r_primal
            t_rd[row] = np.nan
            t_gap[row] = gap
            t_obj[row] = obj
            t_fpr[row] = fpr
            if row > 0:
                if want_dual:
                    t_rd[row - 1] = rd_prev
                if skip_cost and reads_cost and np.isnan(t_obj[row - 1]):
                    t_obj[row - 1] = float(tot[1])
                    t_gap[row - 1] = abs(float(tot[1]) - scal[4])
        scal[4] = dual_value
        if check and reads_cost:
            rp_t = r_primal
            gap_t = gap
            if relative:
                rp_t = r_primal / (1.0 + pq_norm)
                gap_t = gap / (1.0 + abs(obj))
            if rp_t <= tol_p and rd_prev <= tol_d and gap_t <= tol_g:
                return _CANDIDATE, step + 1
    return _RAN_OUT, n_iters


class _FusedRunner:
    """Owns the tile plan, scratch buffers and packed scalars of a fused solve."""

    def __init__(self, state: DrotState, problem: TransportProblem, config: DrotConfig, rho: float):
        self.state = state
        self.config = config
        self.rho = float(rho)
        m, n = problem.shape
        dtype = config.dtype
        if state.xy.dtype != dtype:
            raise ShapeMismatch(f"state holds {state.xy.dtype}, config asks for {dtype}")
        self.rho_t = dtype.type(rho)
        self.plan = fused.plan_tiles(m, n, config.bs, config.ws, config.workers)
        self.use_parallel = self.plan.workers > 1 and self.plan.n_tiles > 1
        self.cost = np.asfortranarray(problem.cost.astype(dtype, copy=False))
        self.p64 = np.ascontiguousarray(problem.p, dtype=np.float64)
        self.q64 = np.ascontiguousarray(problem.q, dtype=np.float64)
        self.p = self.p64.astype(dtype)
        self.q = self.q64.astype(dtype)
        self.pq_norm = float(np.linalg.norm(self.p64) + np.linalg.norm(self.q64))
        self.wsp = fused._workspace(self.plan, dtype)
        self.scal = np.array([state.alpha, state.beta, float(state.cost_folded), float(state.k), 0.0, math.nan])
        self.empty = np.empty(0)

    def run(self, n_iters, trace_cols=None, row0=0, counters=None, check=True):
        st, cfg, plan, wsp = self.state, self.config, self.plan, self.wsp
        if self.use_parallel:
            numba.set_num_threads(min(plan.workers, numba.config.NUMBA_NUM_THREADS))
        if counters is not None:
            counters.reset_pass()
            cnt = (counters.x_reads, counters.x_writes, counters.cost_reads)
        else:
            cnt = (wsp.dummy_counts,) * 3
        cols = trace_cols if trace_cols is not None else (self.empty,) * 5
        never = -math.inf
        # Scalars are coerced so the compiled loop sees one signature only.
        tols = tuple(float(t) for t in (cfg.tol_primal, cfg.tol_dual, cfg.tol_gap)) if check else (never,) * 3
        code, done = _fused_loop(
            st.xy, self.cost, self.p64, self.q64, self.p, self.q, self.rho, self.rho_t,
            st.phi, st.varphi, st.a, st.b, st.r, st.s, self.scal,
            plan.row_start, plan.row_stop, plan.col_start, plan.col_stop, plan.row_band, plan.col_band,
            self.use_parallel, wsp.rowpart, wsp.colpart, wsp.tvals, wsp.bad, cnt[0], cnt[1], cnt[2],
            counters is not None, bool(cfg.skip_cost), int(n_iters), int(cfg.check_every) if check else 1 << 62, tols[0], tols[1],
            tols[2], bool(cfg.relative), self.pq_norm, trace_cols is not None, cols[0], cols[1], cols[2],
            cols[3], cols[4], int(row0),
        )
        st.alpha, st.beta = float(self.scal[0]), float(self.scal[1])
        st.cost_folded = bool(self.scal[2])
        st.k = int(self.scal[3])
        st.fixed_point_residual = float(self.scal[5])
        if counters is not None:
            counters.record()
        if code == _NONFINITE:
            raise NonFiniteIterate(f"non-finite values in {int(wsp.bad.sum())} tile(s) at iteration {st.k + 1}")
        return code, done


# --------------------------------------------------------------- public API


def drot_step(state: DrotState, problem: TransportProblem, config: DrotConfig,
              counters: Optional[fused.AccessCounters] = None) -> DrotState:
    """Run one iteration in place and return the state.

    ``counters`` (fused engine only) records per-element accesses of the pass.
    """
    rho = config.rho(*problem.shape)
    if state.engine == "reference":
        _reference_step(state, problem, rho)
    else:
        _FusedRunner(state, problem, config, rho).run(1, counters=counters, check=False)
    return state


def _reference_step(state: DrotState, problem: TransportProblem, rho: float):
    dtype = state.xy.dtype
    cost = problem.cost.astype(dtype, copy=False)
    p = problem.p.astype(dtype)
    q = problem.q.astype(dtype)
    y_old = state.xy
    x_new = np.maximum(y_old - dtype.type(rho) * cost, 0)
    if not np.all(np.isfinite(x_new)):
        raise NonFiniteIterate("non-finite entries in the reference update")
    state.alpha, state.beta = _advance(x_new.sum(axis=1), x_new.sum(axis=0), p, q, state.a, state.b,
                                       state.alpha, state.phi, state.varphi, state.r, state.s)
    y_new = x_new + state.phi[:, None]
    y_new += state.varphi[None, :]
    diff = (y_new - y_old).astype(np.float64)
    state.fixed_point_residual = float(np.sqrt(np.sum(diff * diff)))
    state.xy = np.asfortranarray(y_new)
    state.x = x_new
    state.k += 1


def recover_duals(state: DrotState, rho: float) -> DualCertificate:
    return DualCertificate(state.phi.astype(np.float64) / rho, state.varphi.astype(np.float64) / rho, rho)


def current_plan(state: DrotState, problem: TransportProblem, rho: float) -> np.ndarray:
    """Materialize ``X_k`` from the state (copy)."""
    if state.engine == "reference":
        return state.x.copy(order="F")
    buf = fused.FoldedArray(state.xy, state.cost_folded)
    return fused.unfold(buf, problem.cost, rho)


def current_y(state: DrotState, problem: TransportProblem, rho: float) -> np.ndarray:
    """Materialize ``Y_k = X_k + phi_k e^T + f varphi_k^T`` (copy)."""
    if state.engine == "reference":
        return state.xy.copy(order="F")
    x = current_plan(state, problem, rho)
    return x + state.phi[:, None] + state.varphi[None, :]


def state_identity_errors(state: DrotState, problem: TransportProblem, rho: float) -> dict:
    """How far ``a, b, alpha`` are from ``Y e - p``, ``Y^T f - q`` and ``sum(a)/(m+n)``."""
    y = current_y(state, problem, rho).astype(np.float64)
    m, n = problem.shape
    a_true = y.sum(axis=1) - problem.p
    b_true = y.sum(axis=0) - problem.q
    return {
        "a": float(np.max(np.abs(state.a - a_true))),
        "b": float(np.max(np.abs(state.b - b_true))),
        "alpha": abs(state.alpha - float(a_true.sum()) / (m + n)),
        "alpha_cols": abs(state.alpha - float(b_true.sum()) / (m + n)),
    }


def ergodic_objective(prev_avg: float, value: float, k: int) -> float:
    """Running mean update ``avg_k = avg_{k-1} + (value - avg_{k-1}) / k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return float(value)
    return prev_avg + (value - prev_avg) / k


class _TraceBuffer:
    """Growable column arrays; converted to a :class:`SolveTrace` at the end."""

    NAMES = ("r_primal", "r_dual", "gap", "objective", "fixed_point_residual")

    def __init__(self, capacity=1024):
        self.cols = np.full((len(self.NAMES), max(capacity, 1)), np.nan)
        self.size = 0

    def reserve(self, extra):
        need = self.size + extra
        if need > self.cols.shape[1]:
            grown = np.full((len(self.NAMES), max(need, 2 * self.cols.shape[1])), np.nan)
            grown[:, : self.size] = self.cols[:, : self.size]
            self.cols = grown

    def col(self, name):
        return self.cols[self.NAMES.index(name)]

    def to_trace(self) -> SolveTrace:
        tr = SolveTrace()
        k = self.size
        tr.iteration = list(range(1, k + 1))
        for name in self.NAMES:
            setattr(tr, name, self.col(name)[:k].tolist())
        erg = []
        avg = math.nan
        for i, v in enumerate(tr.objective, start=1):
            avg = ergodic_objective(avg, v, i)
            erg.append(avg)
        tr.ergodic_objective = erg
        return tr


def _within(config, r_primal, r_dual, gap, obj, pq_norm):
    if config.relative:
        r_primal = r_primal / (1.0 + pq_norm)
        gap = gap / (1.0 + abs(obj))
    return r_primal <= config.tol_primal and r_dual <= config.tol_dual and gap <= config.tol_gap


def solve(problem: TransportProblem, config: DrotConfig = DrotConfig(), x0=None,
          callback: Optional[Callable[[DrotState], None]] = None) -> SolveResult:
    """Run DROT until the three residuals meet their tolerances.

    The dual infeasibility of ``(phi_k, varphi_k)`` is accumulated during the
    pass that produces ``X_{k+1}``, so iteration ``k+1`` is tested with the
    previous dual residual standing in for its own. A candidate stop is
    confirmed with one exact residual evaluation before it is accepted.
    With ``skip_cost`` only iterations that read C are tested.

    ``callback`` is called with the state after every iteration. It forces
    one compiled call per iteration, so it is slow on small problems.

    Returns:
        A :class:`SolveResult`. On ``NUMERICAL_FAILURE`` the certificate is
        None and the report is all nan.
    """
    t_start = time.perf_counter()
    problem = validate_problem(problem)
    m, n = problem.shape
    rho = config.rho(m, n)
    work = problem.astype(config.dtype)
    state = init_state(work, config, x0)
    pq_norm = float(np.linalg.norm(problem.p) + np.linalg.norm(problem.q))
    buf = _TraceBuffer(min(config.max_iters, 4096)) if config.record_trace else None
    status = Status.MAX_ITERS
    reason = ""
    final_report = None
    final_plan = None
    runner = _FusedRunner(state, work, config, rho) if config.engine == "fused" else None

    def confirm():
        x_now = current_plan(state, work, rho)
        report = residual_report(problem, x_now, recover_duals(state, rho))
        if buf is not None:
            buf.col("r_dual")[state.k - 1] = report.r_dual
        if _within(config, report.r_primal, report.r_dual, report.gap, report.objective, pq_norm):
            return x_now, report
        return None, None

    try:
        while state.k < config.max_iters:
            if runner is not None:
                chunk = 1 if callback is not None else min(config.max_iters - state.k, 65536)
                cols = None
                if buf is not None:
                    buf.reserve(chunk)
                    cols = tuple(buf.cols)
                try:
                    code, _ = runner.run(chunk, cols, row0=state.k)
                finally:
                    if buf is not None:
                        buf.size = state.k
                candidate = code == _CANDIDATE
            else:
                _reference_step(state, work, rho)
                candidate = _reference_bookkeeping(state, problem, config, rho, buf, pq_norm)
            if callback is not None:
                callback(state)
            if candidate:
                final_plan, final_report = confirm()
                if final_plan is not None:
                    status = Status.CONVERGED
                    break
    except NonFiniteIterate as exc:
        status = Status.NUMERICAL_FAILURE
        reason = str(exc)

    cert = None
    if status is Status.NUMERICAL_FAILURE:
        final_report = ResidualReport(math.nan, math.nan, math.nan, math.nan)
        final_plan = np.full((m, n), np.nan)
    else:
        cert = recover_duals(state, rho)
        if final_plan is None:
            final_plan = current_plan(state, work, rho)
            final_report = residual_report(problem, final_plan, cert)
        if buf is not None and state.k:
            last = state.k - 1
            if math.isnan(buf.col("r_dual")[last]):
                buf.col("r_dual")[last] = final_report.r_dual
            if math.isnan(buf.col("objective")[last]):
                buf.col("objective")[last] = final_report.objective
                buf.col("gap")[last] = final_report.gap
    trace = buf.to_trace() if buf is not None else SolveTrace()
    trace.iterations = state.k
    trace.termination = status.value
    trace.wall_time = time.perf_counter() - t_start
    plan_out = TransportPlan(np.asarray(final_plan, dtype=np.float64))
    return SolveResult(plan_out, cert, final_report, trace, status, solver="drot", reason=reason)


def _reference_bookkeeping(state, problem, config, rho, buf, pq_norm) -> bool:
    """Trace row for the reference engine; True when the stopping test passes."""
    it = state.k
    check = it % config.check_every == 0
    r_primal, dual_value = _residual_scalars(problem.p, problem.q, state.phi, state.varphi,
                                             state.r, state.s, rho)
    obj = objective(problem, state.x)
    gap = abs(obj - dual_value)
    r_dual = math.nan
    if check or buf is not None:
        mu = state.phi.astype(np.float64) / rho
        nu = state.varphi.astype(np.float64) / rho
        r_dual = math.sqrt(float(np.sum(dual_infeasibility_sq_rows(problem.cost, mu, nu))))
    if buf is not None:
        buf.reserve(1)
        row = it - 1
        for name, v in (("r_primal", r_primal), ("r_dual", r_dual), ("gap", gap), ("objective", obj),
                        ("fixed_point_residual", state.fixed_point_residual)):
            buf.col(name)[row] = v
        buf.size = it
    return check and _within(config, r_primal, r_dual, gap, obj, pq_norm)
