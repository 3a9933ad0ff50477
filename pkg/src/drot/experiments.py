"""Accuracy profiles and per-iteration timing tables."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import fused
from .core import SolveResult, Status, TransportProblem
from .errors import TooLarge
from .probgen import GaussianSpec, gen_gaussian_problem
from .reference import LP_MAX_CELLS, lp_exact, sinkhorn_solve
from .solver import DrotConfig, _advance, _FusedRunner, init_state, solve

PROFILE_HEADER = ("solver", "eps", "fraction", "solved", "total", "failures", "reference")


@dataclass(frozen=True)
class SolverSpec:
    """A named solver setting for suites.

    ``kind`` is ``"drot"``, ``"drot-reference"`` or ``"sinkhorn"``. ``params``
    are passed to :class:`DrotConfig` or to :func:`sinkhorn_solve`.
    """

    kind: str
    params: dict = field(default_factory=dict)
    label: str = ""

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "sinkhorn":
            return f"sinkhorn(eta={self.params.get('eta')},{self.params.get('precision', 'f64')})"
        return self.kind

    def run(self, problem: TransportProblem) -> SolveResult:
        if self.kind in ("drot", "drot-fused"):
            return solve(problem, DrotConfig(**self.params))
        if self.kind == "drot-reference":
            return solve(problem, DrotConfig(engine="reference", **self.params))
        if self.kind == "sinkhorn":
            return sinkhorn_solve(problem, **self.params)
        raise ValueError(f"unknown solver kind {self.kind!r}")


def profile_termination(kind: str, violation: float = 1e-4, max_iters: int = 1000, **extra) -> SolverSpec:
    """Solver spec that stops on constraint violation or an iteration cap."""
    if kind == "sinkhorn":
        return SolverSpec("sinkhorn", dict(tol=violation, max_iters=max_iters, **extra))
    params = dict(tol_primal=violation, tol_dual=math.inf, tol_gap=math.inf, max_iters=max_iters,
                  record_trace=False)
    params.update(extra)
    return SolverSpec(kind, params)


def reference_value(problem: TransportProblem):
    """Optimal value and where it came from.

    Small problems use :func:`lp_exact`; larger ones fall back to a DROT run
    at tolerance 1e-9 and are tagged so in the output.
    """
    try:
        return lp_exact(problem).objective, "lp_exact"
    except TooLarge:
        res = solve(problem, DrotConfig(record_trace=False, max_iters=100_000).with_tol(1e-9))
        tag = "drot-1e-9" if res.converged else "drot-1e-9-unconverged"
        return res.report.objective, tag


@dataclass
class ProfileOutcome:
    rows: list
    errors: dict  # solver name -> list of relative errors (nan for failures)
    statuses: dict  # solver name -> list of status strings


def accuracy_profile(problems: Sequence[TransportProblem], solvers: Sequence[SolverSpec],
                     eps_grid: Sequence[float], reference_values: Optional[Sequence[float]] = None,
                     reference_tag: str = "given") -> ProfileOutcome:
    """Fraction of problems with relative objective error at most each ``eps``.

    A solver that raises or ends in ``NUMERICAL_FAILURE`` counts as not
    solved for every ``eps``; it never aborts the suite.
    """
    if reference_values is None:
        refs = [reference_value(p) for p in problems]
        values = [v for v, _ in refs]
        tags = sorted({t for _, t in refs})
        reference_tag = "+".join(tags)
    else:
        values = list(reference_values)
    errors, statuses, rows = {}, {}, []
    for spec in solvers:
        errs, stats = [], []
        for prob, ref in zip(problems, values):
            try:
                res = spec.run(prob)
            except Exception as exc:  # a crash is an unsolved instance
                errs.append(math.nan)
                stats.append(f"error:{type(exc).__name__}")
                continue
            stats.append(res.status.value)
            if res.status is Status.NUMERICAL_FAILURE or not math.isfinite(res.report.objective):
                errs.append(math.nan)
            else:
                errs.append(abs(res.report.objective - ref) / abs(ref))
        errors[spec.name] = errs
        statuses[spec.name] = stats
        arr = np.array(errs, dtype=float)
        fails = sum(1 for s in stats if s != Status.CONVERGED.value and s != Status.MAX_ITERS.value)
        for eps in eps_grid:
            solved = int(np.sum(arr <= eps))
            total = len(arr)
            rows.append((spec.name, float(eps), solved / total if total else math.nan, solved, total,
                         fails, reference_tag))
    return ProfileOutcome(rows, errors, statuses)


def gaussian_suite(count: int, m: int, n: int, sigma_t: float = 5.0, seed: int = 0):
    return [gen_gaussian_problem(GaussianSpec(m=m, n=n, sigma_t=sigma_t, seed=seed + i)) for i in range(count)]


# ------------------------------------------------------------------- timing

BENCH_HEADER = ("solver", "m", "n", "median_s", "lo_s", "hi_s", "runs", "iters")


def _unfused_iterations(problem: TransportProblem, rho: float, iters: int, plan: fused.TilePlan):
    x = np.asfortranarray(np.outer(problem.p, problem.q))
    m, n = problem.shape
    phi, varphi = np.zeros(m), np.zeros(n)
    a, b, r, s = np.zeros(m), np.zeros(n), np.zeros(m), np.zeros(n)
    alpha = 0.0
    cost = np.asfortranarray(problem.cost)
    for _ in range(iters):
        out = fused.unfused_pass(x, cost, phi, varphi, rho, plan)
        alpha, _ = _advance(out.row_sums, out.col_sums, problem.p, problem.q, a, b, alpha, phi, varphi, r, s)


def time_per_iteration(kind: str, problem: TransportProblem, iters: int = 100, workers=None,
                       eta: float = 1e-2) -> float:
    m, n = problem.shape
    if kind == "drot-fused":
        cfg = DrotConfig(max_iters=iters, record_trace=False, workers=workers)
        rho = cfg.rho(m, n)
        runner = _FusedRunner(init_state(problem, cfg), problem, cfg, rho)
        t0 = time.perf_counter()
        runner.run(iters, check=False)
        return (time.perf_counter() - t0) / iters
    if kind == "drot-unfused":
        plan = fused.plan_tiles(m, n, workers=workers)
        t0 = time.perf_counter()
        _unfused_iterations(problem, 2.0 / (m + n), iters, plan)
        return (time.perf_counter() - t0) / iters
    if kind == "sinkhorn":
        t0 = time.perf_counter()
        sinkhorn_solve(problem, eta, tol=0.0, max_iters=iters)
        return (time.perf_counter() - t0) / iters
    raise ValueError(f"unknown benchmark kind {kind!r}")


def bench_table(dims: Sequence[int], solvers=("drot-fused", "drot-unfused", "sinkhorn"), runs: int = 10,
                iters: int = 100, seed: int = 0, workers=None, eta: float = 1e-2) -> list:
    """Median and 2.5/97.5 percentiles of per-iteration time over ``runs`` runs."""
    rows = []
    for d in dims:
        prob = gen_gaussian_problem(GaussianSpec(m=d, n=d, seed=seed))
        for kind in solvers:
            time_per_iteration(kind, prob, iters=2, workers=workers, eta=eta)  # compile / warm caches
            samples = [time_per_iteration(kind, prob, iters, workers, eta) for _ in range(runs)]
            lo, med, hi = np.percentile(samples, [2.5, 50, 97.5])
            rows.append((kind, d, d, float(med), float(lo), float(hi), runs, iters))
    return rows


def pass_speedup(m: int = 4096, n: int = 4096, reps: int = 9, seed: int = 0, workers=None) -> dict:
    """Median time of one fused pass vs one unfused four-sweep pass.

    The two are timed alternately so that load from other processes hits
    both about equally; the first pair is a warm-up and is dropped.
    """
    rng = np.random.default_rng(seed)
    cost = np.asfortranarray(rng.random((m, n)))
    x0 = np.asfortranarray(rng.random((m, n)) / (m * n))
    phi = rng.standard_normal(m) * 1e-4
    varphi = rng.standard_normal(n) * 1e-4
    rho = 2.0 / (m + n)
    plan = fused.plan_tiles(m, n, workers=workers)
    x = np.empty_like(x0, order="F")

    def timed(fn):
        x[...] = x0
        t0 = time.perf_counter()
        fn(x, cost, phi, varphi, rho, plan)
        return time.perf_counter() - t0

    t_f, t_u = [], []
    for _ in range(reps + 1):
        t_f.append(timed(fused.fused_pass))
        t_u.append(timed(fused.unfused_pass))
    t_fused = float(np.median(t_f[1:]))
    t_unfused = float(np.median(t_u[1:]))
    return {"fused_s": t_fused, "unfused_s": t_unfused, "ratio": t_unfused / t_fused}


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of log(time) against log(size)."""
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
