"""Command-line front end: ``drot {solve,profile,bench,color-transfer,gen}``.

Exit codes: 0 success (including an iteration cap), 1 input/output error,
2 usage error, 3 numerical failure of the solver.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as mio
from .core import SolveResult, Status, TransportProblem, validate_problem
from .errors import DrotError, MatrixFileError
from .probgen import GaussianSpec, gen_gaussian_problem

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
SOLVERS = ("drot", "drot-fused", "dr-reference", "admm-reference", "sinkhorn")


@dataclass
class RunConfig:
    """Settings shared by the config file and the command-line flags."""

    solver: str = "drot"
    rho0: float = 2.0
    rho: Optional[float] = None
    eta: float = 1e-2
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    tol_gap: float = 1e-4
    max_iters: int = 10_000
    precision: str = "f64"
    workers: Optional[int] = None
    bs: int = 64
    ws: int = 4
    deterministic: bool = True
    seed: int = 0
    out: str = "."

    def validate(self) -> "RunConfig":
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        if self.solver == "sinkhorn" and not self.eta > 0:
            raise ValueError("sinkhorn needs a positive eta")
        if self.solver.endswith("reference") and self.precision != "f64":
            raise ValueError("reference solvers run in f64 only")
        return self


def load_config(path: Optional[str], overrides: dict, defaults: Optional[dict] = None) -> RunConfig:
    """Command defaults, then config file values, then every flag given explicitly."""
    known = {f.name for f in fields(RunConfig)}
    values = dict(defaults or {})
    if path:
        data = json.loads(Path(path).read_text())
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(sorted(unknown))}")
        values.update(data)
    values.update({k: v for k, v in overrides.items() if k in known and v is not None})
    return RunConfig(**values).validate()


def _read_any(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return mio.read_csv_matrix(path)
    return mio.read_matrix(path)


def _read_problem(args) -> TransportProblem:
    if args.cost:
        if not (args.p and args.q):
            raise ValueError("--cost needs --p and --q")
        cost = np.asarray(_read_any(args.cost), dtype=np.float64)
        p = np.ravel(_read_any(args.p)).astype(np.float64)
        q = np.ravel(_read_any(args.q)).astype(np.float64)
        return validate_problem(TransportProblem(cost, p, q))
    if args.gen:
        text = Path(args.gen).read_text() if Path(args.gen).is_file() else args.gen
        return gen_gaussian_problem(GaussianSpec.from_json(text))
    raise ValueError("give either --cost/--p/--q or --gen")


def run_solver(problem: TransportProblem, cfg: RunConfig, record_trace: bool = True) -> SolveResult:
    from .reference import run_reference, sinkhorn_solve
    from .solver import DrotConfig, solve

    if cfg.solver in ("drot", "drot-fused"):
        dcfg = DrotConfig(rho0=cfg.rho0, rho_override=cfg.rho, tol_primal=cfg.tol_primal, tol_dual=cfg.tol_dual,
                          tol_gap=cfg.tol_gap, max_iters=cfg.max_iters, precision=cfg.precision,
                          deterministic=cfg.deterministic, workers=cfg.workers, bs=cfg.bs, ws=cfg.ws,
                          record_trace=record_trace)
        return solve(problem, dcfg)
    if cfg.solver == "sinkhorn":
        return sinkhorn_solve(problem, cfg.eta, tol=cfg.tol_primal, max_iters=cfg.max_iters,
                              precision=cfg.precision)
    rho = cfg.rho if cfg.rho is not None else cfg.rho0 / (problem.m + problem.n)
    tol = min(cfg.tol_primal, cfg.tol_dual, cfg.tol_gap)
    return run_reference(problem, cfg.solver.split("-")[0], rho, tol=tol, max_iters=cfg.max_iters)


def summary_of(result: SolveResult, cfg: RunConfig) -> dict:
    out = {
        "solver": cfg.solver,
        "status": result.status.value,
        "iterations": result.iterations,
        "wall_time": result.trace.wall_time,
        **result.report.as_dict(),
    }
    if result.status is Status.NUMERICAL_FAILURE:
        out["reason"] = "numerical failure"
        out["detail"] = result.reason
    return out


def _trace_rows(trace):
    cols = trace.COLUMNS
    for vals in zip(*(getattr(trace, c) for c in cols)):
        yield dict(zip(cols, vals))


def cmd_solve(args) -> int:
    cfg = load_config(args.config, vars(args))
    problem = _read_problem(args)
    result = run_solver(problem, cfg, record_trace=bool(args.trace))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary_of(result, cfg)
    mio.write_json(out / "summary.json", summary)
    if args.trace:
        mio.write_jsonl(out / "trace.jsonl", _trace_rows(result.trace))
    if result.status is Status.NUMERICAL_FAILURE:
        print(json.dumps({"error": "numerical failure", "detail": result.reason}), file=sys.stderr)
        return EXIT_NUMERICAL
    mio.write_matrix(out / "plan.otmx", np.asarray(result.plan.x, dtype=np.float64))
    if result.cert is not None:
        mio.write_vector(out / "mu.otmx", result.cert.mu)
        mio.write_vector(out / "nu.otmx", result.cert.nu)
    print(json.dumps(mio._json_safe(summary), sort_keys=True))
    return EXIT_OK


def _parse_solver_list(text: str, cfg: RunConfig, violation: float):
    """``"drot,sinkhorn:eta=1e-3:precision=f32"`` to a list of solver specs."""
    from .experiments import profile_termination

    specs = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        kind, *opts = item.split(":")
        extra = {}
        for opt in opts:
            key, _, val = opt.partition("=")
            extra[key] = val if key == "precision" else float(val)
        if kind == "sinkhorn":
            extra.setdefault("eta", cfg.eta)
        elif kind in ("drot", "drot-fused"):
            kind = "drot"
        else:
            raise ValueError(f"solver {kind!r} is not available in profiles")
        spec = profile_termination(kind, violation=violation, max_iters=cfg.max_iters, **extra)
        if kind == "sinkhorn":
            spec = type(spec)(spec.kind, spec.params, label=item)
        specs.append(spec)
    return specs


def cmd_profile(args) -> int:
    from .experiments import PROFILE_HEADER, accuracy_profile, gaussian_suite

    cfg = load_config(args.config, vars(args), defaults={"max_iters": 1000})
    solvers = _parse_solver_list(args.solvers, cfg, args.violation)
    eps = [float(e) for e in args.eps.split(",") if e]
    problems = gaussian_suite(args.count, args.m, args.n, sigma_t=args.sigma_t, seed=cfg.seed)
    if solvers:
        rows = accuracy_profile(problems, solvers, eps).rows
    else:
        rows = []
    _emit_table(args.csv, PROFILE_HEADER, rows)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .experiments import BENCH_HEADER, bench_table

    cfg = load_config(args.config, vars(args))
    dims = [int(d) for d in args.dims.split(",") if d]
    kinds = tuple(s for s in args.solvers.split(",") if s)
    rows = bench_table(dims, kinds, runs=args.runs, iters=args.iters, seed=cfg.seed, workers=cfg.workers,
                       eta=cfg.eta)
    _emit_table(args.csv, BENCH_HEADER, rows)
    return EXIT_OK


def _emit_table(path, header, rows):
    if path:
        mio.write_csv_table(path, header, rows)
    else:
        import csv

        w = csv.writer(sys.stdout)
        w.writerow(header)
        for row in rows:
            w.writerow([mio.format_float(v) if isinstance(v, float) else v for v in row])


def cmd_color_transfer(args) -> int:
    from .color import color_transfer, load_rgb, sample_image_path, save_rgb
    from .solver import DrotConfig

    cfg = load_config(args.config, vars(args))
    src = load_rgb(args.source or sample_image_path("chelsea.png"))
    tgt = load_rgb(args.target or sample_image_path("coffee.png"))
    dcfg = DrotConfig(rho0=cfg.rho0, rho_override=cfg.rho, tol_primal=cfg.tol_primal, tol_dual=cfg.tol_dual,
                      tol_gap=cfg.tol_gap, max_iters=cfg.max_iters, workers=cfg.workers,
                      deterministic=cfg.deterministic, record_trace=False)
    res = color_transfer(src, tgt, k=args.k, seed=cfg.seed, config=dcfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_rgb(out / "transfer.png", res.image)
    stats = {
        "k": args.k,
        "plan_shape": list(res.plan.shape),
        "nonzero_fraction": res.nonzero_fraction,
        "threshold": res.threshold,
        "status": res.status,
        "iterations": res.iterations,
    }
    mio.write_json(out / "color_transfer.json", stats)
    print(json.dumps(mio._json_safe(stats), sort_keys=True))
    return EXIT_NUMERICAL if res.status == Status.NUMERICAL_FAILURE.value else EXIT_OK


def cmd_gen(args) -> int:
    cfg = load_config(args.config, vars(args))
    spec = GaussianSpec(m=args.m, n=args.n, sigma_t=args.sigma_t, seed=cfg.seed, dirichlet=args.dirichlet)
    prob = gen_gaussian_problem(spec)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mio.write_matrix(out / "cost.otmx", prob.cost)
    mio.write_vector(out / "p.otmx", prob.p)
    mio.write_vector(out / "q.otmx", prob.q)
    (out / "spec.json").write_text(spec.to_json() + "\n")
    return EXIT_OK


def _add_run_flags(sp):
    g = sp.add_argument_group("run settings (override --config)")
    g.add_argument("--config", help="JSON file with run settings")
    g.add_argument("--solver", choices=SOLVERS, default=None)
    g.add_argument("--rho0", type=float, default=None)
    g.add_argument("--rho", type=float, default=None, help="absolute penalty; overrides --rho0")
    g.add_argument("--eta", type=float, default=None)
    g.add_argument("--tol-primal", type=float, default=None)
    g.add_argument("--tol-dual", type=float, default=None)
    g.add_argument("--tol-gap", type=float, default=None)
    g.add_argument("--max-iters", type=int, default=None)
    g.add_argument("--precision", choices=("f32", "f64"), default=None)
    g.add_argument("--workers", type=int, default=None)
    g.add_argument("--bs", type=int, default=None)
    g.add_argument("--ws", type=int, default=None)
    g.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drot", description="Douglas-Rachford optimal transport solver")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve one problem")
    sp.add_argument("--cost", help="cost matrix (.otmx or .csv)")
    sp.add_argument("--p", help="source marginal")
    sp.add_argument("--q", help="target marginal")
    sp.add_argument("--gen", help="GaussianSpec as JSON text or a JSON file")
    sp.add_argument("--trace", action="store_true", help="write trace.jsonl")
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("profile", help="accuracy profile over random problems")
    sp.add_argument("--count", type=int, default=50)
    sp.add_argument("--m", type=int, default=16)
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--sigma-t", type=float, default=5.0)
    sp.add_argument("--solvers", default="drot", help="comma list, e.g. drot,sinkhorn:eta=1e-3:precision=f32")
    sp.add_argument("--eps", default="1e-2,1e-3,1e-4,1e-5")
    sp.add_argument("--violation", type=float, default=1e-4, help="stop at this constraint violation")
    sp.add_argument("--csv", help="write the table here instead of stdout")
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("bench", help="per-iteration timing table")
    sp.add_argument("--dims", default="512,1024")
    sp.add_argument("--solvers", default="drot-fused,drot-unfused,sinkhorn")
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--iters", type=int, default=100)
    sp.add_argument("--csv")
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("color-transfer", help="recolor an image with another image's palette")
    sp.add_argument("--source", help="PNG; defaults to a bundled sample")
    sp.add_argument("--target", help="PNG; defaults to a bundled sample")
    sp.add_argument("--k", type=int, default=750)
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_color_transfer)

    sp = sub.add_parser("gen", help="write a random Gaussian problem")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--sigma-t", type=float, default=5.0)
    sp.add_argument("--dirichlet", type=float, default=None)
    _add_run_flags(sp)
    sp.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, MatrixFileError) as exc:
        print(f"drot: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DrotError, ValueError, json.JSONDecodeError) as exc:
        print(f"drot: invalid input: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
