"""Tiled single-pass kernel for the DROT matrix update.

One pass reads every entry of the iterate once, computes

    x+ = max((x - rho*c) + (phi_i + varphi_j), 0)

writes it back, and on the way accumulates the row sums, column sums and
``<C, X+>`` that the vector recursions and stopping test need. The matrix is
cut into ``bs x (ws*bs)`` tiles; every tile writes its partial reductions to
its own slot and the slots are merged in a fixed order afterwards, so the
result does not depend on how tiles are scheduled over threads.

The skip-cost variant alternates between a pass that reads C and stores
``X+ - rho*C`` and a pass that does not touch C at all. Because the plain
pass evaluates ``x - rho*c`` first, both variants produce bitwise identical
iterates.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from numba import njit, prange

from .errors import FoldStateMismatch, NonFiniteIterate, ShapeMismatch

# numba falls back to another threading layer on its own; the notice about
# an old TBB is noise for users.
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

DEFAULT_BS = 64
DEFAULT_WS = 4


@dataclass(frozen=True)
class TilePlan:
    """Partition of an ``m x n`` matrix into ``bs x (ws*bs)`` tiles.

    Tiles are ordered column band first so consecutive tiles are adjacent in
    column-major storage. ``row_band[t]``/``col_band[t]`` give the tile's
    position in the grid and key its slots in the partial-sum buffers.
    """

    m: int
    n: int
    bs: int
    ws: int
    workers: int
    row_start: np.ndarray
    row_stop: np.ndarray
    col_start: np.ndarray
    col_stop: np.ndarray
    row_band: np.ndarray
    col_band: np.ndarray
    n_row_bands: int
    n_col_bands: int

    @property
    def n_tiles(self) -> int:
        return len(self.row_start)

    @property
    def tiles(self):
        return [
            (int(a), int(b), int(c), int(d))
            for a, b, c, d in zip(self.row_start, self.row_stop, self.col_start, self.col_stop)
        ]


def default_workers() -> int:
    env = os.environ.get("DROT_WORKERS")
    if env:
        return max(1, int(env))
    return numba.config.NUMBA_NUM_THREADS


def plan_tiles(m: int, n: int, bs: int = DEFAULT_BS, ws: int = DEFAULT_WS,
               workers: Optional[int] = None) -> TilePlan:
    if bs < 1 or ws < 1 or (workers is not None and workers < 1):
        raise ValueError("bs, ws and workers must all be >= 1")
    workers = default_workers() if workers is None else int(workers)
    width = bs * ws
    row_edges = list(range(0, m, bs)) + [m]
    col_edges = list(range(0, n, width)) + [n]
    nr, nc = len(row_edges) - 1, len(col_edges) - 1
    rs, re_, cs, ce, rb, cb = [], [], [], [], [], []
    for tc in range(nc):
        for tr in range(nr):
            rs.append(row_edges[tr])
            re_.append(row_edges[tr + 1])
            cs.append(col_edges[tc])
            ce.append(col_edges[tc + 1])
            rb.append(tr)
            cb.append(tc)
    as_idx = lambda v: np.asarray(v, dtype=np.int64)
    return TilePlan(m, n, bs, ws, workers, as_idx(rs), as_idx(re_), as_idx(cs), as_idx(ce),
                    as_idx(rb), as_idx(cb), nr, nc)


@dataclass(frozen=True)
class FusedPassOutput:
    """Reductions produced by one pass.

    ``cost_dot`` is ``<C, X+>`` (nan when C was not read). ``prev_cost_dot``
    is ``<C, X_in>``, filled only on skip-cost folding passes. ``dual_sq`` is
    ``||[mu e^T + f nu^T - C]_+||^2`` for the duals supplied to the pass
    (nan when C was not read).
    ``delta_sq`` is ``||X+ - X_in||^2`` where ``X_in`` is whatever the buffer
    held (so it is only the iterate change when the input was not folded).
    """

    row_sums: np.ndarray
    col_sums: np.ndarray
    cost_dot: float
    max_abs: float
    prev_cost_dot: float = math.nan
    dual_sq: float = math.nan
    delta_sq: float = math.nan
    nonfinite: int = 0


@dataclass
class AccessCounters:
    """Per-element access counts of the last instrumented pass, plus totals."""

    shape: tuple
    x_reads: np.ndarray = None
    x_writes: np.ndarray = None
    cost_reads: np.ndarray = None
    passes: int = 0
    cost_passes: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.reset_pass()

    def reset_pass(self):
        self.x_reads = np.zeros(self.shape, dtype=np.int64, order="F")
        self.x_writes = np.zeros(self.shape, dtype=np.int64, order="F")
        self.cost_reads = np.zeros(self.shape, dtype=np.int64, order="F")

    def record(self):
        entry = {
            "x_reads": (int(self.x_reads.min()), int(self.x_reads.max())),
            "x_writes": (int(self.x_writes.min()), int(self.x_writes.max())),
            "cost_reads": (int(self.cost_reads.min()), int(self.cost_reads.max())),
        }
        self.history.append(entry)
        self.passes += 1
        if entry["cost_reads"][1] > 0:
            self.cost_passes += 1
        return entry


@dataclass
class FoldedArray:
    """The iterate buffer for the skip-cost scheme.

    ``folded`` is True when ``data`` currently stores ``X - rho*C``.
    """

    data: np.ndarray
    folded: bool = False


@njit(cache=True, inline="always")
def _chunk_lean(x, cost, phi, vj, rho, rowpart, band, r0, r1, j, acc_cost, amax):
    # Only the reductions every caller needs: row/column sums, <C, X+>, max.
    zero = x.dtype.type(0)
    col = zero
    for i in range(r0, r1):
        c = cost[i, j]
        t_val = (x[i, j] - rho * c) + (phi[i] + vj)
        # written so that nan passes through to the sums instead of clamping to 0
        xp = zero if t_val <= zero else t_val
        amax = xp if xp > amax else amax
        rowpart[band, i] += xp
        col += xp
        acc_cost += c * xp
        x[i, j] = xp
    return col, acc_cost, amax


@njit(cache=True, inline="always")
def _chunk_read(x, cost, phi, vj, rho, mu, nuj, want_dual, rowpart, band, r0, r1, j,
                acc_cost, acc_dual, acc_delta, amax):
    zero = x.dtype.type(0)
    col = zero
    for i in range(r0, r1):
        xin = x[i, j]
        c = cost[i, j]
        t_val = (xin - rho * c) + (phi[i] + vj)
        xp = zero if t_val <= zero else t_val
        amax = xp if xp > amax else amax
        rowpart[band, i] += xp
        col += xp
        d = xp - xin
        acc_delta += d * d
        acc_cost += c * xp
        if want_dual:
            g = (mu[i] + nuj) - c
            g = g if g > zero else zero
            acc_dual += g * g
        x[i, j] = xp
    return col, acc_cost, acc_dual, acc_delta, amax


@njit(cache=True, inline="always")
def _chunk_fold(x, cost, phi, vj, rho, mu, nuj, want_dual, rowpart, band, r0, r1, j,
                acc_cost, acc_prev, acc_dual, acc_delta, amax):
    # As _chunk_read, but also <C, X_in> (the skipped pass never saw C) and
    # the stored value is X+ - rho*C.
    zero = x.dtype.type(0)
    col = zero
    for i in range(r0, r1):
        xin = x[i, j]
        c = cost[i, j]
        rc = rho * c
        t_val = (xin - rc) + (phi[i] + vj)
        xp = zero if t_val <= zero else t_val
        amax = xp if xp > amax else amax
        rowpart[band, i] += xp
        col += xp
        d = xp - xin
        acc_delta += d * d
        acc_cost += c * xp
        acc_prev += c * xin
        if want_dual:
            g = (mu[i] + nuj) - c
            g = g if g > zero else zero
            acc_dual += g * g
        x[i, j] = xp - rc
    return col, acc_cost, acc_prev, acc_dual, acc_delta, amax


@njit(cache=True, inline="always")
def _chunk_skip(x, phi, vj, rowpart, band, r0, r1, j, acc_delta, amax):
    zero = x.dtype.type(0)
    col = zero
    for i in range(r0, r1):
        xin = x[i, j]
        t_val = xin + (phi[i] + vj)
        xp = zero if t_val <= zero else t_val
        amax = xp if xp > amax else amax
        rowpart[band, i] += xp
        col += xp
        d = xp - xin
        acc_delta += d * d
        x[i, j] = xp
    return col, acc_delta, amax


def _kernel_body(x, cost, phi, varphi, rho, mu, nu,
                 rs, re_, cs, ce, rb, cb,
                 read_cost, write_folded, want_dual, track_delta, instrument,
                 rowpart, colpart, t_cost, t_prev, t_dual, t_delta, t_max, t_bad,
                 cnt_xr, cnt_xw, cnt_cr):
    # Work is split by column band. Inside a band every column is streamed
    # top to bottom across all row tiles; each tile keeps its own running
    # sums, so every tile's reduction sees its entries in the same order as
    # a tile-by-tile sweep would.
    ntiles = rs.shape[0]
    nbands = cb[ntiles - 1] + 1
    nrow = ntiles // nbands
    zero = x.dtype.type(0)
    for band in prange(nbands):
        t0 = band * nrow
        c0 = cs[t0]
        c1 = ce[t0]
        for i in range(rs[t0], re_[t0 + nrow - 1]):
            rowpart[band, i] = zero
        for t in range(t0, t0 + nrow):
            t_cost[t] = zero
            t_prev[t] = zero
            t_dual[t] = zero
            t_delta[t] = zero
            t_max[t] = zero
        for j in range(c0, c1):
            vj = varphi[j]
            nuj = nu[j] if want_dual else zero
            for t in range(t0, t0 + nrow):
                r0 = rs[t]
                r1 = re_[t]
                if instrument:
                    col = zero
                    for i in range(r0, r1):
                        cnt_xr[i, j] += 1
                        cnt_xw[i, j] += 1
                        if read_cost:
                            cnt_cr[i, j] += 1
                if write_folded:
                    col, t_cost[t], t_prev[t], t_dual[t], t_delta[t], t_max[t] = _chunk_fold(
                        x, cost, phi, vj, rho, mu, nuj, want_dual, rowpart, band, r0, r1, j,
                        t_cost[t], t_prev[t], t_dual[t], t_delta[t], t_max[t])
                elif read_cost and not (want_dual or track_delta):
                    col, t_cost[t], t_max[t] = _chunk_lean(
                        x, cost, phi, vj, rho, rowpart, band, r0, r1, j, t_cost[t], t_max[t])
                elif read_cost:
                    col, t_cost[t], t_dual[t], t_delta[t], t_max[t] = _chunk_read(
                        x, cost, phi, vj, rho, mu, nuj, want_dual, rowpart, band, r0, r1, j,
                        t_cost[t], t_dual[t], t_delta[t], t_max[t])
                else:
                    col, t_delta[t], t_max[t] = _chunk_skip(
                        x, phi, vj, rowpart, band, r0, r1, j, t_delta[t], t_max[t])
                colpart[rb[t], j] = col
        for t in range(t0, t0 + nrow):
            # X+ >= 0, so a column partial sum is finite exactly when all its
            # entries are; nan in phi/varphi is screened by the callers.
            bad = 0 if (t_delta[t] < np.inf and t_max[t] < np.inf) else 1
            if bad == 0:
                for j in range(c0, c1):
                    if not colpart[rb[t], j] < np.inf:
                        bad = 1
                        break
            t_bad[t] = bad


_kernel_serial = njit(cache=True, nogil=True)(_kernel_body)
_kernel_parallel = njit(cache=True, parallel=True)(_kernel_body)


@njit(cache=True)
def _merge(rowpart, colpart, t_vals):
    """Sum partial buffers band by band, always in ascending band order."""
    nc, m = rowpart.shape
    nr, n = colpart.shape
    u = np.empty(m, dtype=rowpart.dtype)
    v = np.empty(n, dtype=colpart.dtype)
    for i in range(m):
        s = rowpart[0, i]
        for k in range(1, nc):
            s += rowpart[k, i]
        u[i] = s
    for j in range(n):
        s = colpart[0, j]
        for k in range(1, nr):
            s += colpart[k, j]
        v[j] = s
    k, ntiles = t_vals.shape
    tot = np.empty(k, dtype=t_vals.dtype)
    for r in range(k):
        s = t_vals[r, 0]
        for t in range(1, ntiles):
            s += t_vals[r, t]
        tot[r] = s
    return u, v, tot


class _Workspace:
    """Partial-sum buffers reused across passes with the same plan and dtype."""

    def __init__(self, plan: TilePlan, dtype):
        self.key = (plan.m, plan.n, plan.bs, plan.ws, np.dtype(dtype))
        nt = plan.n_tiles
        self.rowpart = np.zeros((plan.n_col_bands, plan.m), dtype=dtype)
        self.colpart = np.zeros((plan.n_row_bands, plan.n), dtype=dtype)
        self.tvals = np.zeros((5, nt), dtype=dtype)
        self.bad = np.zeros(nt, dtype=np.int64)
        self.dummy_counts = np.zeros((1, 1), dtype=np.int64)
        self.dummy_vec = np.zeros(0, dtype=dtype)


_workspaces: dict = {}


def _workspace(plan, dtype):
    key = (plan.m, plan.n, plan.bs, plan.ws, np.dtype(dtype))
    ws = _workspaces.get(key)
    if ws is None:
        if len(_workspaces) > 32:
            _workspaces.clear()
        ws = _workspaces[key] = _Workspace(plan, dtype)
    return ws


def _run(x, cost, phi, varphi, rho, plan, *, read_cost, write_folded, duals, counters, track_delta=True):
    if x.shape != (plan.m, plan.n) or cost.shape != x.shape:
        raise ShapeMismatch(f"buffer {x.shape}, cost {cost.shape}, plan {(plan.m, plan.n)}")
    if phi.shape != (plan.m,) or varphi.shape != (plan.n,):
        raise ShapeMismatch("phi/varphi lengths do not match the plan")
    dtype = x.dtype
    wsp = _workspace(plan, dtype)
    rho_t = dtype.type(rho)
    phi = np.ascontiguousarray(phi, dtype=dtype)
    varphi = np.ascontiguousarray(varphi, dtype=dtype)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(varphi))):
        raise NonFiniteIterate("phi/varphi have non-finite entries")
    want_dual = duals is not None and read_cost
    lean = read_cost and not write_folded and not (want_dual or track_delta)
    if want_dual:
        mu = np.ascontiguousarray(duals[0], dtype=dtype)
        nu = np.ascontiguousarray(duals[1], dtype=dtype)
    else:
        mu = nu = wsp.dummy_vec
    if counters is not None:
        counters.reset_pass()
        cxr, cxw, ccr = counters.x_reads, counters.x_writes, counters.cost_reads
    else:
        cxr = cxw = ccr = wsp.dummy_counts
    if cost.dtype != dtype:
        cost = cost.astype(dtype, order="F")
    kernel = _kernel_parallel if (plan.workers > 1 and plan.n_tiles > 1) else _kernel_serial
    if kernel is _kernel_parallel:
        numba.set_num_threads(min(plan.workers, numba.config.NUMBA_NUM_THREADS))
    tv = wsp.tvals
    kernel(x, cost, phi, varphi, rho_t, mu, nu,
           plan.row_start, plan.row_stop, plan.col_start, plan.col_stop, plan.row_band, plan.col_band,
           read_cost, write_folded, want_dual, track_delta, counters is not None,
           wsp.rowpart, wsp.colpart, tv[0], tv[1], tv[2], tv[3], tv[4], wsp.bad,
           cxr, cxw, ccr)
    u, v, tot = _merge(wsp.rowpart, wsp.colpart, tv[:4])
    nonfinite = int(wsp.bad.sum())
    max_abs = math.inf if nonfinite else float(tv[4].max())
    if counters is not None:
        counters.record()
    out = FusedPassOutput(
        row_sums=u,
        col_sums=v,
        cost_dot=float(tot[0]) if read_cost else math.nan,
        max_abs=max_abs,
        prev_cost_dot=float(tot[1]) if write_folded else math.nan,
        dual_sq=float(tot[2]) if want_dual else math.nan,
        delta_sq=math.nan if lean else float(tot[3]),
        nonfinite=nonfinite,
    )
    if nonfinite:
        raise NonFiniteIterate(f"fused pass produced non-finite values in {nonfinite} tile(s)")
    return out


def fused_pass(xy: np.ndarray, cost: np.ndarray, phi, varphi, rho: float, plan: TilePlan, *,
               duals=None, track_delta: bool = False,
               counters: Optional[AccessCounters] = None) -> FusedPassOutput:
    """Overwrite ``xy`` with ``[xy + phi e^T + f varphi^T - rho C]_+`` in one pass.

    ``duals=(mu, nu)`` additionally accumulates the dual infeasibility of that
    pair against C while C is being streamed anyway; ``track_delta`` adds
    ``||X+ - X||^2``. Without either, ``delta_sq`` is nan.
    """
    return _run(xy, cost, np.asarray(phi), np.asarray(varphi), rho, plan,
                read_cost=True, write_folded=False, duals=duals, counters=counters, track_delta=track_delta)


def fused_pass_skip_cost(buf: FoldedArray, cost: np.ndarray, phi, varphi, rho: float, plan: TilePlan,
                         fold: bool, *, duals=None,
                         counters: Optional[AccessCounters] = None) -> FusedPassOutput:
    """One pass of the alternating skip-cost scheme.

    ``fold=True``: the buffer holds X; C is read and ``X+ - rho*C`` is
    stored. ``fold=False``: the buffer holds ``X - rho*C``; C is not read and
    ``X+`` is stored. The returned ``cost_dot`` is nan on non-folding passes;
    the following folding pass reports it as ``prev_cost_dot``.
    """
    if fold == buf.folded:
        state = "X - rho*C" if buf.folded else "X"
        raise FoldStateMismatch(f"fold={fold} requested but the buffer holds {state}")
    out = _run(buf.data, cost, np.asarray(phi), np.asarray(varphi), rho, plan,
               read_cost=fold, write_folded=fold, duals=duals, counters=counters)
    buf.folded = fold
    return out


def unfold(buf: FoldedArray, cost: np.ndarray, rho: float) -> np.ndarray:
    """Return X from a buffer, adding ``rho*C`` back if it is folded (copy)."""
    if not buf.folded:
        return buf.data.copy(order="F")
    return np.asfortranarray(buf.data + buf.data.dtype.type(rho) * cost.astype(buf.data.dtype))


# Unfused reference: the same arithmetic split into four separate sweeps.
# Its reductions follow the tile plan, so results match the fused pass bit
# for bit; only the memory traffic differs.


def _bands(cb):
    nbands = cb[cb.shape[0] - 1] + 1
    return nbands, cb.shape[0] // nbands


def _update_body(x, cost, phi, varphi, rho, rs, re_, cs, ce, cb):
    zero = x.dtype.type(0)
    nbands, nrow = _bands(cb)
    for band in prange(nbands):
        t0 = band * nrow
        for j in range(cs[t0], ce[t0]):
            vj = varphi[j]
            for i in range(rs[t0], re_[t0 + nrow - 1]):
                t_val = (x[i, j] - rho * cost[i, j]) + (phi[i] + vj)
                x[i, j] = zero if t_val <= zero else t_val


def _rowsum_body(x, rs, re_, cs, ce, cb, rowpart):
    zero = x.dtype.type(0)
    nbands, nrow = _bands(cb)
    for band in prange(nbands):
        t0 = band * nrow
        r0, r1 = rs[t0], re_[t0 + nrow - 1]
        for i in range(r0, r1):
            rowpart[band, i] = zero
        for j in range(cs[t0], ce[t0]):
            for i in range(r0, r1):
                rowpart[band, i] += x[i, j]


def _colsum_body(x, rs, re_, cs, ce, cb, rb, colpart):
    zero = x.dtype.type(0)
    nbands, nrow = _bands(cb)
    for band in prange(nbands):
        t0 = band * nrow
        for j in range(cs[t0], ce[t0]):
            for t in range(t0, t0 + nrow):
                col = zero
                for i in range(rs[t], re_[t]):
                    col += x[i, j]
                colpart[rb[t], j] = col


def _dot_body(x, cost, rs, re_, cs, ce, cb, t_cost):
    zero = x.dtype.type(0)
    nbands, nrow = _bands(cb)
    for band in prange(nbands):
        t0 = band * nrow
        for t in range(t0, t0 + nrow):
            t_cost[t] = zero
        for j in range(cs[t0], ce[t0]):
            for t in range(t0, t0 + nrow):
                acc = t_cost[t]
                for i in range(rs[t], re_[t]):
                    acc += cost[i, j] * x[i, j]
                t_cost[t] = acc


_bands = njit(cache=True)(_bands)
_unfused_serial = tuple(njit(cache=True)(f) for f in (_update_body, _rowsum_body, _colsum_body, _dot_body))
_unfused_parallel = tuple(
    njit(cache=True, parallel=True)(f) for f in (_update_body, _rowsum_body, _colsum_body, _dot_body)
)


def unfused_pass(xy: np.ndarray, cost: np.ndarray, phi, varphi, rho: float,
                 plan: TilePlan) -> FusedPassOutput:
    """Four-sweep reference: update, then row sums, column sums and ``<C, X>``."""
    dtype = xy.dtype
    wsp = _workspace(plan, dtype)
    phi = np.ascontiguousarray(phi, dtype=dtype)
    varphi = np.ascontiguousarray(varphi, dtype=dtype)
    if cost.dtype != dtype:
        cost = cost.astype(dtype, order="F")
    parallel = plan.workers > 1 and plan.n_tiles > 1
    upd, rsum, csum, dot = _unfused_parallel if parallel else _unfused_serial
    if parallel:
        numba.set_num_threads(min(plan.workers, numba.config.NUMBA_NUM_THREADS))
    args = (plan.row_start, plan.row_stop, plan.col_start, plan.col_stop, plan.col_band)
    upd(xy, cost, phi, varphi, dtype.type(rho), *args)
    rsum(xy, *args, wsp.rowpart)
    csum(xy, *args, plan.row_band, wsp.colpart)
    tv = wsp.tvals
    dot(xy, cost, *args, tv[0])
    u, v, tot = _merge(wsp.rowpart, wsp.colpart, tv[:1])
    # No fifth sweep for max_abs; an overflow still shows up in the sums.
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NonFiniteIterate("non-finite entries after the unfused update")
    return FusedPassOutput(u, v, float(tot[0]), math.nan)


def naive_pass(xy, cost, phi, varphi, rho):
    """Plain numpy evaluation of the same update (no tiling, no fusion)."""
    xp = np.maximum((xy - rho * cost) + (phi[:, None] + varphi[None, :]), 0.0)
    return xp, xp.sum(axis=1), xp.sum(axis=0), float(np.sum(cost * xp))
