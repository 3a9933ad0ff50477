"""Closed-form proximal maps of the two halves of the OT split.

``f(X) = <C, X> + indicator(X >= 0)`` has prox ``[Y - rho C]_+`` and
``g = indicator(Xe = p, X^T f = q)`` has prox equal to the Euclidean
projection onto the coupling set, which only needs two matrix-vector
products and two rank-one updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveRho, ShapeMismatch


@dataclass(frozen=True)
class CouplingProjectionScratch:
    row_defect: np.ndarray
    col_defect: np.ndarray
    gamma: float


def coupling_defects(x, p, q, check: bool = False) -> CouplingProjectionScratch:
    """Row/column defects of ``x`` and the shared correction ``gamma``.

    ``gamma`` is taken from the row defect. With ``check=True`` it is also
    computed from the column defect and the two must agree to 1e-10.
    """
    x = np.asarray(x)
    m, n = x.shape
    if np.shape(p) != (m,) or np.shape(q) != (n,):
        raise ShapeMismatch(f"marginals of length {np.size(p)}, {np.size(q)} for a {m}x{n} matrix")
    row_defect = x.sum(axis=1) - p
    col_defect = x.sum(axis=0) - q
    gamma = float(row_defect.sum()) / (m + n)
    if check:
        gamma_cols = float(col_defect.sum()) / (m + n)
        scale = 1.0 + float(np.abs(x).sum())
        if abs(gamma - gamma_cols) > 1e-10 * scale:
            raise AssertionError(f"gamma mismatch: rows give {gamma!r}, columns give {gamma_cols!r}")
    return CouplingProjectionScratch(row_defect, col_defect, gamma)


def project_coupling(x, p, q, check: bool = False) -> np.ndarray:
    """Project ``x`` onto ``{Z : Z e = p, Z^T f = q}`` (real entries, any sign)."""
    x = np.asarray(x)
    m, n = x.shape
    d = coupling_defects(x, p, q, check=check)
    out = x - ((d.row_defect - d.gamma) / n)[:, None]
    out -= ((d.col_defect - d.gamma) / m)[None, :]
    return out


def prox_nonneg_linear(y, cost, rho: float) -> np.ndarray:
    """``[y - rho * cost]_+`` elementwise."""
    if not rho > 0:
        raise NonPositiveRho(f"rho must be positive, got {rho}")
    y = np.asarray(y)
    cost = np.asarray(cost)
    if y.shape != cost.shape:
        raise ShapeMismatch(f"y has shape {y.shape} but cost has shape {cost.shape}")
    return np.maximum(y - rho * cost, 0.0)


def project_range(y, x):
    """Project ``(y, x)`` onto the range of ``X -> (X e, X^T f)``.

    The range is ``{(y, x) : sum(y) = sum(x)}``; the projection moves both
    parts by the same scalar ``alpha = (sum(y) - sum(x)) / (m + n)``.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    alpha = (y.sum() - x.sum()) / (y.size + x.size)
    return y - alpha, x + alpha


def dr_operator(y, cost, p, q, rho: float) -> np.ndarray:
    """One application of the Douglas-Rachford map ``T`` for the OT split."""
    x = prox_nonneg_linear(y, cost, rho)
    z = project_coupling(2.0 * x - y, p, q)
    return y + z - x
