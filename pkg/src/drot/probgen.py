"""Random OT instances from pairs of 2D Gaussian point clouds.

Source points are ``mu_s + A_s z`` with ``mu_s ~ N(0, I)`` and ``A_s`` having
U[0, 1] entries; the target cloud uses ``mu_t ~ N(5, sigma_t^2)`` entries and
its own ``A_t``. The cost is the squared Euclidean distance matrix scaled to
max entry 1, and marginals are uniform unless Dirichlet marginals are asked
for.

All randomness comes from ``numpy.random.Generator(Philox(seed))`` so the
same seed gives the same instance on every platform.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import TransportProblem, validate_problem
from .errors import DegenerateCost, DimensionMismatch


@dataclass(frozen=True)
class GaussianSpec:
    """Parameters of one generated instance.

    Attributes:
        m, n: number of source and target points.
        sigma_t: standard deviation of the target mean entries around 5.
        seed: 64-bit seed for the Philox generator.
        dirichlet: concentration for Dirichlet marginals; None means uniform.
        resample: draw fresh points instead of failing when every distance
            is zero.
    """

    m: int
    n: int
    sigma_t: float = 5.0
    seed: int = 0
    dirichlet: Optional[float] = None
    resample: bool = False

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not self.sigma_t > 0:
            raise ValueError("sigma_t must be positive")
        if self.dirichlet is not None and not self.dirichlet > 0:
            raise ValueError("dirichlet concentration must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianSpec":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GaussianSpec":
        return cls.from_dict(json.loads(text))


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def squared_euclidean_cost(xs, xt) -> np.ndarray:
    """``C[i, j] = ||xs[i] - xt[j]||^2``, computed from explicit differences."""
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xt.ndim == 1:
        xt = xt[:, None]
    if xs.shape[1] != xt.shape[1]:
        raise DimensionMismatch(f"source points are {xs.shape[1]}-D, target points {xt.shape[1]}-D")
    diff = xs[:, None, :] - xt[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def normalize_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    scale = float(np.max(np.abs(cost))) if cost.size else 0.0
    if scale == 0.0:
        raise DegenerateCost("cost matrix is identically zero")
    return cost / scale


def _gaussian_cloud(rng, k, mean):
    a = rng.uniform(0.0, 1.0, size=(2, 2))
    z = rng.standard_normal(size=(k, 2))
    return mean + z @ a.T


def sample_points(spec: GaussianSpec, rng: np.random.Generator):
    """Draw ``(xs, xt)`` in a fixed order: mu_s, A_s, z_s, mu_t, A_t, z_t."""
    mu_s = rng.standard_normal(size=2)
    xs = _gaussian_cloud(rng, spec.m, mu_s)
    mu_t = rng.normal(5.0, spec.sigma_t, size=2)
    xt = _gaussian_cloud(rng, spec.n, mu_t)
    return xs, xt


def gen_gaussian_problem(spec: GaussianSpec) -> TransportProblem:
    rng = rng_from_seed(spec.seed)
    for _ in range(100):
        xs, xt = sample_points(spec, rng)
        cost = squared_euclidean_cost(xs, xt)
        if np.max(cost) > 0 or not spec.resample:
            break
    cost = normalize_cost(cost)
    if spec.dirichlet is None:
        p = np.full(spec.m, 1.0 / spec.m)
        q = np.full(spec.n, 1.0 / spec.n)
    else:
        p = _simplex(rng.dirichlet(np.full(spec.m, spec.dirichlet)))
        q = _simplex(rng.dirichlet(np.full(spec.n, spec.dirichlet)))
    return validate_problem(TransportProblem(cost, p, q))


def _simplex(w):
    # Dirichlet draws can have entries that underflow to 0 for tiny
    # concentrations; renormalizing keeps the sum at 1 to rounding.
    w = np.maximum(w, 0.0)
    return w / w.sum()


def random_problems(count: int, m_range=(2, 16), n_range=None, seed: int = 0, **kwargs):
    """``count`` instances with sizes drawn uniformly from the given ranges (inclusive)."""
    n_range = m_range if n_range is None else n_range
    rng = rng_from_seed(seed)
    out = []
    for _ in range(count):
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        sub = int(rng.integers(0, 2**63))
        out.append(gen_gaussian_problem(GaussianSpec(m=m, n=n, seed=sub, **kwargs)))
    return out
