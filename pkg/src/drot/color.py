"""Palette quantization and OT color transfer between two images."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy.cluster.vq import kmeans2

from .core import TransportProblem
from .errors import EmptyImage, KTooLarge
from .probgen import normalize_cost, rng_from_seed, squared_euclidean_cost
from .solver import DrotConfig, solve

SAMPLE_IMAGES = ("chelsea.png", "coffee.png")


def sample_image_path(name: str) -> Path:
    return Path(str(resources.files("drot") / "data" / name))


def load_rgb(path) -> np.ndarray:
    """8-bit RGB image as a float array in [0, 1] of shape (h, w, 3)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_rgb(path, img: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


@dataclass(frozen=True)
class Palette:
    centroids: np.ndarray  # (k, 3)
    assignments: np.ndarray  # (num_pixels,)
    masses: np.ndarray  # (k,), sums to 1


def kmeans_quantize(pixels, k: int, seed: int = 0, iters: int = 10) -> Palette:
    """k-means on RGB triples with k-means++ seeding.

    Clusters that end up empty are dropped, so the palette can be smaller
    than ``k``.

    Raises:
        EmptyImage: no pixels.
        KTooLarge: ``k`` exceeds the number of distinct colors.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    if pixels.shape[0] == 0:
        raise EmptyImage("image has no pixels")
    distinct = np.unique(pixels, axis=0).shape[0]
    if k < 1 or k > distinct:
        raise KTooLarge(f"k={k} but the image has {distinct} distinct colors")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        centroids, labels = kmeans2(pixels, k, iter=iters, minit="++", seed=rng_from_seed(seed))
    counts = np.bincount(labels, minlength=k)
    keep = np.flatnonzero(counts > 0)
    remap = np.full(k, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    masses = counts[keep] / pixels.shape[0]
    return Palette(centroids[keep], remap[labels], masses)


@dataclass(frozen=True)
class ColorTransferResult:
    image: np.ndarray
    plan: np.ndarray
    nonzero_fraction: float
    threshold: float
    status: str
    iterations: int


def nonzero_fraction(plan: np.ndarray, threshold: Optional[float] = None):
    """Fraction of entries above ``threshold`` (default ``1e-8 / (m n)``)."""
    m, n = plan.shape
    thr = 1e-8 / (m * n) if threshold is None else threshold
    return float(np.count_nonzero(plan > thr)) / (m * n), thr


def color_transfer(source, target, k: int = 750, seed: int = 0,
                   config: Optional[DrotConfig] = None) -> ColorTransferResult:
    """Recolor ``source`` with the palette of ``target``.

    Each source palette color becomes the plan-weighted mean of the target
    palette colors it is transported to.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    pal_s = kmeans_quantize(source.reshape(-1, 3), k, seed)
    pal_t = kmeans_quantize(target.reshape(-1, 3), k, seed)
    cost = normalize_cost(squared_euclidean_cost(pal_s.centroids, pal_t.centroids))
    p = pal_s.masses / pal_s.masses.sum()
    q = pal_t.masses / pal_t.masses.sum()
    config = config or DrotConfig(tol_primal=1e-6, tol_dual=1e-6, tol_gap=1e-6, max_iters=20_000,
                                  record_trace=False)
    res = solve(TransportProblem(cost, p, q), config)
    plan = res.plan.x
    row = plan.sum(axis=1)
    mapped = pal_s.centroids.copy()
    ok = row > 0
    mapped[ok] = (plan[ok] @ pal_t.centroids) / row[ok, None]
    out = mapped[pal_s.assignments].reshape(source.shape)
    frac, thr = nonzero_fraction(plan)
    return ColorTransferResult(out, plan, frac, thr, res.status.value, res.iterations)
