import numpy as np
import pytest

from drot import DrotConfig
from drot.color import (color_transfer, kmeans_quantize, load_rgb, nonzero_fraction, sample_image_path,
                        save_rgb)
from drot.errors import EmptyImage, KTooLarge


def palette_image(seed=0, h=12, w=10, k=5):
    rng = np.random.default_rng(seed)
    colors = rng.random((k, 3))
    labels = rng.integers(0, k, size=h * w)
    labels[:k] = np.arange(k)
    return colors, colors[labels].reshape(h, w, 3)


class TestKmeans:
    def test_exact_k_colors(self):
        colors, img = palette_image()
        pal = kmeans_quantize(img.reshape(-1, 3), 5, seed=1)
        got = sorted(map(tuple, np.round(pal.centroids, 12)))
        assert got == sorted(map(tuple, np.round(colors, 12)))
        px = img.reshape(-1, 3)
        for c, mass in zip(pal.centroids, pal.masses):
            frac = np.mean(np.all(np.isclose(px, c), axis=1))
            assert mass == pytest.approx(frac)
        np.testing.assert_allclose(pal.centroids[pal.assignments], px, atol=1e-12)

    def test_k_one_is_mean(self):
        _, img = palette_image(2)
        pal = kmeans_quantize(img, 1)
        np.testing.assert_allclose(pal.centroids[0], img.reshape(-1, 3).mean(axis=0), atol=1e-12)
        assert pal.masses.tolist() == [1.0]

    def test_deterministic(self):
        img = np.random.default_rng(3).random((20, 20, 3))
        a, b = kmeans_quantize(img, 8, seed=7), kmeans_quantize(img, 8, seed=7)
        assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.assignments, b.assignments)
        assert a.masses.sum() == pytest.approx(1.0)

    def test_errors(self):
        _, img = palette_image()
        with pytest.raises(KTooLarge):
            kmeans_quantize(img, 6)
        with pytest.raises(KTooLarge):
            kmeans_quantize(img, 0)
        with pytest.raises(EmptyImage):
            kmeans_quantize(np.zeros((0, 3)), 1)


def test_identical_images_transfer_to_themselves():
    _, img = palette_image(4, k=6)
    res = color_transfer(img, img, k=6)
    pal = kmeans_quantize(img.reshape(-1, 3), 6)
    off = res.plan - np.diag(np.diag(res.plan))
    assert np.abs(off).max() <= 1e-6
    np.testing.assert_allclose(res.image, pal.centroids[pal.assignments].reshape(img.shape), atol=1e-5)


def test_row_masses_match_source_palette():
    rng = np.random.default_rng(5)
    src, tgt = rng.random((16, 16, 3)), rng.random((16, 16, 3)) ** 2
    cfg = DrotConfig(tol_primal=1e-7, tol_dual=1e-7, tol_gap=1e-7, max_iters=50_000, record_trace=False)
    res = color_transfer(src, tgt, k=12, config=cfg)
    pal = kmeans_quantize(src.reshape(-1, 3), 12)
    np.testing.assert_allclose(res.plan.sum(axis=1), pal.masses, atol=1e-6)
    assert res.status == "converged"
    assert res.image.shape == src.shape


def test_nonzero_fraction_threshold():
    plan = np.array([[0.5, 1e-12], [0.0, 0.5]])
    frac, thr = nonzero_fraction(plan)
    assert thr == 1e-8 / 4 and frac == 0.5


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)) / 255.0
    save_rgb(tmp_path / "x.png", img)
    np.testing.assert_array_equal(load_rgb(tmp_path / "x.png"), img)


def test_bundled_images_load():
    for name in ("chelsea.png", "coffee.png"):
        img = load_rgb(sample_image_path(name))
        assert img.ndim == 3 and img.shape[2] == 3 and img.size > 0
