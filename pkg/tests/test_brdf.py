import numpy as np
import pytest
from scipy import stats

from texir.brdf import (R_MIN, d_specular_d_roughness, eval_diffuse, eval_specular, fresnel, g1, geometry_k,
                        ndf, sample_cosine, sample_ggx)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_diffuse_values():
    np.testing.assert_allclose(eval_diffuse([1, 1, 1]), [1 / np.pi] * 3)
    np.testing.assert_array_equal(eval_diffuse([0, 0, 0]), [0, 0, 0])
    np.testing.assert_allclose(eval_diffuse([0.6, 0.3, 0.0]), [0.19099, 0.095493, 0.0], atol=1e-5)


def test_ndf_peak():
    assert ndf(1.0, 0.5) == pytest.approx(1.0 / (np.pi * 0.25 ** 2), rel=1e-12)
    assert ndf(1.0, 0.5) == pytest.approx(5.0930, abs=1e-4)


def test_fresnel_limits():
    assert fresnel(1.0) == pytest.approx(0.04 + 0.96 * 2 ** -12.53789, rel=1e-9)
    assert fresnel(1.0) == pytest.approx(0.040161, abs=1e-6)
    assert fresnel(0.0) == 1.0


def test_geometry_terms():
    assert geometry_k(1.0) == 0.5
    assert g1(1.0, 0.5) == 1.0
    assert g1(0.5, 0.125) == pytest.approx(0.5 / 0.5625, rel=1e-12)


def test_specular_zero_below_horizon():
    n = [0, 0, 1]
    assert eval_specular(n, _unit([0, 1, 1]), _unit([0, 1, -0.2]), 0.5) == 0.0
    assert eval_specular(n, _unit([0, 1, -0.1]), _unit([0, -1, 1]), 0.5) == 0.0
    assert d_specular_d_roughness(n, _unit([0, 1, 1]), _unit([0, 1, -0.2]), 0.5) == 0.0


def test_derivative_matches_central_difference(rng):
    h = 1e-4
    n_ok = 0
    while n_ok < 100:
        n = _unit(rng.normal(size=3))
        v = _unit(rng.normal(size=3))
        l = _unit(rng.normal(size=3))
        if n @ v < 0.1 or n @ l < 0.1:
            continue
        r = rng.uniform(0.1, 0.95)
        fd = (eval_specular(n, v, l, r + h) - eval_specular(n, v, l, r - h)) / (2 * h)
        an = d_specular_d_roughness(n, v, l, r)
        assert an == pytest.approx(fd, rel=1e-4, abs=1e-9)
        n_ok += 1


def test_derivative_vanishes_at_roughness_optimum():
    n = np.array([0.0, 0.0, 1.0])
    v = _unit([0.3, 0.0, 1.0])
    l = _unit([-0.5, 0.2, 1.0])
    rs = np.linspace(0.05, 1.0, 2000)
    f = eval_specular(n, v, l, rs)
    k = int(np.argmax(f))
    assert 0 < k < len(rs) - 1
    assert d_specular_d_roughness(n, v, l, rs[k - 1]) > 0 > d_specular_d_roughness(n, v, l, rs[k + 1])


def test_cosine_sampling_basics(rng):
    d, pdf = sample_cosine(0.0, 0.3)
    np.testing.assert_allclose(d, [0, 0, 1], atol=1e-15)
    assert pdf == pytest.approx(1 / np.pi)
    u = rng.random((100000, 2))
    d, pdf = sample_cosine(u[:, 0], u[:, 1])
    assert d[:, 2].mean() == pytest.approx(2 / 3, abs=0.01)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    # importance-sampled integral of the pdf over uniform hemisphere samples
    w = rng.random((200000, 2))
    z = w[:, 0]
    assert np.mean((z / np.pi) * 2 * np.pi) == pytest.approx(1.0, abs=0.01)


def test_ggx_sampling_peak_and_pdf():
    h, pdf = sample_ggx(0.0, 0.7, 0.5)
    np.testing.assert_allclose(h, [0, 0, 1], atol=1e-15)
    assert pdf == pytest.approx(ndf(1.0, 0.5))


def test_ggx_theta_histogram_alpha_one(rng):
    u = rng.random((1_000_000, 2))
    h, _ = sample_ggx(u[:, 0], u[:, 1], 1.0)
    theta = np.arccos(np.clip(h[:, 2], -1, 1))
    edges = np.linspace(0, np.pi / 2, 31)
    counts, _ = np.histogram(theta, edges)
    # expected mass per bin of D cos sin (2 pi) with alpha = 1: the density is 2 sin cos
    cdf = np.sin(edges) ** 2
    expected = np.diff(cdf) * len(theta)
    chi2, p = stats.chisquare(counts, expected)
    assert p > 1e-3


def test_ggx_concentrates_at_min_roughness(rng):
    u = rng.random((100000, 2))
    h, _ = sample_ggx(u[:, 0], u[:, 1], R_MIN)
    assert np.mean(h[:, 2] > 0.999) >= 0.99
