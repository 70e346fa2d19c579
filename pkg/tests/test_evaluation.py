import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from texir.errors import InputError
from texir.evaluation import (SgLighting, ShLighting, compare_images, fibonacci_sphere, mae, mse, psnr, sg_eval,
                              sh_basis, sh_eval, sh_project, sphere_harness, sphere_image, ssim, uniform_sphere)
from texir.tbl import TblLight


# ---------------------------------------------------------------------------
# metrics


def test_metric_examples(rng):
    a = rng.random((16, 16, 3))
    assert mse(a, a) == 0.0 and psnr(a, a) == 99.0 and mae(a, a) == 0.0
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)
    assert mae(np.zeros((3, 3, 3)), np.ones((3, 3, 3))) == 1.0
    with pytest.raises(InputError):
        mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_metrics_separate_distinct_images(rng):
    for _ in range(5):
        a, b = rng.random((2, 16, 16, 3))
        assert mse(a, b) > 0 and mae(a, b) > 0 and psnr(a, b) < 99.0 and ssim(a, b) < 1.0


def test_ssim_identity_symmetry_and_constant():
    rng = np.random.default_rng(0)
    a, b = rng.random((2, 24, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    expect = (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1) * (c2 / c2)
    assert ssim(np.full((16, 16), 0.5), np.full((16, 16), 0.6)) == pytest.approx(expect, abs=1e-12)
    with pytest.raises(InputError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_matches_skimage():
    rng = np.random.default_rng(1)
    a = rng.random((32, 40, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, channel_axis=2, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_compare_images_tonemaps():
    a = np.full((16, 16, 3), 5.0)
    b = np.full((16, 16, 3), 9.0)
    out = compare_images(a, b)
    assert out["mse"] == 0.0 and out["psnr"] == 99.0  # both clamp to white


# ---------------------------------------------------------------------------
# spherical harmonics


def test_sh_basis_orthonormal():
    d = fibonacci_sphere(40000)
    y = sh_basis(d, 5)
    gram = 4 * np.pi / len(d) * y.T @ y
    np.testing.assert_allclose(gram, np.eye(36), atol=2e-3)


def test_sh_constant_projection():
    d = uniform_sphere(1_000_000, seed=3)
    sh = ShLighting(5).fit(d, np.ones((len(d), 3)))
    assert sh.coef_.shape == (36, 3)
    np.testing.assert_allclose(sh.coef_[0], 2 * math.sqrt(math.pi), rtol=1e-9)
    assert np.abs(sh.coef_[1:]).max() < 0.01
    # the 35 noisy higher coefficients add up at evaluation; four independent
    # 10^6-sample projections averaged bring the reconstruction inside 1%
    fits = [sh.coef_] + [ShLighting(5).fit(x, np.ones((len(x), 3))).coef_
                         for x in (uniform_sphere(1_000_000, seed=s) for s in (4, 5, 6))]
    sh.coef_ = np.mean(fits, axis=0)
    np.testing.assert_allclose(sh_eval(sh, fibonacci_sphere(2000)), 1.0, rtol=0.01)


def test_sh_y10_projection():
    d = fibonacci_sphere(100000)
    y10 = math.sqrt(3 / (4 * math.pi)) * d[:, 2]
    sh = ShLighting(5).fit(d, y10[:, None])
    c = sh.coef_[:, 0]
    assert c[2] == pytest.approx(1.0, abs=0.01)
    assert np.abs(np.delete(c, 2)).max() < 0.01


def test_sh_error_non_increasing_in_order():
    d = fibonacci_sphere(20000)
    f = np.exp(3.0 * (d @ np.array([0.3, 0.5, 0.81]) - 1.0))[:, None]
    errs = [np.mean((ShLighting(k).fit(d, f).predict(d) - f) ** 2) for k in range(6)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


# ---------------------------------------------------------------------------
# spherical Gaussians


def test_sg_single_lobe_peak():
    sg = SgLighting(n_lobes=1)
    sg.axes_ = np.array([[0.0, 0.0, 1.0]])
    sg.sharpness_ = np.array([5.0])
    sg.amplitudes_ = np.array([[2.0, 1.0, 0.5]])
    np.testing.assert_allclose(sg_eval(sg, [[0, 0, 1]]), [[2.0, 1.0, 0.5]])
    assert (sg_eval(sg, uniform_sphere(100)) >= 0).all()


def test_sg_constant_fit():
    d = fibonacci_sphere(4000)
    sg = SgLighting().fit(d, np.full((len(d), 3), 1.5))
    q = fibonacci_sphere(5000)
    rel = sg.predict(q) / 1.5 - 1.0
    # 500 default steps: 1.4% rms, 3.5% worst direction (lobes still relaxing)
    assert np.sqrt(np.mean(rel ** 2)) < 0.02
    assert np.abs(rel).max() < 0.04
    assert sg.loss_curve_[-1] < sg.loss_curve_[0]
    longer = SgLighting(steps=2000).fit(d, np.full((len(d), 3), 1.5))
    np.testing.assert_allclose(longer.predict(q), 1.5, rtol=0.01)
    assert np.allclose(np.linalg.norm(sg.axes_, axis=1), 1.0)
    assert (sg.sharpness_ > 0).all() and (sg.amplitudes_ >= 0).all()


def test_sg_beats_sh_on_a_small_bright_source():
    d = uniform_sphere(20000, seed=1)
    src = np.array([0.0, 0.6, 0.8])
    f = np.where(d @ src > math.cos(math.radians(12)), 10.0, 0.2)[:, None] * np.ones(3)
    q = fibonacci_sphere(8000)
    fq = np.where(q @ src > math.cos(math.radians(12)), 10.0, 0.2)[:, None] * np.ones(3)
    sh_err = np.abs(ShLighting(5).fit(d, f).predict(q) - fq).mean()
    sg_err = np.abs(SgLighting().fit(d, f).predict(q) - fq).mean()
    assert sg_err < sh_err


# ---------------------------------------------------------------------------
# sphere harness


def test_tbl_self_comparison(bright_wall):
    tbl = TblLight(bright_wall.scene.bvh, bright_wall.scene.emissive)
    report, images = sphere_harness({"tbl": tbl, "tbl2": tbl}, (1.0, 1.0, 1.0), (0, 0, 1), resolution=16,
                                    n_samples=16)
    for mat in report:
        assert report[mat]["tbl"]["mae"] == 0.0
        assert report[mat]["tbl2"]["mae"] == 0.0
        assert report[mat]["tbl"]["ssim"] == pytest.approx(1.0)


def test_diffuse_sphere_constant_environment(furnace):
    tbl = TblLight(furnace.scene.bvh, furnace.scene.emissive)
    x = (1.0, 1.0, 1.0)
    sh = sh_project(tbl, x)
    sg = SgLighting().fit(*_probe(tbl, x))
    imgs = {name: sphere_image(light, "diffuse", x, (0.2, 0.3, 1.0), resolution=16, n_samples=64)
            for name, light in {"tbl": tbl, "sh": sh, "sg": sg}.items()}
    ref = imgs["tbl"]
    on = ref.sum(axis=2) > 0
    # 0.8 * L0 from the diffuse lobe plus a small specular sheen
    assert (ref[on] > 1.6).all() and (ref[on] < 1.8).all()
    np.testing.assert_allclose(imgs["sh"][on], ref[on], rtol=0.02)
    for name in ("sh", "sg"):
        assert np.abs(imgs[name][on] - ref[on]).mean() / ref[on].mean() < 0.02


def _probe(tbl, x, n=4000):
    from texir.evaluation import probe_samples

    return probe_samples(tbl, x, n, seed=0)


def test_sphere_unknown_material(furnace):
    tbl = TblLight(furnace.scene.bvh, furnace.scene.emissive)
    with pytest.raises(InputError):
        sphere_image(tbl, "velvet", (1, 1, 1), (0, 0, 1))
    with pytest.raises(InputError):
        sphere_harness({"sh": None}, (1, 1, 1), (0, 0, 1))
