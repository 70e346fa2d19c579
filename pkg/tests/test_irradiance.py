import numpy as np
import pytest

from texir.assets import TextureImage
from texir.irradiance import (IrradianceTexture, NeuralIrradianceField, NirfConfig, bake_irt, gather_irradiance,
                              query_irradiance, train_nirf)
from texir.synthetic import furnace_box
from texir.tbl import tbl_from_scene


def test_furnace_bake_is_pi_l0(furnace):
    irt = bake_irt(furnace.scene, tbl_from_scene(furnace.scene), res=16, n_samples=256, seed=3)
    data = irt.texture.data[irt.coverage]
    np.testing.assert_allclose(data, 2.0 * np.pi, rtol=1e-3)


def test_zero_light_bakes_zero():
    syn = furnace_box(radiance=0.0, res=16)
    irt = bake_irt(syn.scene, tbl_from_scene(syn.scene), res=16, n_samples=16)
    assert np.all(irt.texture.data == 0.0)


def test_single_sample_bake_is_finite(bright_wall):
    irt = bake_irt(bright_wall.scene, tbl_from_scene(bright_wall.scene), res=8, n_samples=1)
    assert np.isfinite(irt.texture.data).all()


def test_bake_matches_reference_gather(bright_wall, rng):
    from texir.geometry import texel_surfels

    scene = bright_wall.scene
    tbl = tbl_from_scene(scene)
    irt = bake_irt(scene, tbl, res=16, n_samples=2048, seed=0)
    s = texel_surfels(scene.mesh, 16)
    pick = rng.choice(len(s), size=12, replace=False)
    ref = gather_irradiance(tbl, s.position[pick], s.normal[pick], n_samples=100000, seed=11)
    got = irt.texture.data[s.texel_j[pick], s.texel_i[pick]]
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 0.02


def test_bake_is_deterministic(bright_wall):
    tbl = tbl_from_scene(bright_wall.scene)
    a = bake_irt(bright_wall.scene, tbl, res=8, n_samples=64, seed=5)
    b = bake_irt(bright_wall.scene, tbl, res=8, n_samples=64, seed=5)
    assert a.texture == b.texture


def test_query_at_texel_center_and_midway():
    data = np.zeros((1, 2, 3))
    data[0, 0] = [1.0, 2.0, 3.0]
    data[0, 1] = [3.0, 6.0, 9.0]
    irt = IrradianceTexture(TextureImage(data), 1, np.ones((1, 2), dtype=bool))
    np.testing.assert_allclose(query_irradiance(irt, uv=[[0.25, 0.5]]), [[1, 2, 3]])
    np.testing.assert_allclose(query_irradiance(irt, uv=[[0.5, 0.5]]), [[2, 4, 6]])


# --- neural irradiance field ------------------------------------------------------


def _model(**kw):
    args = dict(n_hidden=2, width=32, epochs=800, batch_size=32, learning_rate=3e-3, random_state=0)
    args.update(kw)
    return NeuralIrradianceField(**args)


def test_nirf_fits_constant(rng):
    X = rng.uniform(0, 2, (256, 3))
    c = 3.0
    m = _model().fit(X, np.full((256, 3), c))
    pred = m.predict(rng.uniform(0, 2, (200, 3)))
    np.testing.assert_allclose(pred, c, rtol=0.02)
    assert np.mean((pred - c) ** 2) < (0.02 * c) ** 2


def test_nirf_zero_targets(rng):
    X = rng.uniform(0, 2, (256, 3))
    m = _model().fit(X, np.zeros((256, 3)))
    assert m.predict(X).max() < 1e-3


def test_nirf_gradient_matches_finite_differences(rng):
    m = _model(epochs=0)
    X = rng.uniform(0, 1, (16, 3))
    y = rng.uniform(0, 2, (16, 3))
    m.bounds_ = (np.zeros(3), np.ones(3))
    params = m._init_params(np.random.default_rng(0))
    E = m._encode(X)
    _, grads = m._loss_grad(params, E, y)
    h = 1e-6
    for name in ("W0", "b0", "W1", "b2"):
        flat = params[name].ravel()
        for k in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + h
            lp = m._loss_grad(params, E, y)[0]
            flat[k] = old - h
            lm = m._loss_grad(params, E, y)[0]
            flat[k] = old
            fd = (lp - lm) / (2 * h)
            assert grads[name].ravel()[k] == pytest.approx(fd, rel=1e-3, abs=1e-10)


def test_nirf_furnace_heldout():
    syn = furnace_box(2.0, res=16)
    cfg = NirfConfig(n_points=128, gather_samples=256, epochs=800, batch_size=32, learning_rate=3e-3)
    model, (X, y) = train_nirf(syn.scene, tbl_from_scene(syn.scene), cfg)
    held = np.random.default_rng(9).uniform(0.1, 1.9, (50, 3))
    np.testing.assert_allclose(query_irradiance(model, x=held), 2.0 * np.pi, rtol=0.05)


def test_nirf_save_load_roundtrip(tmp_path, rng):
    X = rng.uniform(0, 2, (64, 3))
    m = _model(epochs=5).fit(X, rng.uniform(0, 1, (64, 3)))
    m.save(tmp_path / "w.nirf")
    back = NeuralIrradianceField.load(tmp_path / "w.nirf")
    np.testing.assert_allclose(back.predict(X), m.predict(X), rtol=1e-5, atol=1e-6)


def test_nirf_rejects_negative_targets(rng):
    from texir.errors import InputError

    with pytest.raises(InputError):
        _model(epochs=1).fit(rng.random((4, 3)), -np.ones((4, 3)))
