import numpy as np
import pytest

from texir.assets import Camera, TextureImage, look_at
from texir.geometry import BVH, texel_surfels
from texir.synthetic import box_faces, build_mesh, paint, render_radiance_view
from texir.assets import Scene, AtlasSettings
from texir.tbl import FILLED, OBSERVED, TblLight, build_tbl_from_views, dilate, query_radiance, tbl_from_scene

from conftest import quad_mesh


def test_furnace_query_is_constant(furnace, rng):
    tbl = tbl_from_scene(furnace.scene)
    x = rng.uniform(0.2, 1.8, size=(500, 3))
    d = rng.normal(size=(500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    np.testing.assert_allclose(tbl.query(x, d), 2.0, rtol=1e-6)


def test_escaping_ray_returns_escape_value():
    m = quad_mesh()
    tbl = TblLight(BVH(m), TextureImage.full(4, 4, (1.0, 1.0, 1.0)))
    np.testing.assert_array_equal(query_radiance(tbl, [0.5, 0.5, 1.0], [0.0, 0.0, 1.0]), [0, 0, 0])
    np.testing.assert_allclose(query_radiance(tbl, [0.5, 0.5, 1.0], [0.0, 0.0, -1.0]), [1, 1, 1])


def test_bright_wall_toward_and_away(bright_wall):
    tbl = tbl_from_scene(bright_wall.scene)
    c = [1.0, 1.0, 1.0]
    np.testing.assert_allclose(query_radiance(tbl, c, [1.0, 0.0, 0.0]), [5, 5, 5], rtol=1e-6)
    np.testing.assert_allclose(query_radiance(tbl, c, [-1.0, 0.0, 0.0]), [0, 0, 0], atol=1e-12)


def test_negative_emission_rejected():
    from texir.errors import InvariantError

    with pytest.raises(InvariantError):
        TblLight(BVH(quad_mesh()), TextureImage(-np.ones((2, 2, 3))))


def _textured_box(res=32):
    rects = box_faces((0, 0, 0), (2, 2, 2), inward=True)
    layout = build_mesh(rects, min_res=res)
    values = np.array([[0.5, 1.0, 2.0], [3.0, 0.2, 0.1], [1.0, 1.0, 1.0],
                       [0.0, 0.5, 4.0], [2.5, 2.5, 0.3], [0.7, 0.1, 0.9]])
    return layout, TextureImage(paint(layout, res, values))


def test_views_roundtrip_center_equirect():
    layout, emissive = _textured_box()
    bvh = BVH(layout.mesh)
    cam = Camera("equirect", 512, 256, np.eye(3), np.array([1.0, 1.0, 1.0]))
    img = render_radiance_view(TblLight(bvh, emissive), cam)
    scene = Scene(layout.mesh, emissive, (cam,), (img,), atlas=AtlasSettings(32, 32, 32), bvh=bvh)
    tbl, cov = build_tbl_from_views(scene)
    src = emissive.data
    # keep surfels away from the box edges, where a camera pixel straddles two faces
    surf = texel_surfels(layout.mesh, 32)
    near_edge = ((surf.position < 0.05) | (surf.position > 1.95)).sum(axis=1)
    interior = np.zeros(src.shape[:2], dtype=bool)
    interior[surf.texel_j, surf.texel_i] = near_edge == 1
    sel = interior & (cov == OBSERVED)
    assert sel.sum() > 200
    np.testing.assert_allclose(tbl.emissive.data[sel], src[sel], rtol=0.01, atol=1e-6)


def test_unseen_texels_are_filled():
    layout, emissive = _textured_box()
    bvh = BVH(layout.mesh)
    eye = np.array([1.0, 1.0, 1.9])
    cam = Camera("pinhole", 32, 32, look_at(eye, [1.0, 1.0, 0.0]), eye, 40.0)
    img = render_radiance_view(TblLight(bvh, emissive), cam)
    scene = Scene(layout.mesh, emissive, (cam,), (img,), bvh=bvh)
    tbl, cov = build_tbl_from_views(scene, res=32)
    assert (cov == OBSERVED).any() and (cov == FILLED).any()
    assert np.isfinite(tbl.emissive.data).all()


def test_frontal_camera_wins():
    m = quad_mesh(size=1.0)
    bvh = BVH(m)
    front = Camera("pinhole", 16, 16, look_at([0.5, 0.5, 2.0], [0.5, 0.5, 0.0]), [0.5, 0.5, 2.0], 60.0)
    graze_eye = np.array([3.0, 0.5, 0.4])
    graze = Camera("pinhole", 16, 16, look_at(graze_eye, [0.5, 0.5, 0.0]), graze_eye, 60.0)
    imgs = (TextureImage.full(16, 16, (1.0, 1.0, 1.0)), TextureImage.full(16, 16, (2.0, 2.0, 2.0)))
    scene = Scene(m, TextureImage.full(4, 4, (0.0,) * 3), (graze, front), imgs, bvh=bvh)
    tbl, cov = build_tbl_from_views(scene, res=4)
    # images are listed (grazing, frontal) with values (1, 2)
    np.testing.assert_allclose(tbl.emissive.data[cov == OBSERVED], 2.0)


def test_dilate_fills_from_neighbors():
    data = np.zeros((3, 3, 1))
    known = np.zeros((3, 3), dtype=bool)
    data[1, 1] = 4.0
    known[1, 1] = True
    filled, k = dilate(data, known)
    assert k.all()
    np.testing.assert_allclose(filled, 4.0)
