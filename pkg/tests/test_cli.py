import json

import numpy as np
import pytest

from texir.assets import Camera, TextureImage, load_scene, look_at, read_mask_pgm, read_pfm, save_scene, write_pfm
from texir.cli import main
from texir.renderer import luminance, make_gbuffer


@pytest.fixture(scope="session")
def scene_file(small_rooms, tmp_path_factory):
    """The small three-room scene on disk, with ground-truth materials attached."""
    d = tmp_path_factory.mktemp("scene")
    scene = small_rooms.scene.replace(albedo=small_rooms.gt_albedo, roughness=small_rooms.gt_roughness)
    return save_scene(scene, d)


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_help_and_bad_flags(capsys):
    assert main(["--version"]) == 0
    assert main(["render"]) == 2
    assert main(["nonsense"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_mesh_names_the_path(scene_file, tmp_path, capsys):
    desc = json.loads(scene_file.read_text())
    desc["mesh"] = str(tmp_path / "nowhere.obj")
    bad = scene_file.parent / "bad_scene.json"
    bad.write_text(json.dumps(desc))
    assert main(["bake", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "nowhere.obj" in capsys.readouterr().err


def test_missing_scene_file(tmp_path, capsys):
    assert main(["render", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2
    assert "none.json" in capsys.readouterr().err


def test_bake_one_sample(scene_file, tmp_path):
    out = tmp_path / "bake"
    assert main(["bake", str(scene_file), "--samples", "1", "--irt-res", "16", "--out", str(out)]) == 0
    irt = read_pfm(out / "irt.pfm")
    assert (irt.width, irt.height) == (16, 16)
    assert irt.is_finite() and (irt.data >= 0).all()
    m = _manifest(out)
    assert m["command"] == "bake" and m["hyperparameters"]["samples"] == 1
    assert set(m["outputs"]) >= {"irt", "irt_coverage", "scene"}
    baked = load_scene(m["outputs"]["scene"])
    assert baked.irradiance is not None


def test_eval_identical(scene_file, tmp_path, capsys):
    img = scene_file.parent / "view_000.pfm"
    out = tmp_path / "eval"
    assert main(["eval", str(img), str(img), "--out", str(out)]) == 0
    metrics = _manifest(out)["metrics"]
    assert metrics["psnr"] == 99.0 and metrics["ssim"] == pytest.approx(1.0)
    assert json.loads(capsys.readouterr().out)["mse"] == 0.0


def test_eval_shape_mismatch(tmp_path):
    a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
    write_pfm(TextureImage.full(16, 16, (0.1, 0.1, 0.1)), a)
    write_pfm(TextureImage.full(16, 12, (0.1, 0.1, 0.1)), b)
    assert main(["eval", str(a), str(b), "--out", str(tmp_path / "o")]) == 2


def test_optimize_stage_one_then_two(scene_file, tmp_path):
    out = tmp_path / "opt"
    base = ["optimize", str(scene_file), "--epochs", "1", "--samples", "4", "--vhl-samples", "8", "--out", str(out)]
    assert main(base + ["--stages", "2"]) == 2  # no stage-1 checkpoint yet
    assert main(base + ["--stages", "1"]) == 0
    assert (out / "albedo.pfm").exists()
    assert not (out / "roughness.pfm").exists()
    m = _manifest(out)
    assert list(m["losses"]) == ["stage1"] and m["hyperparameters"]["epochs"] == 1
    assert main(base + ["--stages", "2"]) == 0
    assert (out / "roughness.pfm").exists()
    assert "stage2" in _manifest(out)["losses"]


def test_optimize_needs_semantic_mask(scene_file, tmp_path, capsys):
    desc = json.loads(scene_file.read_text())
    desc.pop("semantic_mask")
    bad = scene_file.parent / "no_semantic.json"
    bad.write_text(json.dumps(desc))
    assert main(["optimize", str(bad), "--epochs", "1", "--out", str(tmp_path / "o")]) == 2
    assert "semantic" in capsys.readouterr().err


def _render(scene_file, out, *extra):
    args = ["render", str(scene_file), "--samples", "8", "--out", str(out), *extra]
    assert main(args) == 0
    return out


def test_edit_changes_only_the_class(scene_file, tmp_path):
    eye, target = (2.0, 1.2, 1.0), (2.5, 2.5, 2.0)
    view = ["--eye", "2,1.2,1", "--target", "2.5,2.5,2", "--size", "32,24"]
    before = read_pfm(_render(scene_file, tmp_path / "before", *view) / "render_novel.pfm")
    edit = tmp_path / "edit"
    assert main(["edit", str(scene_file), "--class", "3", "--albedo", "1,0,0", "--out", str(edit)]) == 0
    after = read_pfm(_render(scene_file, tmp_path / "after", *view, "--albedo", str(edit / "albedo.pfm"))
                     / "render_novel.pfm")
    scene = load_scene(scene_file)
    cam = Camera("pinhole", 32, 24, look_at(eye, target), np.asarray(eye), 60.0)
    cls = make_gbuffer(scene, cam).class_id.reshape(24, 32)
    changed = np.abs(after.data - before.data).max(axis=2) > 0
    assert changed.any()
    assert (cls[changed] == 3).all()
    # class-3 pixels turn red: green and blue lose their diffuse part
    ceil = cls == 3
    assert (after.data[ceil][:, 1] <= before.data[ceil][:, 1]).all()
    assert (after.data[ceil][:, 0] >= before.data[ceil][:, 0]).all()


def test_edit_rejects_bad_values(scene_file, tmp_path):
    out = str(tmp_path / "e")
    assert main(["edit", str(scene_file), "--class", "3", "--out", out]) == 2
    assert main(["edit", str(scene_file), "--class", "3", "--albedo", "2,0,0", "--out", out]) == 2


def test_relight_doubles(scene_file, tmp_path):
    scene = load_scene(scene_file)
    doubled = tmp_path / "double.pfm"
    write_pfm(TextureImage(scene.emissive.data * 2.0), doubled)
    same = tmp_path / "same.pfm"
    write_pfm(scene.emissive, same)
    common = ["--camera", "0", "--samples", "8", "--bake-samples", "32", "--irt-res", "16"]
    assert main(["relight", str(scene_file), "--emissive", str(same), *common, "--out", str(tmp_path / "a")]) == 0
    assert main(["relight", str(scene_file), "--emissive", str(doubled), *common, "--out", str(tmp_path / "b")]) == 0
    a = read_pfm(tmp_path / "a" / "render_000.pfm").data
    b = read_pfm(tmp_path / "b" / "render_000.pfm").data
    np.testing.assert_allclose(luminance(b.reshape(-1, 3)), 2.0 * luminance(a.reshape(-1, 3)), rtol=1e-5)


def test_relight_rejects_resolution_mismatch(scene_file, tmp_path):
    small = tmp_path / "small.pfm"
    write_pfm(TextureImage.full(8, 8, (1.0, 1.0, 1.0)), small)
    assert main(["relight", str(scene_file), "--emissive", str(small), "--out", str(tmp_path / "o")]) == 2


def test_render_is_reproducible_and_never_touches_inputs(scene_file, tmp_path):
    before = {p.name: p.read_bytes() for p in scene_file.parent.iterdir() if p.is_file()}
    a = _render(scene_file, tmp_path / "a", "--camera", "1", "--seed", "5")
    b = _render(scene_file, tmp_path / "b", "--camera", "1", "--seed", "5")
    assert (a / "render_001.pfm").read_bytes() == (b / "render_001.pfm").read_bytes()
    assert (a / "render_001.ppm").exists()
    after = {p.name: p.read_bytes() for p in scene_file.parent.iterdir() if p.is_file() and p.name in before}
    assert after == before
    assert main(["render", str(scene_file), "--camera", "99", "--out", str(tmp_path / "c")]) == 2
    assert main(["render", str(scene_file), "--eye", "1,1,1", "--out", str(tmp_path / "d")]) == 2


def test_refuses_to_overwrite_inputs(scene_file, tmp_path):
    albedo = scene_file.parent / "albedo.pfm"
    snapshot = albedo.read_bytes()
    code = main(["edit", str(scene_file), "--class", "3", "--albedo", "1,0,0", "--albedo-texture", str(albedo),
                 "--out", str(scene_file.parent)])
    assert code == 2
    assert albedo.read_bytes() == snapshot


def test_rooms_command(small_rooms, tmp_path, capsys):
    from texir.synthetic import two_room_mesh

    scene = small_rooms.scene
    d = save_scene(scene.replace(mesh=two_room_mesh("open"), bvh=None), tmp_path / "two")
    out = tmp_path / "rooms"
    assert main(["rooms", str(d), "--res", "16", "--out", str(out)]) == 0
    assert "rooms: 2" in capsys.readouterr().out
    assert _manifest(out)["n_rooms"] == 2
    assert read_mask_pgm(out / "room_grid.pgm").ids.max() == 2
    assert main(["rooms", str(d), "--door-width", "0", "--res", "16", "--out", str(tmp_path / "r0")]) == 0
    assert "rooms: 1" in capsys.readouterr().out


def test_vhl_command(scene_file, tmp_path):
    out = tmp_path / "vhl"
    assert main(["vhl", str(scene_file), "--samples", "16", "--out", str(out)]) == 0
    m = _manifest(out)
    assert 1 in m["classes_with_vhl"]
    assert (out / "vhl_000.pgm").exists()


def test_spheres_command(tmp_path):
    scene_dir = tmp_path / "box"
    assert main(["make-scene", "bright-wall", "--res", "16", "--value", "1.0", "--out", str(scene_dir)]) == 0
    out = tmp_path / "spheres"
    code = main(["spheres", str(scene_dir / "scene.json"), "--probe", "1,1,1", "--fit-samples", "2000",
                 "--resolution", "16", "--samples", "16", "--out", str(out)])
    assert code == 0
    report = _manifest(out)["metrics"]
    assert set(report) == {"diffuse", "matte_silver", "mirror_silver"}
    assert report["mirror_silver"]["tbl"]["mae"] == 0.0
    assert (out / "sphere_mirror_silver_sg.pfm").exists()


def test_threads_flag_validation(scene_file, tmp_path):
    img = str(scene_file.parent / "view_000.pfm")
    assert main(["eval", img, img, "--threads", "0", "--out", str(tmp_path / "o")]) == 2
    assert main(["eval", img, img, "--threads", "1", "--out", str(tmp_path / "o")]) == 0
    assert _manifest(tmp_path / "o")["threads"] == 1
