"""Command-line driver: ``texir <command> ...``.

Every command reads its inputs, writes everything under ``--out`` and
finishes by atomically writing ``manifest.json`` there. Exit codes: 0 ok,
1 internal error, 2 bad input, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .assets import (Camera, MaskImage, TextureImage, load_scene, look_at, read_pfm, save_scene,
                     write_json_atomic, write_mask_pgm, write_pfm, write_ppm_preview)
from .errors import InputError, TexirError

log = logging.getLogger("texir")

THREADS_ENV = "TEXIR_THREADS"


# ---------------------------------------------------------------------------
# argument helpers


def _floats(n):
    def parse(text):
        try:
            vals = [float(t) for t in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}") from None
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals

    return parse


def _stages(text):
    try:
        stages = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad stage list {text!r}") from None
    if not stages or any(s not in (1, 2, 3) for s in stages):
        raise argparse.ArgumentTypeError("stages must be drawn from 1,2,3")
    return stages


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(p, seed=True):
    p.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${THREADS_ENV}, else all cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _material_flags(p):
    p.add_argument("--albedo", type=Path, help="albedo texture PFM (default: the scene's)")
    p.add_argument("--roughness", type=Path, help="roughness texture PFM (default: the scene's)")
    p.add_argument("--irradiance", type=Path, help="irradiance texture PFM (default: the scene's)")


def _camera_flags(p):
    p.add_argument("--camera", type=int, action="append",
                   help="input camera index to render (repeatable; default all)")
    p.add_argument("--eye", type=_floats(3), help="novel view: camera position x,y,z")
    p.add_argument("--target", type=_floats(3), help="novel view: look-at point x,y,z")
    p.add_argument("--fov", type=float, default=60.0, help="novel view: horizontal field of view in degrees")
    p.add_argument("--size", type=_floats(2), default=[160, 120], help="novel view: width,height in pixels")
    p.add_argument("--samples", type=int, default=64, help="specular samples per pixel (default 64)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="texir", description="Texture-based lighting inverse rendering.")
    parser.add_argument("--version", action="version", version=f"texir {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bake", help="build the lighting and bake the irradiance texture")
    p.add_argument("scene", type=Path, help="scene JSON")
    p.add_argument("--irt-res", type=int, help="irradiance atlas resolution (default: scene atlas, 256)")
    p.add_argument("--samples", type=int, default=2048, help="cosine samples per texel (default 2048)")
    p.add_argument("--tbl-source", choices=("emissive", "views"), default="emissive",
                   help="lighting from the scene's emissive atlas or rebuilt from the input views")
    _common(p)

    p = sub.add_parser("optimize", help="estimate albedo and roughness textures")
    p.add_argument("scene", type=Path, help="scene JSON (needs a semantic mask and irradiance)")
    p.add_argument("--stages", type=_stages, default=[1, 2, 3], help="stages to run, e.g. 1,2,3 (default)")
    p.add_argument("--init-albedo", type=Path, help="starting albedo PFM; allows stage 2/3 without stage 1")
    p.add_argument("--irradiance", type=Path, help="irradiance PFM overriding the scene's")
    p.add_argument("--epochs", type=int, default=40, help="epochs per stage (default 40)")
    p.add_argument("--lr", type=float, default=3e-2, help="Adam learning rate (default 0.03)")
    p.add_argument("--samples", type=int, default=16, help="specular samples per pixel and step (default 16)")
    p.add_argument("--sampler", choices=("mixture", "cosine", "ggx"), default="mixture",
                   help="specular sampler during optimization (default mixture)")
    p.add_argument("--vhl-samples", type=int, default=64, help="samples for highlight detection (default 64)")
    p.add_argument("--beta-ssa", type=float, default=10.0, help="albedo semantic smoothness weight")
    p.add_argument("--beta-sp", type=float, default=1.0, help="roughness propagation weight")
    p.add_argument("--beta-ssr", type=float, default=0.1, help="roughness smoothness weight")
    p.add_argument("--q", type=float, default=0.4, help="highlight roughness quantile (default 0.4)")
    p.add_argument("--albedo-res", type=int, help="albedo atlas resolution (default: scene atlas, 512)")
    p.add_argument("--roughness-res", type=int, help="roughness atlas resolution (default: scene atlas, 512)")
    p.add_argument("--no-checkpoints", action="store_true", help="skip per-stage checkpoints")
    _common(p)

    p = sub.add_parser("render", help="render input cameras or a novel view")
    p.add_argument("scene", type=Path, help="scene JSON")
    _material_flags(p)
    _camera_flags(p)
    _common(p)

    p = sub.add_parser("relight", help="swap the emissive atlas, rebake irradiance and render")
    p.add_argument("scene", type=Path, help="scene JSON")
    p.add_argument("--emissive", type=Path, required=True, help="replacement emissive PFM (same resolution)")
    p.add_argument("--irt-res", type=int, help="irradiance atlas resolution")
    p.add_argument("--bake-samples", type=int, default=2048, help="samples per texel for the rebake")
    p.add_argument("--albedo", type=Path, help="albedo texture PFM (default: the scene's)")
    p.add_argument("--roughness", type=Path, help="roughness texture PFM (default: the scene's)")
    _camera_flags(p)
    _common(p)

    p = sub.add_parser("edit", help="overwrite the material of one semantic class")
    p.add_argument("scene", type=Path, help="scene JSON (needs a semantic mask)")
    p.add_argument("--class", dest="class_id", type=int, required=True, help="semantic class id")
    p.add_argument("--albedo", dest="albedo_value", type=_floats(3), help="new albedo r,g,b")
    p.add_argument("--roughness", dest="roughness_value", type=float, help="new roughness")
    p.add_argument("--albedo-texture", type=Path, help="albedo PFM to edit (default: the scene's)")
    p.add_argument("--roughness-texture", type=Path, help="roughness PFM to edit (default: the scene's)")
    _common(p, seed=False)

    p = sub.add_parser("rooms", help="segment rooms from an occupancy slice")
    p.add_argument("scene", type=Path, help="scene JSON")
    p.add_argument("--cell-size", type=float, default=0.1, help="grid cell size in meters (default 0.1)")
    p.add_argument("--door-width", type=float, default=1.2,
                   help="openings up to this width (m) split rooms; 0 joins connected space (default 1.2)")
    p.add_argument("--slice", type=_floats(2), default=[0.5, 1.5], help="height slice lo,hi (default 0.5,1.5)")
    p.add_argument("--res", type=int, help="texture resolution of the room map (default: roughness atlas)")
    _common(p, seed=False)

    p = sub.add_parser("vhl", help="detect virtual highlights in the input views")
    p.add_argument("scene", type=Path, help="scene JSON (needs a semantic mask)")
    p.add_argument("--albedo", type=Path, help="albedo PFM for the diffuse reference (default: scene's, else 0.5)")
    p.add_argument("--irradiance", type=Path, help="irradiance PFM (default: the scene's)")
    p.add_argument("--samples", type=int, default=64, help="specular samples per pixel (default 64)")
    p.add_argument("--tau-abs", type=float, default=0.05, help="absolute luminance threshold")
    p.add_argument("--tau-rel", type=float, default=1.0, help="threshold relative to median diffuse luminance")
    _common(p)

    p = sub.add_parser("eval", help="image metrics between two PFMs")
    p.add_argument("a", type=Path, help="first image")
    p.add_argument("b", type=Path, help="second image (reference)")
    p.add_argument("--linear", action="store_true", help="compare raw HDR values instead of tonemapped ones")
    _common(p, seed=False)

    p = sub.add_parser("spheres", help="render probe spheres under TBL, SH and SG lighting")
    p.add_argument("scene", type=Path, help="scene JSON")
    p.add_argument("--probe", type=_floats(3), required=True, help="probe position x,y,z")
    p.add_argument("--view", type=_floats(3), default=[0.0, 0.0, 1.0], help="direction toward the viewer")
    p.add_argument("--sh-order", type=int, default=5, help="SH band count (default 5)")
    p.add_argument("--sg-lobes", type=int, default=12, help="number of SG lobes (default 12)")
    p.add_argument("--fit-samples", type=int, default=20000, help="radiance samples for SH/SG fits")
    p.add_argument("--resolution", type=int, default=64, help="sphere image size (default 64)")
    p.add_argument("--samples", type=int, default=256, help="shading samples per pixel (default 256)")
    _common(p)

    p = sub.add_parser("make-scene", help="write one of the bundled synthetic scenes")
    p.add_argument("kind", choices=("furnace", "bright-wall", "three-room"))
    p.add_argument("--res", type=int, default=32, help="atlas resolution for the box scenes")
    p.add_argument("--value", type=float, default=None, help="emitted radiance of the box scenes")
    _common(p, seed=False)
    return parser


# ---------------------------------------------------------------------------
# shared plumbing


def set_threads(n: int | None) -> int:
    import numba

    if n is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                n = int(env)
            except ValueError:
                raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n is None else n
    if not 1 <= n <= limit:
        raise InputError(f"thread count must lie in 1..{limit}, got {n}")
    numba.set_num_threads(n)
    return n


class Run:
    """Collects outputs and timings and writes the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.manifest = {
            "command": args.command,
            "argv": list(argv),
            "version": __version__,
            "scene": str(Path(args.scene).resolve()) if getattr(args, "scene", None) else None,
            "seeds": {"seed": getattr(args, "seed", None)},
            "threads": None,
            "hyperparameters": {},
            "losses": {},
            "timings": {},
            "outputs": {},
        }

    def path(self, name: str) -> Path:
        p = self.out / name
        self._guard(p)
        return p

    def _guard(self, p: Path) -> None:
        inputs = [v for v in vars(self.args).values() if isinstance(v, Path) and v != self.out]
        for q in inputs:
            if q.exists() and q.resolve() == p.resolve():
                raise InputError(f"refusing to overwrite input file {q}")

    def output(self, key: str, path: Path) -> None:
        self.manifest["outputs"][key] = str(path)

    def pfm(self, key: str, image, name: str, preview: bool = False) -> Path:
        p = self.path(name)
        write_pfm(image, p)
        self.output(key, p)
        if preview:
            write_ppm_preview(image, p.with_suffix(".ppm"))
        return p

    def finish(self) -> Path:
        self.manifest["timings"]["total"] = time.perf_counter() - self.t0
        p = self.out / "manifest.json"
        write_json_atomic(p, _jsonable(self.manifest))
        return p


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _texture(path, fallback, what: str):
    if path is not None:
        return read_pfm(path)
    if fallback is None:
        raise InputError(f"no {what} texture: the scene has none and --{what} was not given")
    return fallback


def _cameras(args, scene) -> list[tuple[str, Camera]]:
    if args.eye is not None or args.target is not None:
        if args.eye is None or args.target is None:
            raise InputError("a novel view needs both --eye and --target")
        w, h = (int(v) for v in args.size)
        cam = Camera("pinhole", w, h, look_at(args.eye, args.target), np.asarray(args.eye), args.fov)
        return [("novel", cam)]
    idx = args.camera if args.camera else range(len(scene.cameras))
    out = []
    for k in idx:
        if not 0 <= k < len(scene.cameras):
            raise InputError(f"camera index {k} out of range (scene has {len(scene.cameras)})")
        out.append((f"{k:03d}", scene.cameras[k]))
    if not out:
        raise InputError("scene has no cameras; pass --eye and --target for a novel view")
    return out


def _render_all(run, scene, cams, tbl, irradiance, albedo, roughness, samples, seed, emitters=None):
    from .renderer import RenderConfig, render

    cfg = RenderConfig(n_samples=samples, sampler="ggx", seed=seed)
    for name, cam in cams:
        img = render(scene, cam, cfg, tbl=tbl, irradiance=irradiance, albedo=albedo, roughness=roughness,
                     emitters=emitters)
        run.pfm(f"render_{name}", img, f"render_{name}.pfm", preview=True)


# ---------------------------------------------------------------------------
# commands


def cmd_bake(args, run: Run) -> None:
    from .irradiance import bake_irt
    from .tbl import build_tbl_from_views, tbl_from_scene

    scene = load_scene(args.scene)
    res = args.irt_res or scene.atlas.irt_res
    if args.samples < 1:
        raise InputError("--samples must be >= 1")
    t = time.perf_counter()
    if args.tbl_source == "views":
        tbl, cov = build_tbl_from_views(scene)
        run.pfm("emissive", tbl.emissive, "emissive.pfm")
        p = run.path("tbl_coverage.pgm")
        write_mask_pgm(cov, p)
        run.output("tbl_coverage", p)
        scene = scene.replace(emissive=tbl.emissive)
    else:
        tbl = tbl_from_scene(scene)
    run.manifest["timings"]["tbl"] = time.perf_counter() - t
    t = time.perf_counter()
    irt = bake_irt(scene, tbl, res=res, n_samples=args.samples, seed=args.seed)
    run.manifest["timings"]["bake"] = time.perf_counter() - t
    irt_path = run.path("irt.pfm")
    cov_path = run.path("irt_coverage.pgm")
    irt.save(irt_path, cov_path)
    run.output("irt", irt_path)
    run.output("irt_coverage", cov_path)
    run.manifest["hyperparameters"] = {"irt_res": res, "samples": args.samples, "tbl_source": args.tbl_source}
    baked = scene.replace(irradiance=irt.texture)
    scene_dir = run.path("scene")
    run.output("scene", save_scene(baked, scene_dir))


def cmd_optimize(args, run: Run) -> None:
    from .optimizer import MaterialEstimator

    stages = args.stages
    scene = load_scene(args.scene)
    if args.irradiance is not None:
        scene = scene.replace(irradiance=read_pfm(args.irradiance))
    if scene.semantic is None:
        raise InputError(f"{args.scene}: optimization needs a semantic mask ('semantic_mask')")
    init = None
    if args.init_albedo is not None:
        init = read_pfm(args.init_albedo)
    elif 1 not in stages:
        ckpt = run.out / "checkpoints" / "albedo_stage1.pfm"
        if not ckpt.exists():
            raise InputError(
                f"stage {stages[0]} needs a stage-1 albedo: run stage 1 first (checkpoint {ckpt}) "
                "or pass --init-albedo"
            )
        init = read_pfm(ckpt)
    ckpt_dir = None if args.no_checkpoints else run.out / "checkpoints"
    est = MaterialEstimator(
        stages=tuple(stages), epochs=args.epochs, learning_rate=args.lr, beta_ssa=args.beta_ssa,
        beta_sp=args.beta_sp, beta_ssr=args.beta_ssr, q=args.q, n_samples=args.samples,
        vhl_samples=args.vhl_samples, albedo_res=args.albedo_res, roughness_res=args.roughness_res,
        init_albedo=init, random_state=args.seed, checkpoint_dir=ckpt_dir, sampler=args.sampler,
    )
    est.fit(scene)
    run.manifest["hyperparameters"] = {
        **{k: v for k, v in est.get_params().items() if k not in ("init_albedo", "checkpoint_dir")},
        "albedo_res": est.problem_.albedo_shape[0],
        "roughness_res": est.problem_.rough_shape[0],
        "init_albedo": str(args.init_albedo) if args.init_albedo else None,
    }
    run.manifest["losses"] = {f"stage{s}": h for s, h in est.history_.items()}
    run.manifest["timings"].update({f"stage{s}": t for s, t in est.timings_.items()})
    run.pfm("albedo", est.albedo_, "albedo.pfm")
    write_mask_pgm(est.coverage_["albedo"].astype(np.int64), run.path("albedo_coverage.pgm"))
    run.output("albedo_coverage", run.out / "albedo_coverage.pgm")
    if stages != [1]:
        run.pfm("roughness", est.roughness_, "roughness.pfm")
        write_mask_pgm(est.coverage_["roughness"].astype(np.int64), run.path("roughness_coverage.pgm"))
        run.output("roughness_coverage", run.out / "roughness_coverage.pgm")
    for s, paths in est.checkpoints_.items():
        for k, p in paths.items():
            run.output(f"checkpoint_stage{s}_{k}", p)


def cmd_render(args, run: Run) -> None:
    from .tbl import tbl_from_scene

    scene = load_scene(args.scene)
    albedo = _texture(args.albedo, scene.albedo, "albedo")
    roughness = _texture(args.roughness, scene.roughness, "roughness")
    irradiance = _texture(args.irradiance, scene.irradiance, "irradiance")
    cams = _cameras(args, scene)
    run.manifest["hyperparameters"] = {"samples": args.samples, "sampler": "ggx"}
    t = time.perf_counter()
    _render_all(run, scene, cams, tbl_from_scene(scene), irradiance, albedo, roughness, args.samples, args.seed)
    run.manifest["timings"]["render"] = time.perf_counter() - t


def cmd_relight(args, run: Run) -> None:
    from .renderer import relight
    from .tbl import tbl_from_scene

    scene = load_scene(args.scene)
    albedo = _texture(args.albedo, scene.albedo, "albedo")
    roughness = _texture(args.roughness, scene.roughness, "roughness")
    emissive = read_pfm(args.emissive)
    if (emissive.data < 0).any():
        raise InputError(f"{args.emissive}: emissive radiance must be non-negative")
    t = time.perf_counter()
    lit = relight(scene, emissive, irt_res=args.irt_res, n_samples=args.bake_samples, seed=args.seed)
    run.manifest["timings"]["bake"] = time.perf_counter() - t
    run.pfm("irt", lit.irradiance, "irt.pfm")
    cams = _cameras(args, scene)
    run.manifest["hyperparameters"] = {"samples": args.samples, "bake_samples": args.bake_samples,
                                       "irt_res": lit.irradiance.width}
    t = time.perf_counter()
    # lamp pixels are those of the original lighting, so relit renders scale linearly
    _render_all(run, lit, cams, tbl_from_scene(lit), lit.irradiance, albedo, roughness, args.samples, args.seed,
                emitters=scene.emissive)
    run.manifest["timings"]["render"] = time.perf_counter() - t


def cmd_edit(args, run: Run) -> None:
    from .renderer import edit_material

    if args.albedo_value is None and args.roughness_value is None:
        raise InputError("edit needs --albedo and/or --roughness")
    if args.albedo_value is not None and not all(0.0 <= v <= 1.0 for v in args.albedo_value):
        raise InputError("albedo components must lie in [0, 1]")
    if args.roughness_value is not None and not 0.0 <= args.roughness_value <= 1.0:
        raise InputError("roughness must lie in [0, 1]")
    scene = load_scene(args.scene)
    changes = {}
    if args.albedo_texture is not None:
        changes["albedo"] = read_pfm(args.albedo_texture)
    if args.roughness_texture is not None:
        changes["roughness"] = read_pfm(args.roughness_texture)
    scene = scene.replace(**changes)
    edited = edit_material(scene, args.class_id, albedo=args.albedo_value, roughness=args.roughness_value)
    run.manifest["hyperparameters"] = {"class": args.class_id, "albedo": args.albedo_value,
                                       "roughness": args.roughness_value}
    if edited.albedo is not None:
        run.pfm("albedo", edited.albedo, "albedo.pfm")
    if edited.roughness is not None:
        run.pfm("roughness", edited.roughness, "roughness.pfm")


def cmd_rooms(args, run: Run) -> None:
    from .segmentation import compute_rooms

    scene = load_scene(args.scene)
    res = args.res or scene.atlas.roughness_res
    lo, hi = args.slice
    if not lo < hi:
        raise InputError("--slice needs lo < hi")
    if args.cell_size <= 0:
        raise InputError("--cell-size must be positive")
    if args.door_width < 0:
        raise InputError("--door-width must be non-negative")
    rooms = compute_rooms(scene.mesh, cell_size=args.cell_size, slice_=(lo, hi), atlas_res=res,
                          door_width=args.door_width)
    p = run.path("rooms.pgm")
    write_mask_pgm(rooms.texel_rooms, p)
    run.output("rooms", p)
    p = run.path("room_grid.pgm")
    write_mask_pgm(rooms.labels, p)
    run.output("room_grid", p)
    run.manifest["hyperparameters"] = {"cell_size": args.cell_size, "slice": [lo, hi], "res": res,
                                        "door_width": args.door_width}
    run.manifest["n_rooms"] = rooms.n_rooms
    print(f"rooms: {rooms.n_rooms}")


def cmd_vhl(args, run: Run) -> None:
    from .renderer import make_gbuffer
    from .segmentation import detect_vhl
    from .tbl import tbl_from_scene

    scene = load_scene(args.scene)
    if scene.semantic is None:
        raise InputError(f"{args.scene}: highlight detection needs a semantic mask")
    irradiance = _texture(args.irradiance, scene.irradiance, "irradiance")
    if args.albedo is not None:
        albedo = read_pfm(args.albedo)
    elif scene.albedo is not None:
        albedo = scene.albedo
    else:
        albedo = TextureImage.full(scene.atlas.albedo_res, scene.atlas.albedo_res, (0.5, 0.5, 0.5))
    gbs = [make_gbuffer(scene, cam) for cam in scene.cameras]
    masks = detect_vhl(scene, tbl_from_scene(scene), gbs, albedo, irradiance, n_samples=args.samples,
                       seed=args.seed, tau_abs=args.tau_abs, tau_rel=args.tau_rel)
    summary = {}
    for k, gb in enumerate(gbs):
        ids = np.where(masks.highlight[k], masks.class_ids[k], 0)
        p = run.path(f"vhl_{k:03d}.pgm")
        write_mask_pgm(MaskImage(gb.image(ids)[:, :, 0]), p)
        run.output(f"vhl_{k:03d}", p)
        summary[f"{k:03d}"] = {int(c): int((ids == c).sum()) for c in np.unique(ids) if c > 0}
    run.manifest["hyperparameters"] = {"samples": args.samples, "tau_abs": args.tau_abs, "tau_rel": args.tau_rel}
    run.manifest["vhl_pixels"] = summary
    run.manifest["classes_with_vhl"] = sorted(masks.classes_with_vhl())


def cmd_eval(args, run: Run) -> None:
    from .evaluation import compare_images, mae, mse, psnr, ssim

    a = read_pfm(args.a)
    b = read_pfm(args.b)
    if a.data.shape != b.data.shape:
        raise InputError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    if args.linear:
        metrics = {"psnr": psnr(a.data, b.data), "ssim": ssim(a.data, b.data),
                   "mse": mse(a.data, b.data), "mae": mae(a.data, b.data)}
    else:
        metrics = compare_images(a.data, b.data)
    run.manifest["metrics"] = metrics
    run.manifest["hyperparameters"] = {"tonemapped": not args.linear}
    print(json.dumps(metrics, sort_keys=True))


def cmd_spheres(args, run: Run) -> None:
    from .evaluation import SPHERE_MATERIALS, sg_fit, sh_project, sphere_harness
    from .tbl import tbl_from_scene

    scene = load_scene(args.scene)
    tbl = tbl_from_scene(scene)
    x = np.asarray(args.probe, dtype=np.float64)
    t = time.perf_counter()
    sh = sh_project(tbl, x, order=args.sh_order, n_samples=args.fit_samples, seed=args.seed)
    sg = sg_fit(tbl, x, n_lobes=args.sg_lobes, n_samples=args.fit_samples, seed=args.seed)
    run.manifest["timings"]["fit"] = time.perf_counter() - t
    t = time.perf_counter()
    report, images = sphere_harness({"tbl": tbl, "sh": sh, "sg": sg}, x, args.view,
                                    resolution=args.resolution, n_samples=args.samples, seed=args.seed)
    run.manifest["timings"]["render"] = time.perf_counter() - t
    for mat, imgs in images.items():
        for name, img in imgs.items():
            run.pfm(f"{mat}_{name}", TextureImage(img), f"sphere_{mat}_{name}.pfm", preview=True)
    run.manifest["hyperparameters"] = {
        "probe": list(x), "view": list(args.view), "sh_order": args.sh_order, "sg_lobes": args.sg_lobes,
        "fit_samples": args.fit_samples, "resolution": args.resolution, "samples": args.samples,
        "materials": {k: list(v) for k, v in SPHERE_MATERIALS.items()},
    }
    run.manifest["metrics"] = report
    for mat, row in report.items():
        print(mat, " ".join(f"{n}: mae {r['mae']:.4f} ssim {r['ssim']:.4f}" for n, r in row.items()))


def cmd_make_scene(args, run: Run) -> None:
    from . import synthetic

    if args.kind == "three-room":
        syn = synthetic.three_room_scene()
    elif args.kind == "furnace":
        syn = synthetic.furnace_box(radiance=2.0 if args.value is None else args.value, res=args.res)
    else:
        syn = synthetic.bright_wall_box(value=5.0 if args.value is None else args.value, res=args.res)
    run.output("scene", save_scene(syn.scene, run.out))
    if syn.gt_albedo is not None:
        run.pfm("gt_albedo", syn.gt_albedo, "gt_albedo.pfm")
    if syn.gt_roughness is not None:
        run.pfm("gt_roughness", syn.gt_roughness, "gt_roughness.pfm")
    run.manifest["hyperparameters"] = {"kind": args.kind, **syn.info}


COMMANDS = {
    "bake": cmd_bake,
    "optimize": cmd_optimize,
    "render": cmd_render,
    "relight": cmd_relight,
    "edit": cmd_edit,
    "rooms": cmd_rooms,
    "vhl": cmd_vhl,
    "eval": cmd_eval,
    "spheres": cmd_spheres,
    "make-scene": cmd_make_scene,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = set_threads(args.threads)
        run = Run(args, argv)
        run.manifest["threads"] = threads
        COMMANDS[args.command](args, run)
        run.finish()
    except TexirError as exc:
        print(f"texir {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers everything else
        log.debug("internal error", exc_info=True)
        print(f"texir {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
