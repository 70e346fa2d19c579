"""Procedural test scenes built from axis-aligned rectangles.

Each rectangle becomes its own UV chart, packed on shelves into the unit
square with a uniform world-to-texture scale. Per-rectangle attributes
(class, albedo, roughness, emission) are painted into texture atlases
through :func:`~texir.geometry.texel_surfels`, so conservative border
texels are painted too; remaining gutter texels are dilated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assets import AtlasSettings, Camera, MaskImage, Scene, TextureImage, look_at
from .geometry import TriangleMesh, texel_surfels
from .tbl import TblLight, dilate

FLOOR, WALL, CEILING, LAMP, FURNITURE = 1, 2, 3, 4, 5

GT_ALBEDO = {
    FLOOR: (0.30, 0.22, 0.15),
    WALL: (0.75, 0.73, 0.70),
    CEILING: (0.85, 0.85, 0.85),
    LAMP: (0.90, 0.90, 0.90),
    FURNITURE: (0.25, 0.32, 0.55),
}
GT_ROUGHNESS = {FLOOR: 0.25, WALL: 0.8, CEILING: 0.9, LAMP: 0.9, FURNITURE: 0.35}


@dataclass
class Rect:
    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    class_id: int = WALL
    emission: tuple = (0.0, 0.0, 0.0)
    tag: str = ""

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)


_AXES = {"x": 0, "y": 1, "z": 2}


def rect(axis: str, value: float, lo, hi, facing: int, **kw) -> Rect:
    """Axis-aligned rectangle on plane ``axis = value`` spanning ``lo..hi``.

    ``lo``/``hi`` give the two remaining coordinates in xyz order;
    ``facing`` (+1/-1) selects the normal direction along ``axis``.
    """
    a = _AXES[axis]
    others = [k for k in range(3) if k != a]
    p0 = np.zeros(3)
    p0[a] = value
    p0[others[0]], p0[others[1]] = lo
    eu = np.zeros(3)
    ev = np.zeros(3)
    eu[others[0]] = hi[0] - lo[0]
    ev[others[1]] = hi[1] - lo[1]
    r = Rect(p0, eu, ev, **kw)
    if np.sign(r.normal[a]) != facing:
        r.origin = p0 + eu
        r.edge_u = -eu
    return r


def box_faces(lo, hi, inward: bool, skip=(), **kw) -> list[Rect]:
    """Six faces of an axis-aligned box; ``skip`` names faces like '-y'."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = []
    for axis, a in _AXES.items():
        others = [k for k in range(3) if k != a]
        span_lo = (lo[others[0]], lo[others[1]])
        span_hi = (hi[others[0]], hi[others[1]])
        for side, value in (("-", lo[a]), ("+", hi[a])):
            if side + axis in skip:
                continue
            out_dir = -1 if side == "-" else 1
            facing = -out_dir if inward else out_dir
            out.append(rect(axis, value, span_lo, span_hi, facing, tag=side + axis, **kw))
    return out


@dataclass
class Layout:
    mesh: TriangleMesh
    rects: list
    tri_rect: np.ndarray  # rectangle index per triangle


def build_mesh(rects: list[Rect], min_res: int = 32, padding_texels: float = 2.0) -> Layout:
    """Triangulate rectangles and shelf-pack one UV chart per rectangle."""
    pad = padding_texels / min_res
    sizes = np.array([[np.linalg.norm(r.edge_u), np.linalg.norm(r.edge_v)] for r in rects])
    order = np.argsort(-sizes[:, 1], kind="stable")

    def pack(scale):
        x = y = pad
        shelf_h = 0.0
        placed = {}
        for k in order:
            w, h = sizes[k] * scale
            if x + w + pad > 1.0:
                x = pad
                y += shelf_h + pad
                shelf_h = 0.0
            if x + w + pad > 1.0 or y + h + pad > 1.0:
                return None
            placed[k] = (x, y)
            x += w + pad
            shelf_h = max(shelf_h, h)
        return placed

    lo_s, hi_s = 1e-6, 1.0 / sizes.max()
    for _ in range(60):
        mid = 0.5 * (lo_s + hi_s)
        if pack(mid) is None:
            hi_s = mid
        else:
            lo_s = mid
    scale = lo_s
    placed = pack(scale)

    pos, nrm, uvs, tris, tri_rect = [], [], [], [], []
    corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    for k, r in enumerate(rects):
        base = len(pos)
        u0, v0 = placed[k]
        w, h = sizes[k] * scale
        for a, b in corners:
            pos.append(r.origin + a * r.edge_u + b * r.edge_v)
            nrm.append(r.normal)
            uvs.append((u0 + a * w, v0 + b * h))
        tris += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
        tri_rect += [k, k]
    mesh = TriangleMesh(np.array(pos), np.array(nrm), np.array(uvs), np.array(tris))
    return Layout(mesh, rects, np.array(tri_rect))


def paint(layout: Layout, res: int, values: np.ndarray) -> np.ndarray:
    """Per-rectangle values painted into a (res, res, C) atlas (gutters dilated)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    s = texel_surfels(layout.mesh, res)
    grid = np.zeros((res, res, values.shape[1]))
    grid[s.texel_j, s.texel_i] = values[layout.tri_rect[s.triangle]]
    filled, _ = dilate(grid, s.coverage())
    return filled


def paint_ids(layout: Layout, res: int, ids) -> np.ndarray:
    s = texel_surfels(layout.mesh, res)
    grid = np.zeros((res, res), dtype=np.int64)
    grid[s.texel_j, s.texel_i] = np.asarray(ids)[layout.tri_rect[s.triangle]]
    return grid


@dataclass
class SyntheticScene:
    """A generated scene together with its ground truth."""

    scene: Scene
    layout: Layout
    gt_albedo: TextureImage | None = None
    gt_roughness: TextureImage | None = None
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# simple boxes


def _center_equirect(center, w=64, h=32) -> Camera:
    return Camera("equirect", w, h, np.eye(3), np.asarray(center, dtype=float))


def _constant_scene(layout, emission_rgb, res, cameras, images, semantic=None, atlas=None):
    emissive = TextureImage(paint(layout, res, emission_rgb))
    return Scene(
        mesh=layout.mesh, emissive=emissive, cameras=tuple(cameras), images=tuple(images),
        semantic=semantic, atlas=atlas or AtlasSettings(res, res, res),
    )


def furnace_box(radiance: float = 2.0, size: float = 2.0, res: int = 32, with_camera: bool = True) -> SyntheticScene:
    """Closed cube whose every surface emits ``radiance``; camera images are constant."""
    rects = box_faces((0, 0, 0), (size, size, size), inward=True, class_id=WALL)
    layout = build_mesh(rects, min_res=res)
    emission = np.full((len(rects), 3), radiance)
    cams, imgs = [], []
    if with_camera:
        cam = _center_equirect((size / 2,) * 3)
        cams.append(cam)
        imgs.append(TextureImage.full(cam.width, cam.height, (radiance,) * 3))
    classes = MaskImage(paint_ids(layout, res, [WALL] * len(rects)))
    scene = _constant_scene(layout, emission, res, cams, imgs, semantic=classes)
    return SyntheticScene(scene, layout, info={"radiance": radiance})


def bright_wall_box(value: float = 5.0, size: float = 2.0, res: int = 32, wall: str = "+x",
                    with_camera: bool = True) -> SyntheticScene:
    """Closed cube with one emitting wall; the other walls are black."""
    rects = box_faces((0, 0, 0), (size, size, size), inward=True, class_id=WALL)
    layout = build_mesh(rects, min_res=res)
    emission = np.array([[value] * 3 if r.tag == wall else [0.0] * 3 for r in rects])
    cams, imgs = [], []
    if with_camera:
        cam = _center_equirect((size / 2,) * 3)
        tbl = TblLight(_bvh_of(layout), TextureImage(paint(layout, res, emission)))
        cams.append(cam)
        imgs.append(render_radiance_view(tbl, cam))
    classes = MaskImage(paint_ids(layout, res, [WALL] * len(rects)))
    scene = _constant_scene(layout, emission, res, cams, imgs, semantic=classes)
    return SyntheticScene(scene, layout, info={"value": value, "wall": wall})


def _bvh_of(layout):
    from .geometry import BVH

    return BVH(layout.mesh)


def render_radiance_view(tbl: TblLight, cam: Camera) -> TextureImage:
    """Image of the lighting itself: each pixel shows the radiance its ray hits."""
    from .camera import primary_rays

    o, d = primary_rays(cam)
    return TextureImage(tbl.query(o, d, t_min=0.0).reshape(cam.height, cam.width, 3))


# ---------------------------------------------------------------------------
# room-segmentation test meshes


def two_room_mesh(door: str = "open", length: float = 6.0, depth: float = 3.0, height: float = 2.5,
                  door_width: float = 1.0, wall_thickness: float = 0.2) -> TriangleMesh:
    """Two rooms side by side split by a wall at mid-length.

    ``door`` is ``"open"`` (doorway), ``"sealed"`` (full wall) or
    ``"removed"`` (no dividing wall).
    """
    rects = box_faces((0, 0, 0), (length, height, depth), inward=True, class_id=WALL)
    if door != "removed":
        rects += _slab_x(length / 2, wall_thickness, depth, height,
                         door=None if door == "sealed" else (depth / 2 - door_width / 2, depth / 2 + door_width / 2))
    return build_mesh(rects).mesh


def _slab_x(x_mid, thickness, depth, height, door=None, door_height=2.0, class_id=WALL) -> list[Rect]:
    """Interior wall slab across z at x = x_mid, optionally with a doorway (z0, z1)."""
    x0, x1 = x_mid - thickness / 2, x_mid + thickness / 2
    out = []
    if door is None:
        spans = [((0.0, 0.0), (height, depth))]
    else:
        z0, z1 = door
        spans = [
            ((0.0, 0.0), (height, z0)),
            ((0.0, z1), (height, depth)),
            ((door_height, z0), (height, z1)),
        ]
    for lo, hi in spans:
        out.append(rect("x", x0, lo, hi, -1, class_id=class_id))
        out.append(rect("x", x1, lo, hi, +1, class_id=class_id))
    if door is not None:
        z0, z1 = door
        out.append(rect("z", z0, (x0, 0.0), (x1, door_height), +1, class_id=class_id))
        out.append(rect("z", z1, (x0, 0.0), (x1, door_height), -1, class_id=class_id))
        out.append(rect("y", door_height, (x0, z0), (x1, z1), -1, class_id=class_id))
    return out


# ---------------------------------------------------------------------------
# three-room scene with ground-truth materials


THREE_ROOM_SIZE = (9.0, 2.5, 4.0)


def three_room_rects(lamp_radiance=(20.0, 19.0, 17.5), lamp_half=(0.3, 0.2)) -> list[Rect]:
    lx, ly, lz = THREE_ROOM_SIZE
    rects = [
        rect("y", 0.0, (0.0, 0.0), (lx, lz), +1, class_id=FLOOR, tag="floor"),
        rect("y", ly, (0.0, 0.0), (lx, lz), -1, class_id=CEILING, tag="ceiling"),
        rect("x", 0.0, (0.0, 0.0), (ly, lz), +1, class_id=WALL),
        rect("x", lx, (0.0, 0.0), (ly, lz), -1, class_id=WALL),
        rect("z", 0.0, (0.0, 0.0), (lx, ly), +1, class_id=WALL),
        rect("z", lz, (0.0, 0.0), (lx, ly), -1, class_id=WALL),
    ]
    for x_mid in (3.0, 6.0):
        rects += _slab_x(x_mid, 0.2, lz, ly, door=(1.5, 2.5))
    for cx in (1.5, 4.5, 7.5):
        rects.append(rect("y", ly - 0.02, (cx - lamp_half[0], lz / 2 - lamp_half[1]),
                          (cx + lamp_half[0], lz / 2 + lamp_half[1]), -1,
                          class_id=LAMP, emission=tuple(lamp_radiance), tag="lamp"))
    rects += box_faces((0.6, 0.0, 2.8), (1.6, 0.9, 3.6), inward=False, skip=("-y",), class_id=FURNITURE)
    rects += box_faces((7.0, 0.0, 0.7), (8.2, 0.75, 1.5), inward=False, skip=("-y",), class_id=FURNITURE)
    return rects


def reflection_point(eye, light, surface_y: float) -> np.ndarray:
    """Where ``light`` is mirrored toward ``eye`` by the horizontal plane ``y = surface_y``."""
    eye = np.asarray(eye, dtype=float)
    virtual = np.asarray(light, dtype=float).copy()
    virtual[1] = 2.0 * surface_y - virtual[1]
    t = (eye[1] - surface_y) / (eye[1] - virtual[1])
    return eye + t * (virtual - eye)


def three_room_cameras(width=80, height=60, fov=75.0) -> list[Camera]:
    # each camera looks at a lamp's mirror image on the floor or a furniture top
    lz = THREE_ROOM_SIZE[2]
    lamp_y = THREE_ROOM_SIZE[1] - 0.02
    shots = [
        ((0.4, 1.5, 0.4), 1.5, 0.0),
        ((2.6, 1.3, 3.7), 1.5, 0.0),
        ((0.3, 1.6, 3.7), 1.5, 0.9),
        ((3.4, 1.5, 0.4), 4.5, 0.0),
        ((5.6, 1.6, 3.6), 4.5, 0.0),
        ((6.4, 1.5, 3.6), 7.5, 0.0),
        ((8.7, 1.4, 0.3), 7.5, 0.0),
        ((8.7, 1.7, 3.7), 7.5, 0.75),
    ]
    cams = []
    for eye, lamp_x, surface in shots:
        target = reflection_point(eye, (lamp_x, lamp_y, lz / 2), surface)
        cams.append(Camera("pinhole", width, height, look_at(eye, target), np.array(eye, dtype=float), fov))
    return cams


def three_room_scene(albedo_res=128, roughness_res=128, irt_res=128, tbl_res=128, image_size=(80, 60),
                     bounces=3, bounce_samples=256, bake_samples=2048, image_samples=512, seed=7) -> SyntheticScene:
    """Three rooms joined by doorways, lit by ceiling panels.

    Ground truth is piecewise constant per semantic class. The lighting
    atlas holds the lamps' emission plus a diffuse multi-bounce solution,
    and the input views are rendered with GGX-sampled specular.
    """
    from .irradiance import bake_irt
    from .renderer import RenderConfig, render

    rects = three_room_rects()
    layout = build_mesh(rects, min_res=min(albedo_res, roughness_res, irt_res, tbl_res))
    classes = np.array([r.class_id for r in rects])
    emission = np.array([r.emission for r in rects], dtype=float)
    albedo_rect = np.array([GT_ALBEDO[c] for c in classes])
    rough_rect = np.array([GT_ROUGHNESS[c] for c in classes])
    is_lamp = (classes == LAMP).astype(float)[:, None]

    bvh = _bvh_of(layout)
    e_tex = paint(layout, tbl_res, emission)
    a_tex = paint(layout, tbl_res, albedo_rect)
    lamp_tex = paint(layout, tbl_res, is_lamp)
    stub = Scene(mesh=layout.mesh, emissive=TextureImage(e_tex), cameras=(), images=(),
                 atlas=AtlasSettings(albedo_res, roughness_res, irt_res), bvh=bvh)
    t_tex = e_tex.copy()
    for k in range(bounces):
        tbl = TblLight(bvh, TextureImage(t_tex))
        ir = bake_irt(stub, tbl, res=tbl_res, n_samples=bounce_samples, seed=seed + k)
        t_tex = np.where(lamp_tex > 0.5, e_tex, a_tex / np.pi * ir.texture.data)
    emissive = TextureImage(t_tex)
    tbl = TblLight(bvh, emissive)
    irt = bake_irt(stub, tbl, res=irt_res, n_samples=bake_samples, seed=seed)

    semantic = MaskImage(paint_ids(layout, albedo_res, classes))
    gt_albedo = TextureImage(paint(layout, albedo_res, albedo_rect))
    gt_rough = TextureImage(paint(layout, roughness_res, rough_rect))
    cams = three_room_cameras(*image_size)
    base = Scene(mesh=layout.mesh, emissive=emissive, cameras=(), images=(), semantic=semantic,
                 albedo=gt_albedo, roughness=gt_rough, irradiance=irt.texture,
                 atlas=AtlasSettings(albedo_res, roughness_res, irt_res), bvh=bvh)
    cfg = RenderConfig(n_samples=image_samples, sampler="ggx", seed=seed)
    images = tuple(render(base, cam, cfg, tbl=tbl) for cam in cams)
    scene = Scene(mesh=layout.mesh, emissive=emissive, cameras=tuple(cams), images=images,
                  semantic=semantic, irradiance=irt.texture,
                  atlas=AtlasSettings(albedo_res, roughness_res, irt_res), bvh=bvh)
    return SyntheticScene(scene, layout, gt_albedo, gt_rough,
                          info={"classes": classes.tolist(), "seed": seed, "image_samples": image_samples})
