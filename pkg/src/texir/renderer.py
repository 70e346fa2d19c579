"""Ray-cast G-buffers and hybrid deferred shading.

Outgoing radiance is split into a diffuse part, ``A / pi * Ir`` read from a
precomputed irradiance source, and a specular part integrated by Monte Carlo
against the texture-based lighting. Pixels that land on light-source texels
show the emissive texture directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import _rng
from .assets import Camera, MaskImage, Scene, TextureImage
from .brdf import R_MIN, _ndf, d_specular_scalar, frame, sample_cosine_scalar, sample_ggx_scalar, specular_scalar
from .camera import primary_rays
from .errors import InputError
from .irradiance import IrradianceTexture, bake_irt, strata
from .tbl import TblLight, radiance

SAMPLERS = {"cosine": 0, "ggx": 1, "mixture": 2}
# fixed GGX lobes of the mixture sampler (cosine is the fourth technique)
MIX_ROUGHNESS = np.array([0.1, 0.3, 0.6])
LUMA = np.array([0.2126, 0.7152, 0.0722])


def luminance(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ LUMA


@dataclass
class RenderConfig:
    n_samples: int = 16
    sampler: str = "ggx"
    seed: int = 0
    r_min: float = R_MIN
    emitter_threshold: float | None = 0.5

    def __post_init__(self):
        if self.n_samples < 1:
            raise InputError("specular sample count must be >= 1")
        if self.sampler not in SAMPLERS:
            raise InputError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "mixture" and self.n_samples % (len(MIX_ROUGHNESS) + 1):
            raise InputError(f"mixture sampler needs a multiple of {len(MIX_ROUGHNESS) + 1} samples")


@dataclass
class GBuffer:
    """Per-pixel surface attributes for one camera, flattened in storage order."""

    width: int
    height: int
    valid: np.ndarray  # (P,) bool
    position: np.ndarray  # (P, 3)
    normal: np.ndarray  # (P, 3) shading normal facing the viewer's side
    uv: np.ndarray  # (P, 2)
    view: np.ndarray  # (P, 3) unit, toward the camera
    triangle: np.ndarray  # (P,) -1 where invalid
    class_id: np.ndarray  # (P,) 0 = unlabeled / invalid
    room_id: np.ndarray  # (P,)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def image(self, values) -> np.ndarray:
        """Reshape per-pixel values to (H, W, C)."""
        v = np.asarray(values)
        return v.reshape(self.height, self.width, -1)


def make_gbuffer(scene: Scene, cam: Camera, room_mask: MaskImage | None = None) -> GBuffer:
    origins, dirs = primary_rays(cam)
    t, tri, bary = scene.bvh.intersect_batch(origins, dirs, t_min=0.0)
    valid = tri >= 0
    n = len(tri)
    mesh = scene.mesh
    pos = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    uv = np.zeros((n, 2))
    view = -dirs
    vi = np.nonzero(valid)[0]
    if len(vi):
        tv, bv = tri[vi], bary[vi]
        pos[vi] = mesh.interpolate(tv, bv, "positions")
        uv[vi] = mesh.interpolate(tv, bv, "uvs")
        ns = mesh.interpolate(tv, bv, "normals")
        ns /= np.linalg.norm(ns, axis=1, keepdims=True)
        ng = mesh.face_normals()[tv]
        # two-sided: orient the geometric normal toward the viewer, then the shading normal
        ng[np.einsum("ij,ij->i", ng, view[vi]) < 0] *= -1
        ns[np.einsum("ij,ij->i", ns, ng) < 0] *= -1
        nrm[vi] = ns
    class_id = np.zeros(n, dtype=np.int64)
    room_id = np.zeros(n, dtype=np.int64)
    if scene.semantic is not None and len(vi):
        class_id[vi] = scene.semantic.lookup(uv[vi])
    if room_mask is not None and len(vi):
        room_id[vi] = room_mask.lookup(uv[vi])
    tri = np.where(valid, tri, -1)
    return GBuffer(cam.width, cam.height, valid, pos, nrm, uv, view, tri, class_id, room_id)


def _irradiance_at(gb: GBuffer, irradiance) -> np.ndarray:
    out = np.zeros((gb.n_pixels, 3))
    v = gb.valid
    if isinstance(irradiance, IrradianceTexture):
        out[v] = irradiance.query(gb.uv[v])
    elif isinstance(irradiance, TextureImage):
        vals = irradiance.sample(gb.uv[v])
        out[v] = np.repeat(vals, 3, axis=1) if vals.shape[1] == 1 else vals
    else:
        out[v] = irradiance.predict(gb.position[v])
    return out


def _sample_rgb(tex: TextureImage, gb: GBuffer) -> np.ndarray:
    out = np.zeros((gb.n_pixels, 3))
    vals = tex.sample(gb.uv[gb.valid])
    out[gb.valid] = np.repeat(vals, 3, axis=1) if vals.shape[1] == 1 else vals
    return out


def shade_diffuse(gb: GBuffer, albedo: TextureImage, irradiance) -> np.ndarray:
    """Per-pixel ``A(uv) / pi * Ir``; invalid pixels are zero. Returns (P, 3)."""
    return _sample_rgb(albedo, gb) / np.pi * _irradiance_at(gb, irradiance)


@numba.njit(cache=True, parallel=True)
def _specular_kernel(arrays, tri_uv, tex, escape, pos, nrm, view, rough, pix, valid,
                     seed, n_samples, nx, ny, sampler, tmin, want_grad, mix_r, out, dout):
    for p in numba.prange(pos.shape[0]):
        out[p, 0] = 0.0
        out[p, 1] = 0.0
        out[p, 2] = 0.0
        dout[p, 0] = 0.0
        dout[p, 1] = 0.0
        dout[p, 2] = 0.0
        if not valid[p]:
            continue
        n0, n1, n2 = nrm[p, 0], nrm[p, 1], nrm[p, 2]
        v0, v1, v2 = view[p, 0], view[p, 1], view[p, 2]
        nv = n0 * v0 + n1 * v1 + n2 * v2
        if nv <= 0.0:
            continue
        r = rough[p]
        key = _rng.stream_key(seed, pix[p])
        tx, ty, tz, bx, by, bz = frame(n0, n1, n2)
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for k in range(n_samples):
            u1 = (k % nx + _rng.uniform(key, 2 * k)) / nx
            u2 = (k // nx + _rng.uniform(key, 2 * k + 1)) / ny
            if sampler == 2:
                # one technique per sample, each with its own stratification;
                # balance-heuristic weights keep directions independent of r
                n_tech = mix_r.shape[0] + 1
                tech = k % n_tech
                i = k // n_tech
                u1 = (i % nx + _rng.uniform(key, 2 * k)) / nx
                u2 = (i // nx + _rng.uniform(key, 2 * k + 1)) / ny
                if tech == 0:
                    lx, ly, lz, _ = sample_cosine_scalar(u1, u2)
                else:
                    hx, hy, hz, _ = sample_ggx_scalar(u1, u2, mix_r[tech - 1])
                    # reflect v about h in the local frame
                    vx = v0 * tx + v1 * ty + v2 * tz
                    vy = v0 * bx + v1 * by + v2 * bz
                    vh_loc = vx * hx + vy * hy + nv * hz
                    lx = 2.0 * vh_loc * hx - vx
                    ly = 2.0 * vh_loc * hy - vy
                    lz = 2.0 * vh_loc * hz - nv
                if lz <= 0.0:
                    continue
                l0 = lx * tx + ly * bx + lz * n0
                l1 = lx * ty + ly * by + lz * n1
                l2 = lx * tz + ly * bz + lz * n2
                nl = lz
                h0 = l0 + v0
                h1 = l1 + v1
                h2 = l2 + v2
                hn = np.sqrt(h0 * h0 + h1 * h1 + h2 * h2)
                if hn == 0.0:
                    continue
                h0 /= hn
                h1 /= hn
                h2 /= hn
                nh = n0 * h0 + n1 * h1 + n2 * h2
                vh = v0 * h0 + v1 * h1 + v2 * h2
                pdf = nl / np.pi
                if vh > 0.0 and nh > 0.0:
                    for t in range(mix_r.shape[0]):
                        a = mix_r[t] * mix_r[t]
                        pdf += _ndf(nh, a * a) * nh / (4.0 * vh)
                weight = n_tech * nl / pdf
            elif sampler == 0:
                lx, ly, lz, _ = sample_cosine_scalar(u1, u2)
                l0 = lx * tx + ly * bx + lz * n0
                l1 = lx * ty + ly * by + lz * n1
                l2 = lx * tz + ly * bz + lz * n2
                nl = lz
                h0 = l0 + v0
                h1 = l1 + v1
                h2 = l2 + v2
                hn = np.sqrt(h0 * h0 + h1 * h1 + h2 * h2)
                if hn == 0.0:
                    continue
                h0 /= hn
                h1 /= hn
                h2 /= hn
                nh = n0 * h0 + n1 * h1 + n2 * h2
                vh = v0 * h0 + v1 * h1 + v2 * h2
                weight = np.pi
            else:
                hx, hy, hz, pdf_h = sample_ggx_scalar(u1, u2, r)
                h0 = hx * tx + hy * bx + hz * n0
                h1 = hx * ty + hy * by + hz * n1
                h2 = hx * tz + hy * bz + hz * n2
                vh = v0 * h0 + v1 * h1 + v2 * h2
                if vh <= 0.0 or pdf_h <= 0.0:
                    continue
                l0 = 2.0 * vh * h0 - v0
                l1 = 2.0 * vh * h1 - v1
                l2 = 2.0 * vh * h2 - v2
                nl = n0 * l0 + n1 * l1 + n2 * l2
                if nl <= 0.0:
                    continue
                nh = hz
                weight = nl * 4.0 * vh / pdf_h
            f = specular_scalar(nl, nv, nh, vh, r)
            if f == 0.0 and not want_grad:
                continue
            q0, q1, q2 = radiance(arrays, tri_uv, tex, escape, pos[p, 0], pos[p, 1], pos[p, 2], l0, l1, l2, tmin)
            a0 += f * weight * q0
            a1 += f * weight * q1
            a2 += f * weight * q2
            if want_grad:
                df = d_specular_scalar(nl, nv, nh, vh, r) * weight
                g0 += df * q0
                g1 += df * q1
                g2 += df * q2
        out[p, 0] = a0 / n_samples
        out[p, 1] = a1 / n_samples
        out[p, 2] = a2 / n_samples
        dout[p, 0] = g0 / n_samples
        dout[p, 1] = g1 / n_samples
        dout[p, 2] = g2 / n_samples


def specular_pixels(gb: GBuffer, rough_pix: np.ndarray, tbl: TblLight, config: RenderConfig,
                    want_grad: bool = False):
    """Specular radiance (P, 3) for given per-pixel roughness, plus d/dR if requested.

    The derivative is exact for the cosine and mixture samplers, whose
    directions do not depend on roughness.
    """
    if want_grad and config.sampler == "ggx":
        raise InputError("roughness gradients need a roughness-independent sampler (cosine or mixture)")
    rough = np.clip(np.ascontiguousarray(rough_pix, dtype=np.float64).reshape(-1), config.r_min, 1.0)
    out = np.empty((gb.n_pixels, 3))
    dout = np.empty((gb.n_pixels, 3))
    per_tech = config.n_samples // (len(MIX_ROUGHNESS) + 1) if config.sampler == "mixture" else config.n_samples
    nx, ny = strata(per_tech)
    pix = np.arange(gb.n_pixels, dtype=np.uint64)
    _specular_kernel(
        *tbl.kernel_args,
        np.ascontiguousarray(gb.position), np.ascontiguousarray(gb.normal), np.ascontiguousarray(gb.view),
        rough, pix, gb.valid, np.uint64(config.seed), config.n_samples, nx, ny,
        SAMPLERS[config.sampler], tbl.epsilon, want_grad, MIX_ROUGHNESS, out, dout,
    )
    return (out, dout) if want_grad else out


def shade_specular(gb: GBuffer, roughness: TextureImage, tbl: TblLight, config: RenderConfig) -> np.ndarray:
    """Monte-Carlo specular term per pixel, (P, 3)."""
    rough = np.zeros(gb.n_pixels)
    rough[gb.valid] = roughness.sample(gb.uv[gb.valid])[:, 0]
    return specular_pixels(gb, rough, tbl, config)


def emitter_pixels(gb: GBuffer, emissive: TextureImage, threshold) -> tuple[np.ndarray, np.ndarray]:
    """Mask of pixels on light-source texels and their emitted radiance."""
    value = _sample_rgb(emissive, gb)
    if threshold is None:
        return np.zeros(gb.n_pixels, dtype=bool), value
    return gb.valid & (luminance(value) > threshold), value


def render(scene: Scene, cam: Camera, config: RenderConfig | None = None, tbl: TblLight | None = None,
           irradiance=None, gbuffer: GBuffer | None = None, albedo=None, roughness=None,
           emitters: TextureImage | None = None) -> TextureImage:
    """Full hybrid render: diffuse + specular, with emitter pass-through.

    Emitter pixels are classified on ``emitters`` (default: the lighting's
    own atlas) and show the lighting's radiance. Relighting passes the
    original atlas so that scaling the light keeps the same lamp pixels.
    """
    config = config or RenderConfig()
    albedo = albedo if albedo is not None else scene.albedo
    roughness = roughness if roughness is not None else scene.roughness
    irradiance = irradiance if irradiance is not None else scene.irradiance
    missing = [name for name, v in (("albedo", albedo), ("roughness", roughness), ("irradiance", irradiance)) if v is None]
    if missing:
        raise InputError(f"render needs textures: {', '.join(missing)}")
    tbl = tbl or TblLight(scene.bvh, scene.emissive)
    gb = gbuffer or make_gbuffer(scene, cam)
    out = shade_diffuse(gb, albedo, irradiance) + shade_specular(gb, roughness, tbl, config)
    emit, _ = emitter_pixels(gb, emitters or tbl.emissive, config.emitter_threshold)
    out[emit] = _sample_rgb(tbl.emissive, gb)[emit]
    return TextureImage(gb.image(out))


def relight(scene: Scene, new_emissive: TextureImage, irt_res=None, n_samples: int = 2048, seed: int = 0) -> Scene:
    """Swap the lighting: rebuild the TBL on a new emissive atlas and rebake irradiance."""
    if (new_emissive.width, new_emissive.height) != (scene.emissive.width, scene.emissive.height):
        raise InputError(
            f"new emissive atlas is {new_emissive.width}x{new_emissive.height}, "
            f"expected {scene.emissive.width}x{scene.emissive.height}"
        )
    tbl = TblLight(scene.bvh, new_emissive)
    irt = bake_irt(scene, tbl, res=irt_res or scene.atlas.irt_res, n_samples=n_samples, seed=seed)
    return scene.replace(emissive=new_emissive, irradiance=irt.texture)


def texel_classes(mask: MaskImage, width: int, height: int) -> np.ndarray:
    """Class id under each texel center of a (width x height) atlas."""
    i = (np.arange(width) + 0.5) / width
    j = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(i, j)
    return mask.lookup(np.stack([uu.ravel(), vv.ravel()], axis=1)).reshape(height, width)


def edit_material(scene: Scene, class_id: int, albedo=None, roughness=None) -> Scene:
    """Overwrite albedo and/or roughness on all texels of one semantic class."""
    if scene.semantic is None:
        raise InputError("material editing needs a semantic mask")
    if class_id <= 0 or class_id not in set(scene.semantic.labels().tolist()):
        raise InputError(f"class {class_id} does not occur in the semantic mask")
    changes = {}
    if albedo is not None:
        if scene.albedo is None:
            raise InputError("scene has no albedo texture to edit")
        data = scene.albedo.data.copy()
        sel = texel_classes(scene.semantic, scene.albedo.width, scene.albedo.height) == class_id
        data[sel] = np.asarray(albedo, dtype=np.float32).reshape(-1)[: data.shape[2]]
        changes["albedo"] = TextureImage(data)
    if roughness is not None:
        if scene.roughness is None:
            raise InputError("scene has no roughness texture to edit")
        data = scene.roughness.data.copy()
        sel = texel_classes(scene.semantic, scene.roughness.width, scene.roughness.height) == class_id
        data[sel] = float(roughness)
        changes["roughness"] = TextureImage(data)
    return scene.replace(**changes)
