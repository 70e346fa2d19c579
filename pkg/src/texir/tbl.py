"""Texture-based lighting: incident radiance looked up from an HDR texture on the mesh.

Radiance arriving at ``x`` from direction ``omega`` is the emissive texture
value at the first surface hit by the ray ``x + t omega``; rays that escape
the scene return a constant escape radiance (black by default).
"""
from __future__ import annotations

import logging

import numba
import numpy as np

from . import camera as _camera
from .assets import Scene, TextureImage, bilinear_taps
from .errors import InputError, InvariantError
from .geometry import BVH, Surfels, texel_surfels, trace

log = logging.getLogger(__name__)

MAX_DILATE_ITERS = 64


@numba.njit(cache=True, inline="always")
def bilinear(tex, u, v):
    """Clamped bilinear lookup returning three channels (mono is replicated)."""
    h = tex.shape[0]
    w = tex.shape[1]
    x = u * w - 0.5
    y = v * h - 0.5
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    xa = min(max(x0, 0), w - 1)
    xb = min(max(x0 + 1, 0), w - 1)
    ya = min(max(y0, 0), h - 1)
    yb = min(max(y0 + 1, 0), h - 1)
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    out0 = 0.0
    out1 = 0.0
    out2 = 0.0
    c = tex.shape[2]
    for ch in range(3):
        cc = ch if c == 3 else 0
        val = (w00 * tex[ya, xa, cc] + w10 * tex[ya, xb, cc]
               + w01 * tex[yb, xa, cc] + w11 * tex[yb, xb, cc])
        if ch == 0:
            out0 = val
        elif ch == 1:
            out1 = val
        else:
            out2 = val
    return out0, out1, out2


@numba.njit(cache=True)
def radiance(arrays, tri_uv, tex, escape, ox, oy, oz, dx, dy, dz, tmin):
    """Incident radiance along one ray; used by all gathering kernels."""
    t, tri, b1, b2 = trace(arrays, ox, oy, oz, dx, dy, dz, tmin, np.inf)
    if tri < 0:
        return escape[0], escape[1], escape[2]
    b0 = 1.0 - b1 - b2
    u = b0 * tri_uv[tri, 0, 0] + b1 * tri_uv[tri, 1, 0] + b2 * tri_uv[tri, 2, 0]
    v = b0 * tri_uv[tri, 0, 1] + b1 * tri_uv[tri, 1, 1] + b2 * tri_uv[tri, 2, 1]
    return bilinear(tex, u, v)


@numba.njit(cache=True, parallel=True)
def _query_batch(arrays, tri_uv, tex, escape, origins, dirs, tmin, out):
    for r in numba.prange(origins.shape[0]):
        a, b, c = radiance(
            arrays, tri_uv, tex, escape,
            origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], tmin,
        )
        out[r, 0] = a
        out[r, 1] = b
        out[r, 2] = c


class TblLight:
    """Queryable scene lighting backed by an HDR texture atlas."""

    def __init__(self, bvh: BVH, emissive: TextureImage, escape=(0.0, 0.0, 0.0)):
        if not emissive.is_finite() or (emissive.data < 0).any():
            raise InvariantError("emissive texture must be finite and non-negative")
        self.bvh = bvh
        self.mesh = bvh.mesh
        self.emissive = emissive
        self.escape = np.asarray(escape, dtype=np.float64).reshape(3)
        self._tex = np.ascontiguousarray(emissive.data, dtype=np.float64)
        self._tri_uv = np.ascontiguousarray(self.mesh.uvs[self.mesh.triangles])

    @property
    def epsilon(self) -> float:
        return self.bvh.epsilon

    @property
    def kernel_args(self):
        return self.bvh.arrays, self._tri_uv, self._tex, self.escape

    def query(self, x, omega, t_min=None) -> np.ndarray:
        """Incident radiance for rays ``x + t omega`` (batched, (n, 3) RGB)."""
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
        omega = np.ascontiguousarray(np.atleast_2d(omega), dtype=np.float64)
        x, omega = np.broadcast_arrays(x, omega)
        x = np.ascontiguousarray(x)
        omega = np.ascontiguousarray(omega)
        out = np.empty((len(x), 3))
        tmin = self.epsilon if t_min is None else float(t_min)
        _query_batch(*self.kernel_args, x, omega, tmin, out)
        return out

    def scaled(self, c: float) -> "TblLight":
        return TblLight(self.bvh, TextureImage(self.emissive.data * c), self.escape * c)


def query_radiance(tbl: TblLight, x, omega_i) -> np.ndarray:
    out = tbl.query(x, omega_i)
    return out[0] if np.ndim(x) == 1 and np.ndim(omega_i) == 1 else out


def dilate(data: np.ndarray, known: np.ndarray, max_iters: int = MAX_DILATE_ITERS):
    """Fill unknown texels with the mean of known 8-neighbors, repeatedly.

    Returns the filled array and the final known mask. Stops at a fixpoint
    or after ``max_iters`` rounds.
    """
    data = np.array(data, dtype=np.float64, copy=True)
    if data.ndim == 2:
        data = data[:, :, None]
    known = np.array(known, dtype=bool, copy=True)
    h, w = known.shape
    for _ in range(max_iters):
        if known.all():
            break
        kd = np.where(known[:, :, None], data, 0.0)
        pad_d = np.pad(kd, ((1, 1), (1, 1), (0, 0)))
        pad_k = np.pad(known.astype(np.float64), 1)
        total = np.zeros_like(data)
        count = np.zeros((h, w))
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                total += pad_d[1 + dj:1 + dj + h, 1 + di:1 + di + w]
                count += pad_k[1 + dj:1 + dj + h, 1 + di:1 + di + w]
        new = ~known & (count > 0)
        if not new.any():
            break
        data[new] = total[new] / count[new][:, None]
        known |= new
    return data, known


# coverage codes written next to baked atlases
NOT_SURFACE = 0
OBSERVED = 1
FILLED = 2


def _sample_image(img: TextureImage, xy: np.ndarray) -> np.ndarray:
    uv = xy / np.array([img.width, img.height], dtype=np.float64)
    idx, w = bilinear_taps(uv, img.width, img.height)
    flat = img.data.reshape(-1, img.channels).astype(np.float64)
    out = np.einsum("nk,nkc->nc", w, flat[idx])
    return np.repeat(out, 3, axis=1) if img.channels == 1 else out


def build_tbl_from_views(scene: Scene, res=None, escape=(0.0, 0.0, 0.0)):
    """Reconstruct the emissive atlas from the scene's HDR input views.

    Every surface texel takes the radiance seen by the most frontal camera
    with an unoccluded view of it; texels no camera sees are filled by
    dilation. Returns ``(TblLight, coverage)`` where ``coverage`` holds
    ``OBSERVED``, ``FILLED`` or ``NOT_SURFACE`` per texel.
    """
    if not scene.cameras:
        raise InputError("scene has no cameras to build lighting from")
    if res is None:
        res = (scene.emissive.width, scene.emissive.height)
    surfels = texel_surfels(scene.mesh, res)
    w, h = surfels.resolution
    bvh = scene.bvh
    eps = bvh.epsilon
    n = len(surfels)
    best_cos = np.full(n, -np.inf)
    best_val = np.zeros((n, 3))
    for cam, img in zip(scene.cameras, scene.images):
        to_cam = cam.translation - surfels.position
        dist = np.linalg.norm(to_cam, axis=1)
        d = to_cam / np.maximum(dist, 1e-12)[:, None]
        cos = np.einsum("ij,ij->i", d, surfels.normal)
        xy, ok = _camera.project(cam, surfels.position)
        cand = ok & (cos > 0) & (cos > best_cos) & (dist > eps)
        idx = np.nonzero(cand)[0]
        if len(idx) == 0:
            continue
        _, tri, _ = bvh.intersect_batch(
            surfels.position[idx], d[idx], t_min=eps, t_max=dist[idx] - eps
        )
        vis = idx[tri < 0]
        best_cos[vis] = cos[vis]
        best_val[vis] = _sample_image(img, xy[vis])
    seen = np.isfinite(best_cos)
    if not seen.any():
        raise InputError("no camera sees any surface texel")
    grid = np.zeros((h, w, 3))
    known = np.zeros((h, w), dtype=bool)
    grid[surfels.texel_j[seen], surfels.texel_i[seen]] = best_val[seen]
    known[surfels.texel_j[seen], surfels.texel_i[seen]] = True
    filled, _ = dilate(grid, known)
    coverage = np.zeros((h, w), dtype=np.int64)
    coverage[surfels.texel_j, surfels.texel_i] = FILLED
    coverage[known] = OBSERVED
    log.info("tbl from views: %d/%d surface texels observed", int(seen.sum()), n)
    emissive = TextureImage(np.clip(filled, 0.0, None))
    return TblLight(bvh, emissive, escape), coverage


def tbl_from_scene(scene: Scene, escape=(0.0, 0.0, 0.0)) -> TblLight:
    return TblLight(scene.bvh, scene.emissive, escape)


def surfels_for(scene: Scene, res) -> Surfels:
    return texel_surfels(scene.mesh, res)
