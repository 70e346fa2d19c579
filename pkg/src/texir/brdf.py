"""Simplified Disney BRDF: Lambert diffuse plus GGX / Schlick / Smith-Schlick specular.

Roughness ``R`` maps to ``alpha = R**2`` for the distribution and to
``k = (R + 1)**2 / 8`` for the geometry factor. Specular reflectance is
colorless (F0 = 0.04).

Scalar kernels (``*_scalar``) are numba-compiled for use inside the
ray-tracing loops; the public functions are vectorized over numpy arrays.
"""
from __future__ import annotations

import numba
import numpy as np

R_MIN = 0.01
F0 = 0.04
INV_PI = 1.0 / np.pi


@numba.njit(cache=True)
def _ndf(nh, a2):
    d = nh * nh * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


@numba.njit(cache=True)
def _fresnel(vh):
    return F0 + (1.0 - F0) * 2.0 ** ((-5.55473 * vh - 6.98316) * vh)


@numba.njit(cache=True)
def _g1(x, k):
    return x / (x * (1.0 - k) + k)


def _specular(nl, nv, nh, vh, rough):
    if nl <= 0.0 or nv <= 0.0:
        return 0.0
    r = min(max(rough, R_MIN), 1.0)
    a = r * r
    k = (r + 1.0) * (r + 1.0) / 8.0
    return _ndf(nh, a * a) * _fresnel(vh) * _g1(nl, k) * _g1(nv, k) / (4.0 * nl * nv)


def _d_specular(nl, nv, nh, vh, rough):
    if nl <= 0.0 or nv <= 0.0:
        return 0.0
    r = min(max(rough, R_MIN), 1.0)
    a2 = r ** 4
    d = nh * nh * (a2 - 1.0) + 1.0
    ndf = a2 / (np.pi * d * d)
    dndf_da2 = (d - 2.0 * a2 * nh * nh) / (np.pi * d * d * d)
    dndf = dndf_da2 * 4.0 * r ** 3
    k = (r + 1.0) * (r + 1.0) / 8.0
    dk = (r + 1.0) / 4.0
    den_l = nl * (1.0 - k) + k
    den_v = nv * (1.0 - k) + k
    gl = nl / den_l
    gv = nv / den_v
    dgl = -nl * (1.0 - nl) / (den_l * den_l)
    dgv = -nv * (1.0 - nv) / (den_v * den_v)
    dg = (dgl * gv + gl * dgv) * dk
    return _fresnel(vh) * (dndf * gl * gv + ndf * dg) / (4.0 * nl * nv)


specular_scalar = numba.njit(cache=True)(_specular)
d_specular_scalar = numba.njit(cache=True)(_d_specular)

_specular_ufunc = numba.vectorize(["float64(float64, float64, float64, float64, float64)"], cache=True)(_specular)
_d_specular_ufunc = numba.vectorize(["float64(float64, float64, float64, float64, float64)"], cache=True)(_d_specular)


def ndf(n_dot_h, roughness):
    """GGX normal distribution D with alpha = roughness**2."""
    a = np.asarray(roughness, dtype=np.float64) ** 2
    return _ndf(np.asarray(n_dot_h, dtype=np.float64), a * a)


def fresnel(v_dot_h):
    """Schlick Fresnel with the spherical-Gaussian exponent approximation."""
    return _fresnel(np.asarray(v_dot_h, dtype=np.float64))


def geometry_k(roughness):
    return (np.asarray(roughness, dtype=np.float64) + 1.0) ** 2 / 8.0


def g1(n_dot_x, k):
    return _g1(np.asarray(n_dot_x, dtype=np.float64), k)


def geometry_factor(n_dot_l, n_dot_v, roughness):
    k = geometry_k(roughness)
    return g1(n_dot_l, k) * g1(n_dot_v, k)


def eval_diffuse(albedo):
    """Lambertian BRDF value A / pi."""
    return np.asarray(albedo, dtype=np.float64) * INV_PI


def _dots(n, v, l):
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    h = v + l
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    dot = lambda a, b: np.sum(a * b, axis=-1)
    return dot(n, l), dot(n, v), dot(n, h), dot(v, h)


def eval_specular(n, v, l, roughness):
    """GGX specular lobe D F G / (4 (n.v)(n.l)); zero below either horizon."""
    nl, nv, nh, vh = _dots(n, v, l)
    return _specular_ufunc(nl, nv, nh, vh, np.asarray(roughness, dtype=np.float64))


def d_specular_d_roughness(n, v, l, roughness):
    """Exact derivative of :func:`eval_specular` with respect to roughness."""
    nl, nv, nh, vh = _dots(n, v, l)
    return _d_specular_ufunc(nl, nv, nh, vh, np.asarray(roughness, dtype=np.float64))


def _sample_cosine(u1, u2):
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    z = np.sqrt(max(0.0, 1.0 - u1))
    return r * np.cos(phi), r * np.sin(phi), z, z * INV_PI


def _sample_ggx(u1, u2, rough):
    r = min(max(rough, R_MIN), 1.0)
    a2 = r ** 4
    cos_t = np.sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * u2
    return sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t, _ndf(cos_t, a2) * cos_t


sample_cosine_scalar = numba.njit(cache=True)(_sample_cosine)
sample_ggx_scalar = numba.njit(cache=True)(_sample_ggx)


def sample_cosine(u1, u2):
    """Cosine-weighted hemisphere sample around +z. Returns ``(direction, pdf)``."""
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    z = np.sqrt(np.clip(1.0 - u1, 0.0, None))
    d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return d, z * INV_PI


def sample_ggx(u1, u2, roughness):
    """GGX half-vector sample around +z. Returns ``(half_vector, pdf_h)``."""
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    r = np.clip(np.asarray(roughness, dtype=np.float64), R_MIN, 1.0)
    a2 = r ** 4
    cos_t = np.sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
    sin_t = np.sqrt(np.clip(1.0 - cos_t * cos_t, 0.0, None))
    phi = 2.0 * np.pi * u2
    h = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    return h, _ndf(cos_t, a2) * cos_t


@numba.njit(cache=True, inline="always")
def frame(nx, ny, nz):
    """Branchless orthonormal basis (t, b) around unit normal n."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    return (
        1.0 + sign * nx * nx * a, sign * b, -sign * nx,
        b, sign + ny * ny * a, -ny,
    )
