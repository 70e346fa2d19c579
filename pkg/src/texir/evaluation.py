"""Image metrics and lighting-representation comparisons.

Metrics operate on the arrays they are given; :func:`compare_images`
tonemaps HDR inputs (gamma 2.2, clamped) first. Spherical-harmonic and
spherical-Gaussian lighting are small estimators fit to radiance samples
``(directions, rgb)`` taken at a probe point, and the sphere harness shades
virtual spheres under any of them with shared random numbers.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import nnls
from sklearn.base import BaseEstimator, RegressorMixin

from ._adam import Adam
from .assets import tonemap
from .brdf import R_MIN, eval_specular, sample_cosine, sample_ggx
from .errors import InputError, InvariantError
from .geometry import orthonormal_basis
from .tbl import TblLight

PSNR_CAP = 99.0

# ---------------------------------------------------------------------------
# metrics


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b) -> float:
    """PSNR for unit dynamic range, capped at 99 dB."""
    m = mse(a, b)
    if m < 1e-10:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(1.0 / m)))


def ssim(a, b, sigma: float = 1.5, win: int = 11, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM with a Gaussian window, per channel then averaged.

    Border pixels closer than half a window to the edge are excluded.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < win or a.shape[1] < win:
        raise InputError(f"image {a.shape[:2]} is smaller than the {win}x{win} SSIM window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    r = (win - 1) // 2
    blur = lambda x: gaussian_filter(x, sigma, mode="reflect", truncate=r / sigma)  # noqa: E731
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = blur(x), blur(y)
        sxx = blur(x * x) - mx * mx
        syy = blur(y * y) - my * my
        sxy = blur(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s[r:-r or None, r:-r or None].mean())
    return float(np.mean(vals))


def compare_images(a, b, gamma: float = 2.2) -> dict:
    """All four metrics on tonemapped versions of two HDR images."""
    ta, tb = _pair(a, b)
    ta, tb = tonemap(ta, gamma), tonemap(tb, gamma)
    return {"psnr": psnr(ta, tb), "ssim": ssim(ta, tb), "mse": mse(ta, tb), "mae": mae(ta, tb)}


# ---------------------------------------------------------------------------
# sampling helpers


def uniform_sphere(n: int, seed: int = 0) -> np.ndarray:
    u = np.random.default_rng(seed).random((n, 2))
    z = 1.0 - 2.0 * u[:, 0]
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = 2.0 * np.pi * u[:, 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def probe_samples(tbl: TblLight, x, n_samples: int = 20000, seed: int = 0):
    """Uniform full-sphere radiance samples at a free-space probe point."""
    dirs = uniform_sphere(n_samples, seed)
    return dirs, tbl.query(np.asarray(x, dtype=np.float64)[None], dirs)


# ---------------------------------------------------------------------------
# spherical harmonics


def sh_basis(dirs, order: int) -> np.ndarray:
    """Real orthonormal SH up to ``order``, (n, (order+1)^2), index l*l + l + m.

    The polar axis is +z.
    """
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    n = len(d)
    phi = np.arctan2(y, x)
    st = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    out = np.zeros((n, (order + 1) ** 2))
    # associated Legendre P_l^m(z) without the Condon-Shortley phase
    p = {}
    p[(0, 0)] = np.ones(n)
    for m in range(1, order + 1):
        p[(m, m)] = (2 * m - 1) * st * p[(m - 1, m - 1)]
    for m in range(0, order):
        p[(m + 1, m)] = (2 * m + 1) * z * p[(m, m)]
    for m in range(0, order + 1):
        for l in range(m + 2, order + 1):
            p[(l, m)] = ((2 * l - 1) * z * p[(l - 1, m)] - (l + m - 1) * p[(l - 2, m)]) / (l - m)
    for l in range(order + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            k = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
            if m == 0:
                out[:, l * l + l] = k * p[(l, 0)]
            elif m > 0:
                out[:, l * l + l + m] = math.sqrt(2) * k * np.cos(m * phi) * p[(l, am)]
            else:
                out[:, l * l + l + m] = math.sqrt(2) * k * np.sin(am * phi) * p[(l, am)]
    return out


class ShLighting(RegressorMixin, BaseEstimator):
    """Spherical-harmonic environment light fit by Monte-Carlo projection.

    ``fit(dirs, rgb)`` expects directions drawn uniformly on the sphere and
    sets ``coef_`` of shape ((order+1)^2, 3). ``predict`` may return
    negative values (ringing is not clamped).
    """

    def __init__(self, order: int = 5):
        self.order = order

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(len(X), -1)
        if len(X) == 0:
            raise InputError("SH projection needs at least one sample")
        self.coef_ = 4.0 * np.pi / len(X) * sh_basis(X, self.order).T @ y
        return self

    def predict(self, X):
        return sh_basis(X, self.order) @ self.coef_

    @property
    def n_coefficients(self) -> int:
        return (self.order + 1) ** 2


def sh_project(tbl: TblLight, x, order: int = 5, n_samples: int = 100000, seed: int = 0) -> ShLighting:
    dirs, rgb = probe_samples(tbl, x, n_samples, seed)
    return ShLighting(order).fit(dirs, rgb)


def sh_eval(sh: ShLighting, omega) -> np.ndarray:
    return sh.predict(omega)


# ---------------------------------------------------------------------------
# spherical Gaussians


class SgLighting(RegressorMixin, BaseEstimator):
    """Sum of spherical Gaussian lobes ``a * exp(lambda (w . mu - 1))``.

    Axes start on a Fibonacci sphere with a common sharpness, amplitudes
    from non-negative least squares; all parameters are then refined with
    Adam on squared error in log1p space. Fitted lobes are in ``axes_``,
    ``sharpness_`` and ``amplitudes_`` (RGB, non-negative).
    """

    def __init__(self, n_lobes: int = 12, sharpness: float = 8.0, steps: int = 500, learning_rate: float = 1e-2,
                 random_state: int = 0):
        self.n_lobes = n_lobes
        self.sharpness = sharpness
        self.steps = steps
        self.learning_rate = learning_rate
        self.random_state = random_state

    @staticmethod
    def _lobes(X, axes, lam):
        return np.exp(lam[None, :] * (X @ axes.T - 1.0))

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(len(X), -1)
        n = len(X)
        rng = np.random.default_rng(self.random_state)
        # tiny seeded jitter keeps symmetric configurations from stalling
        u = fibonacci_sphere(self.n_lobes) + 1e-6 * rng.standard_normal((self.n_lobes, 3))
        s = np.full(self.n_lobes, math.log(self.sharpness))
        axes = u / np.linalg.norm(u, axis=1, keepdims=True)
        g = self._lobes(X, axes, np.exp(s))
        amps = np.stack([nnls(g, y[:, c])[0] for c in range(y.shape[1])], axis=1)
        params = {"u": u, "s": s, "a": amps}
        opt = Adam(self.learning_rate)
        target = np.log1p(np.clip(y, 0.0, None))
        self.loss_curve_ = []
        for _ in range(self.steps):
            norm = np.linalg.norm(params["u"], axis=1, keepdims=True)
            mu = params["u"] / norm
            lam = np.exp(params["s"])
            cosang = X @ mu.T
            g = np.exp(lam[None, :] * (cosang - 1.0))
            pred = g @ params["a"]
            r = np.log1p(pred) - target
            loss = float(np.mean(r * r))
            self.loss_curve_.append(loss)
            dpred = 2.0 * r / (1.0 + pred) / r.size
            da = g.T @ dpred
            dg = dpred @ params["a"].T  # (n, K)
            dlin = dg * g
            ds = (dlin * (cosang - 1.0)).sum(axis=0) * lam
            dmu = (dlin * lam[None, :]).T @ X
            du = (dmu - mu * (dmu * mu).sum(axis=1, keepdims=True)) / norm
            grads = {"u": du, "s": ds, "a": da}
            if not all(np.isfinite(v).all() for v in grads.values()) or not math.isfinite(loss):
                raise InvariantError("spherical Gaussian fit diverged")
            opt.step(params, grads)
            np.clip(params["a"], 0.0, None, out=params["a"])
        self.axes_ = params["u"] / np.linalg.norm(params["u"], axis=1, keepdims=True)
        self.sharpness_ = np.exp(params["s"])
        self.amplitudes_ = params["a"]
        if not (np.isfinite(self.sharpness_).all() and (self.sharpness_ > 0).all()):
            raise InvariantError("spherical Gaussian sharpness left the valid range")
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self._lobes(X, self.axes_, self.sharpness_) @ self.amplitudes_


def sg_fit(tbl: TblLight, x, n_lobes: int = 12, n_samples: int = 20000, seed: int = 0, **kw) -> SgLighting:
    dirs, rgb = probe_samples(tbl, x, n_samples, seed)
    return SgLighting(n_lobes=n_lobes, random_state=seed, **kw).fit(dirs, rgb)


def sg_eval(sg: SgLighting, omega) -> np.ndarray:
    return sg.predict(omega)


# ---------------------------------------------------------------------------
# sphere harness

SPHERE_MATERIALS = {
    "diffuse": (0.8, 1.0),
    "matte_silver": (0.95, 0.4),
    "mirror_silver": (0.95, R_MIN),
}


def _radiance_fn(lighting, x):
    if isinstance(lighting, TblLight):
        x = np.asarray(x, dtype=np.float64)[None]
        return lambda dirs: lighting.query(x, dirs)
    return lighting.predict


def sphere_image(lighting, material: str, x, view, resolution: int = 64, n_samples: int = 256,
                 seed: int = 0) -> np.ndarray:
    """Shade a virtual sphere lit by the environment seen from probe ``x``.

    The sphere is viewed orthographically from direction ``view`` (pointing
    toward the viewer); lighting is distant, so sphere size does not matter.
    Returns an (H, W, 3) float array, zero off the sphere. The same seed
    gives the same sample directions for every lighting representation.
    """
    if material not in SPHERE_MATERIALS:
        raise InputError(f"unknown sphere material {material!r}")
    albedo, rough = SPHERE_MATERIALS[material]
    w = np.asarray(view, dtype=np.float64)
    w = w / np.linalg.norm(w)
    t, b = orthonormal_basis(w[None])
    t, b = t[0], b[0]
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    sx, sy = np.meshgrid(c, c)
    r2 = sx * sx + sy * sy
    inside = r2 < 1.0
    n = (sx[inside, None] * t + sy[inside, None] * b + np.sqrt(1.0 - r2[inside])[:, None] * w)
    m = len(n)
    nt, nb = orthonormal_basis(n)
    rng = np.random.default_rng(seed)
    u = rng.random((4, m, n_samples))
    radiance = _radiance_fn(lighting, x)

    def to_world(local):
        return local[..., :1] * nt[:, None] + local[..., 1:2] * nb[:, None] + local[..., 2:] * n[:, None]

    ld, _ = sample_cosine(u[0], u[1])
    l_diff = to_world(ld).reshape(-1, 3)
    diffuse = albedo * radiance(l_diff).reshape(m, n_samples, 3).mean(axis=1)

    hl, pdf_h = sample_ggx(u[2], u[3], rough)
    h = to_world(hl)
    vv = np.broadcast_to(w, h.shape)
    vh = np.einsum("mkc,mkc->mk", vv, h)
    l_spec = 2.0 * vh[..., None] * h - vv
    nl = np.einsum("mkc,mc->mk", l_spec, n)
    ok = (vh > 0) & (nl > 0) & (pdf_h > 0)
    f = eval_specular(np.broadcast_to(n[:, None], l_spec.shape).reshape(-1, 3), vv.reshape(-1, 3),
                      l_spec.reshape(-1, 3), rough).reshape(m, n_samples)
    weight = np.where(ok, f * nl * 4.0 * np.abs(vh) / np.where(pdf_h > 0, pdf_h, 1.0), 0.0)
    spec = (weight[..., None] * radiance(l_spec.reshape(-1, 3)).reshape(m, n_samples, 3)).mean(axis=1)

    img = np.zeros((resolution, resolution, 3))
    img[inside] = diffuse + spec
    return img


def sphere_harness(lightings: dict, x, view, materials=tuple(SPHERE_MATERIALS), resolution: int = 64,
                   n_samples: int = 256, seed: int = 0, reference: str = "tbl"):
    """Render every material under every representation and score against ``reference``.

    Returns ``(report, images)`` where report[material][name] holds MAE and
    SSIM on tonemapped images and images[material][name] the HDR renders.
    """
    if reference not in lightings:
        raise InputError(f"reference representation {reference!r} missing")
    report, images = {}, {}
    for mat in materials:
        imgs = {name: sphere_image(light, mat, x, view, resolution, n_samples, seed)
                for name, light in lightings.items()}
        ref = tonemap(imgs[reference])
        report[mat] = {name: {"mae": mae(tonemap(img), ref), "ssim": ssim(tonemap(img), ref)}
                       for name, img in imgs.items()}
        images[mat] = imgs
    return report, images
