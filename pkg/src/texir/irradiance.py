"""Precomputed diffuse lighting.

Two representations of surface irradiance ``Ir(x) = int L(x, w) cos(theta) dw``:

* :func:`bake_irt` - an irradiance texture (light map) baked per texel by
  stratified cosine-weighted Monte Carlo against a :class:`~texir.tbl.TblLight`.
* :class:`NeuralIrradianceField` - a small MLP regressor on surface position.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _rng
from ._adam import Adam
from .assets import TextureImage, write_mask_pgm, write_pfm
from .brdf import frame, sample_cosine_scalar
from .errors import InputError, InvariantError
from .geometry import Surfels, texel_surfels
from .tbl import TblLight, dilate, radiance


def strata(n: int) -> tuple[int, int]:
    """Split ``n`` samples into an ``nx * ny`` grid with ``nx <= ny``, as square as possible."""
    nx = int(np.sqrt(n))
    while n % nx:
        nx -= 1
    return nx, n // nx


@numba.njit(cache=True, parallel=True)
def _bake_kernel(arrays, tri_uv, tex, escape, pos, nrm, stream, seed, n_samples, nx, ny, tmin, out):
    for s in numba.prange(pos.shape[0]):
        key = _rng.stream_key(seed, stream[s])
        tx, ty, tz, bx, by, bz = frame(nrm[s, 0], nrm[s, 1], nrm[s, 2])
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for k in range(n_samples):
            sx = k % nx
            sy = k // nx
            u1 = (sx + _rng.uniform(key, 2 * k)) / nx
            u2 = (sy + _rng.uniform(key, 2 * k + 1)) / ny
            lx, ly, lz, _ = sample_cosine_scalar(u1, u2)
            dx = lx * tx + ly * bx + lz * nrm[s, 0]
            dy = lx * ty + ly * by + lz * nrm[s, 1]
            dz = lx * tz + ly * bz + lz * nrm[s, 2]
            r, g, b = radiance(arrays, tri_uv, tex, escape, pos[s, 0], pos[s, 1], pos[s, 2], dx, dy, dz, tmin)
            acc0 += r
            acc1 += g
            acc2 += b
        scale = np.pi / n_samples
        out[s, 0] = acc0 * scale
        out[s, 1] = acc1 * scale
        out[s, 2] = acc2 * scale


def gather_irradiance_stratified(tbl: TblLight, positions, normals, streams, n_samples: int, seed: int) -> np.ndarray:
    """Stratified cosine-weighted estimate of irradiance at arbitrary points.

    Stream ``streams[k]`` drives point ``k``'s random numbers, so results do
    not depend on point order or thread count.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    nrm = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    nx, ny = strata(n_samples)
    out = np.empty((len(pos), 3))
    _bake_kernel(*tbl.kernel_args, pos, nrm, streams, np.uint64(seed), n_samples, nx, ny, tbl.epsilon, out)
    return out


def gather_irradiance(tbl: TblLight, positions, normals, n_samples: int, seed: int = 0, batch: int = 1 << 20):
    """Plain (unstratified) cosine-weighted Monte Carlo irradiance.

    Independent of the baking kernel's sampler; used as a reference.
    """
    rng = np.random.default_rng(seed)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((len(positions), 3))
    per = max(1, batch // max(n_samples, 1))
    from .geometry import orthonormal_basis

    for start in range(0, len(positions), per):
        p = positions[start:start + per]
        n = normals[start:start + per]
        t, b = orthonormal_basis(n)
        u1 = rng.random((len(p), n_samples))
        u2 = rng.random((len(p), n_samples))
        r = np.sqrt(u1)
        phi = 2 * np.pi * u2
        z = np.sqrt(1 - u1)
        d = (r * np.cos(phi))[..., None] * t[:, None] + (r * np.sin(phi))[..., None] * b[:, None] + z[..., None] * n[:, None]
        o = np.repeat(p, n_samples, axis=0)
        rad = tbl.query(o, d.reshape(-1, 3)).reshape(len(p), n_samples, 3)
        out[start:start + per] = np.pi * rad.mean(axis=1)
    return out


@dataclass
class IrradianceTexture:
    texture: TextureImage
    n_samples: int
    coverage: np.ndarray  # (H, W) bool, True where a surfel was baked
    seed: int = 0

    def query(self, uv) -> np.ndarray:
        return self.texture.sample(uv)

    def save(self, pfm_path, coverage_path=None) -> None:
        write_pfm(self.texture, pfm_path)
        if coverage_path is not None:
            write_mask_pgm(self.coverage.astype(np.int64), coverage_path)


def bake_irt(scene, tbl: TblLight, res=None, n_samples: int = 2048, seed: int = 0,
             surfels: Surfels | None = None) -> IrradianceTexture:
    """Bake an irradiance texture by stratified cosine sampling per texel.

    Texels not covered by any triangle are filled from neighboring baked
    texels so that bilinear lookups near chart borders stay valid.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    if res is None:
        res = scene.atlas.irt_res
    if surfels is None:
        surfels = texel_surfels(scene.mesh, res)
    if len(surfels) == 0:
        raise InputError("mesh covers no texels of the irradiance atlas")
    w, h = surfels.resolution
    values = gather_irradiance_stratified(
        tbl, surfels.position, surfels.normal, surfels.flat_index.astype(np.uint64), n_samples, seed
    )
    grid = np.zeros((h, w, 3))
    grid[surfels.texel_j, surfels.texel_i] = values
    coverage = surfels.coverage()
    filled, _ = dilate(grid, coverage)
    return IrradianceTexture(TextureImage(filled), n_samples, coverage, seed)


def query_irradiance(source, x=None, uv=None) -> np.ndarray:
    """Irradiance from an :class:`IrradianceTexture` (by uv) or a fitted NIrF (by position)."""
    if isinstance(source, IrradianceTexture):
        return source.query(uv)
    if isinstance(source, TextureImage):
        return source.sample(uv)
    return source.predict(np.atleast_2d(x))


# ---------------------------------------------------------------------------
# neural irradiance field


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class NeuralIrradianceField(RegressorMixin, BaseEstimator):
    """MLP mapping a 3D surface position to RGB irradiance.

    Inputs are normalized to the training bounding box and lifted with a
    sinusoidal positional encoding. Hidden layers and the output use
    softplus, so predictions are non-negative. Training minimizes the MSE
    between ``log1p`` of prediction and target with Adam.

    Parameters
    ----------
    n_hidden : int
        Number of hidden layers.
    width : int
        Units per hidden layer.
    n_bands : int
        Frequency bands of the positional encoding (input size ``3 + 6 * n_bands``).
    epochs, batch_size, learning_rate : training schedule.
    random_state : int
        Seeds weight init and shuffling.
    """

    _MAGIC = b"NIRF"

    def __init__(self, n_hidden=3, width=64, n_bands=4, epochs=2000, batch_size=16,
                 learning_rate=1e-4, random_state=0):
        self.n_hidden = n_hidden
        self.width = width
        self.n_bands = n_bands
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    # -- encoding / network ------------------------------------------------

    def _encode(self, X):
        z = 2.0 * (X - self.bounds_[0]) / np.maximum(self.bounds_[1] - self.bounds_[0], 1e-12) - 1.0
        feats = [z]
        for k in range(self.n_bands):
            f = (2.0 ** k) * np.pi * z
            feats.append(np.sin(f))
            feats.append(np.cos(f))
        return np.concatenate(feats, axis=1)

    def _layer_sizes(self):
        return [3 + 6 * self.n_bands] + [self.width] * self.n_hidden + [3]

    def _init_params(self, rng):
        params = {}
        sizes = self._layer_sizes()
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = np.sqrt(6.0 / (a + b))
            params[f"W{i}"] = rng.uniform(-lim, lim, size=(a, b))
            params[f"b{i}"] = np.zeros(b)
        return params

    def _forward(self, params, E):
        acts = [E]
        pre = []
        h = E
        n_layers = len(self._layer_sizes()) - 1
        for i in range(n_layers):
            a = h @ params[f"W{i}"] + params[f"b{i}"]
            pre.append(a)
            h = _softplus(a)
            acts.append(h)
        return h, acts, pre

    def _loss_grad(self, params, E, y):
        """Loss and gradients of mean((log1p(pred) - log1p(y))**2)."""
        pred, acts, pre = self._forward(params, E)
        diff = np.log1p(pred) - np.log1p(y)
        loss = float(np.mean(diff ** 2))
        g = 2.0 * diff / diff.size / (1.0 + pred)
        grads = {}
        for i in reversed(range(len(pre))):
            g = g * _sigmoid(pre[i])
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i:
                g = g @ params[f"W{i}"].T
        return loss, grads

    # -- sklearn API ---------------------------------------------------------

    def fit(self, X, y, bounds=None):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        if X.shape[1] != 3 or y.ndim != 2 or y.shape[1] != 3:
            raise InputError("NIrF expects X of shape (n, 3) and y of shape (n, 3)")
        if (y < 0).any():
            raise InputError("irradiance targets must be non-negative")
        rng = np.random.default_rng(self.random_state)
        if bounds is None:
            bounds = (X.min(axis=0), X.max(axis=0))
        self.bounds_ = (np.asarray(bounds[0], dtype=np.float64), np.asarray(bounds[1], dtype=np.float64))
        params = self._init_params(rng)
        E = self._encode(X)
        opt = Adam(lr=self.learning_rate)
        n = len(X)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            perm = rng.permutation(n)
            total = 0.0
            for s in range(0, n, self.batch_size):
                idx = perm[s:s + self.batch_size]
                loss, grads = self._loss_grad(params, E[idx], y[idx])
                if not np.isfinite(loss):
                    raise InvariantError(f"NIrF training diverged at epoch {epoch}")
                opt.step(params, grads)
                total += loss * len(idx)
            self.loss_curve_.append(total / n)
        self.params_ = params
        self.loss_ = self._loss_grad(params, E, y)[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return self._forward(self.params_, self._encode(X))[0]

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Flat little-endian float32 file behind a 16-byte header.

        Header: magic ``NIRF``, then uint32 input size, width, hidden-layer
        count. Payload: bounds (6 floats) then each layer's W (row-major)
        and b.
        """
        check_is_fitted(self, "params_")
        sizes = self._layer_sizes()
        header = self._MAGIC + struct.pack("<3I", sizes[0], self.width, self.n_hidden)
        chunks = [np.concatenate(self.bounds_)]
        for i in range(len(sizes) - 1):
            chunks.append(self.params_[f"W{i}"].ravel())
            chunks.append(self.params_[f"b{i}"])
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.concatenate(chunks).astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "NeuralIrradianceField":
        buf = open(path, "rb").read()
        if len(buf) < 16 or buf[:4] != cls._MAGIC:
            raise InputError(f"{path}: not a NIrF weight file")
        n_in, width, n_hidden = struct.unpack("<3I", buf[4:16])
        model = cls(n_hidden=n_hidden, width=width, n_bands=(n_in - 3) // 6)
        sizes = model._layer_sizes()
        flat = np.frombuffer(buf[16:], dtype="<f4").astype(np.float64)
        expected = 6 + sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        if flat.size != expected:
            raise InputError(f"{path}: expected {expected} floats, found {flat.size}")
        model.bounds_ = (flat[:3], flat[3:6])
        pos = 6
        params = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"W{i}"] = flat[pos:pos + a * b].reshape(a, b)
            pos += a * b
            params[f"b{i}"] = flat[pos:pos + b]
            pos += b
        model.params_ = params
        return model


@dataclass
class NirfConfig:
    n_points: int = 1024
    gather_samples: int = 2048
    epochs: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-4
    seed: int = 0


def train_nirf(scene, tbl: TblLight, config: NirfConfig | None = None):
    """Fit a NIrF on surfels drawn from the irradiance atlas.

    Targets are stratified Monte-Carlo irradiance gathers at each sampled
    surfel. Returns the fitted model and the training set ``(X, y)``.
    """
    config = config or NirfConfig()
    surfels = texel_surfels(scene.mesh, scene.atlas.irt_res)
    rng = np.random.default_rng(config.seed)
    n = min(config.n_points, len(surfels))
    pick = np.sort(rng.choice(len(surfels), size=n, replace=False))
    X = surfels.position[pick]
    y = gather_irradiance_stratified(
        tbl, X, surfels.normal[pick], surfels.flat_index[pick].astype(np.uint64),
        config.gather_samples, config.seed,
    )
    lo, hi = scene.mesh.bounds()
    model = NeuralIrradianceField(
        epochs=config.epochs, batch_size=config.batch_size,
        learning_rate=config.learning_rate, random_state=config.seed,
    ).fit(X, y, bounds=(lo, hi))
    return model, (X, y)
