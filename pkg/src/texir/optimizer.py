"""Three-stage material estimation with analytic texture gradients.

Stage 1 fits a Lambertian albedo with semantic smoothing. Stage 2 freezes
albedo and fits roughness, propagating values found on virtual highlights to
the rest of each class. Stage 3 refines both textures jointly with semantic
and room smoothing on roughness.

All pixel losses are evaluated in image space on valid, non-emitter pixels
and carried back to texels through the bilinear lookup (deferred shading).
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._adam import Adam
from ._rng import derive_seed
from .assets import Scene, TextureImage, bilinear_taps, scatter_taps, write_pfm
from .brdf import R_MIN
from .errors import InputError, InvariantError
from .renderer import (GBuffer, RenderConfig, _irradiance_at, emitter_pixels, make_gbuffer, render,
                       specular_pixels)
from .segmentation import VhlMasks, compute_rooms, detect_vhl
from .tbl import TblLight

log = logging.getLogger(__name__)


@dataclass
class Hyper:
    lr: float = 3e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 40
    beta_ssa: float = 10.0
    beta_sp: float = 1.0
    beta_ssr: float = 0.1
    eps_denom: float = 1e-8
    q: float = 0.4
    n_samples: int = 16
    sampler: str = "mixture"
    vhl_samples: int = 64
    seed: int = 0
    r_min: float = R_MIN
    emitter_threshold: float | None = 0.5
    # divide summed prior terms by the data-term entry count
    normalize_priors: bool = True


@dataclass
class LossReport:
    """Per-term losses as they enter the stage objective.

    Smoothness terms are stored already divided by the data-term entry
    count, so ``total == data + weights . terms``.
    """

    data: float = 0.0
    ss: float = 0.0
    sp: float = 0.0
    rs: float = 0.0
    total: float = 0.0
    per_view: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimState:
    albedo: np.ndarray  # (H, W, 3) float64
    roughness: np.ndarray  # (H, W, 1) float64
    hyper: Hyper = field(default_factory=Hyper)
    stage: int = 0
    adam: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)  # stage -> list of epoch LossReport dicts

    @classmethod
    def initial(cls, albedo_res: int, roughness_res: int, hyper: Hyper | None = None) -> "OptimState":
        return cls(np.full((albedo_res, albedo_res, 3), 0.5), np.full((roughness_res, roughness_res, 1), 0.5),
                   hyper or Hyper())

    def reset_moments(self, names) -> None:
        h = self.hyper
        for name in names:
            self.adam[name] = Adam(h.lr, h.beta1, h.beta2, h.eps)

    def albedo_texture(self) -> TextureImage:
        return TextureImage(self.albedo)

    def roughness_texture(self) -> TextureImage:
        return TextureImage(self.roughness)


# ---------------------------------------------------------------------------
# losses


def _as_pixels(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a.reshape(-1, a.shape[-1])


def _group_smooth(feature, ids):
    """L1 distance to the detached per-group mean, summed; groups are ids > 0."""
    shape = np.shape(feature)
    f = _as_pixels(feature)
    ids = np.asarray(ids).reshape(-1)
    if len(ids) != len(f):
        raise InputError("feature and mask have different pixel counts")
    grad = np.zeros_like(f)
    sel = np.nonzero(ids > 0)[0]
    if len(sel) == 0:
        return 0.0, grad.reshape(shape)
    groups, first, inv = np.unique(ids[sel], return_index=True, return_inverse=True)
    counts = np.bincount(inv, minlength=len(groups)).astype(np.float64)
    fs = f[sel]
    # offset by one member per group so constant groups give an exact zero
    ref = fs[first]
    d = fs - ref[inv]
    mean = np.stack([np.bincount(inv, weights=d[:, c], minlength=len(groups)) for c in range(f.shape[1])], axis=1)
    mean = ref + mean / counts[:, None]
    diff = fs - mean[inv]
    grad[sel] = np.sign(diff)
    return float(np.abs(diff).sum()), grad.reshape(shape)


def loss_semantic_smooth(feature_image, class_mask):
    """Semantic smoothness: sum over classes of |F - class mean| on class pixels.

    The class mean is treated as a constant, so the gradient is the sign of
    each pixel's deviation. Pixels with class id 0 are ignored.
    """
    return _group_smooth(feature_image, class_mask)


def loss_room_smooth(roughness_image, room_mask):
    """Room smoothness: same form as the semantic term with rooms as groups."""
    return _group_smooth(roughness_image, room_mask)


def loss_propagation(roughness_image, class_mask, vhl_mask, q: float = 0.4, targets=None, region=None):
    """Pull each class's non-highlight roughness toward its highlight quantile.

    For every class with at least one highlight pixel, the target is the
    ``q`` quantile of roughness over its highlight pixels (detached) and the
    loss is the summed L1 distance over the class's other pixels.

    ``targets`` (class id -> value) overrides the per-image quantiles, and
    ``region`` narrows the pixels that are pulled (default: not highlight).
    """
    shape = np.shape(roughness_image)
    r = _as_pixels(roughness_image)[:, 0]
    ids = np.asarray(class_mask).reshape(-1)
    vhl = np.asarray(vhl_mask, dtype=bool).reshape(-1)
    pulled = ~vhl if region is None else np.asarray(region, dtype=bool).reshape(-1) & ~vhl
    grad = np.zeros_like(r)
    loss = 0.0
    if targets is None:
        targets = {int(c): float(np.quantile(r[(ids == c) & vhl], q, method="linear"))
                   for c in np.unique(ids[vhl & (ids > 0)])}
    for c, target in targets.items():
        rest = (ids == c) & pulled
        diff = r[rest] - target
        loss += float(np.abs(diff).sum())
        grad[rest] = np.sign(diff)
    return loss, grad.reshape(shape)


def loss_data(render_image, input_image, mask=None):
    """Mean absolute error over masked pixels and all channels.

    Returns ``(loss, gradient)``; the gradient is ``sign(render - input)``
    divided by the entry count, zero outside the mask.
    """
    a = np.asarray(render_image, dtype=np.float64)
    b = np.asarray(input_image, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"render {a.shape} and input {b.shape} differ in shape")
    fa = _as_pixels(a)
    fb = _as_pixels(b)
    m = np.ones(len(fa), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    n = int(m.sum()) * fa.shape[1]
    grad = np.zeros_like(fa)
    if n == 0:
        return 0.0, grad.reshape(a.shape)
    diff = fa[m] - fb[m]
    grad[m] = np.sign(diff) / n
    return float(np.abs(diff).sum() / n), grad.reshape(a.shape)


# ---------------------------------------------------------------------------
# gradients


def backprop_to_textures(taps, pixel_grad, width: int, height: int) -> np.ndarray:
    """Scatter per-pixel parameter gradients into texels with bilinear weights.

    ``taps`` is the ``(idx, w)`` footprint of each pixel; ``pixel_grad`` is
    ``(n, C)`` already multiplied by the shading partial.
    """
    idx, w = taps
    return scatter_taps(idx, w, pixel_grad, width, height)


def gather(tex: np.ndarray, taps) -> np.ndarray:
    idx, w = taps
    flat = tex.reshape(-1, tex.shape[-1])
    return np.einsum("nk,nkc->nc", w, flat[idx])


def adam_step(state: OptimState, grads: dict) -> OptimState:
    """One Adam update on the named textures, then projection to the valid box."""
    for name, g in grads.items():
        bad = ~np.isfinite(g)
        if bad.any():
            j, i, c = np.argwhere(bad)[0]
            raise InvariantError(f"non-finite {name} gradient at texel (i={i}, j={j}, channel={c})")
        if name not in state.adam:
            state.reset_moments([name])
    params = {name: getattr(state, name) for name in grads}
    for name, g in grads.items():
        state.adam[name].step({name: params[name]}, {name: g})
    np.clip(state.albedo, 0.0, 1.0, out=state.albedo)
    np.clip(state.roughness, state.hyper.r_min, 1.0, out=state.roughness)
    return state


# ---------------------------------------------------------------------------
# problem setup


@dataclass
class ViewData:
    gbuffer: GBuffer  # valid restricted to loss pixels
    pixels: np.ndarray  # flat indices of loss pixels
    target: np.ndarray  # (n, 3)
    irradiance: np.ndarray  # (n, 3)
    albedo_taps: tuple
    rough_taps: tuple
    class_id: np.ndarray
    room_id: np.ndarray
    vhl: np.ndarray | None = None
    pulled: np.ndarray | None = None  # pixels clear of highlight texels


@dataclass
class Problem:
    scene: Scene
    tbl: TblLight
    irradiance: object
    views: list
    albedo_shape: tuple
    rough_shape: tuple
    vhl_masks: VhlMasks | None = None
    rooms: object = None
    hyper: Hyper = field(default_factory=Hyper)
    vhl_texels: np.ndarray | None = None

    def coverage(self, which: str = "albedo") -> np.ndarray:
        """Texels that are the nearest (largest-weight) tap of at least one loss pixel."""
        h, w = self.albedo_shape if which == "albedo" else self.rough_shape
        hit = np.zeros(h * w, dtype=bool)
        for v in self.views:
            idx, wt = v.albedo_taps if which == "albedo" else v.rough_taps
            if len(idx):
                hit[idx[np.arange(len(idx)), wt.argmax(axis=1)]] = True
        return hit.reshape(h, w)


def prepare(scene: Scene, hyper: Hyper | None = None, tbl: TblLight | None = None, irradiance=None,
            albedo_res: int | None = None, roughness_res: int | None = None, with_rooms: bool = True) -> Problem:
    """Precompute G-buffers, texel footprints and irradiance for every input view."""
    hyper = hyper or Hyper()
    if scene.semantic is None:
        raise InputError("optimization needs a semantic mask (semantic smoothness and propagation use it)")
    irradiance = irradiance if irradiance is not None else scene.irradiance
    if irradiance is None:
        raise InputError("optimization needs baked irradiance; run bake first")
    if not scene.cameras:
        raise InputError("optimization needs at least one input view")
    tbl = tbl or TblLight(scene.bvh, scene.emissive)
    ares = albedo_res or scene.atlas.albedo_res
    rres = roughness_res or scene.atlas.roughness_res
    rooms = compute_rooms(scene.mesh, atlas_res=rres) if with_rooms else None
    views = []
    for cam, img in zip(scene.cameras, scene.images):
        gb = make_gbuffer(scene, cam, room_mask=rooms.texel_rooms if rooms else None)
        emit, _ = emitter_pixels(gb, tbl.emissive, hyper.emitter_threshold)
        use = gb.valid & ~emit
        px = np.nonzero(use)[0]
        gb_use = GBuffer(gb.width, gb.height, use, gb.position, gb.normal, gb.uv, gb.view, gb.triangle,
                         gb.class_id, gb.room_id)
        target = img.data.reshape(-1, img.channels).astype(np.float64)[px]
        if target.shape[1] == 1:
            target = np.repeat(target, 3, axis=1)
        uv = gb.uv[px]
        views.append(ViewData(gb_use, px, target, _irradiance_at(gb_use, irradiance)[px],
                              bilinear_taps(uv, ares, ares), bilinear_taps(uv, rres, rres),
                              gb.class_id[px], gb.room_id[px]))
    return Problem(scene, tbl, irradiance, views, (ares, ares), (rres, rres), rooms=rooms, hyper=hyper)


def compute_vhl(problem: Problem, albedo: TextureImage, hyper: Hyper) -> VhlMasks:
    """Detect highlights in every view and lift them to roughness texels.

    A texel counts as a highlight texel when any view's highlight pixel
    touches it; propagation only pulls pixels whose footprint avoids those
    texels, so a texel is never both a source and a target.
    """
    gbs = [v.gbuffer for v in problem.views]
    masks = detect_vhl(problem.scene, problem.tbl, gbs, albedo, problem.irradiance,
                       n_samples=hyper.vhl_samples, seed=derive_seed(hyper.seed, 99),
                       emitter_threshold=hyper.emitter_threshold)
    h, w = problem.rough_shape
    touched = np.zeros(h * w)
    for v, hl in zip(problem.views, masks.highlight):
        v.vhl = hl[v.pixels]
        idx, wt = v.rough_taps
        touched += np.bincount(idx[v.vhl].ravel(), weights=wt[v.vhl].ravel(), minlength=h * w)
    texels = touched > 0
    for v in problem.views:
        idx, wt = v.rough_taps
        v.pulled = ~((wt > 0) & texels[idx]).any(axis=1)
    problem.vhl_texels = texels.reshape(h, w)
    problem.vhl_masks = masks
    return masks


def propagation_targets(problem: Problem, roughness: np.ndarray, q: float) -> dict:
    """Per-class ``q`` quantile of roughness over highlight pixels of all views."""
    vals, ids = [], []
    for v in problem.views:
        if v.vhl is None or not v.vhl.any():
            continue
        idx, wt = v.rough_taps
        vals.append(gather(roughness, (idx[v.vhl], wt[v.vhl]))[:, 0])
        ids.append(v.class_id[v.vhl])
    if not vals:
        return {}
    vals = np.concatenate(vals)
    ids = np.concatenate(ids)
    return {int(c): float(np.quantile(vals[ids == c], q, method="linear")) for c in np.unique(ids[ids > 0])}


# ---------------------------------------------------------------------------
# per-view objectives


def _specular(problem: Problem, v: ViewData, rough_pix: np.ndarray, seed: int, want_grad: bool):
    full = np.zeros(v.gbuffer.n_pixels)
    full[v.pixels] = rough_pix
    cfg = RenderConfig(n_samples=problem.hyper.n_samples, sampler=problem.hyper.sampler, seed=seed,
                       r_min=problem.hyper.r_min)
    out = specular_pixels(v.gbuffer, full, problem.tbl, cfg, want_grad=want_grad)
    if want_grad:
        return out[0][v.pixels], out[1][v.pixels]
    return out[v.pixels], None


def view_objective(problem: Problem, state: OptimState, k: int, stage: int, seed: int):
    """Loss terms and texture gradients of one view for one stage."""
    h = state.hyper
    v = problem.views[k]
    n_ent = 3 * max(len(v.pixels), 1) if h.normalize_priors else 1
    a_pix = gather(state.albedo, v.albedo_taps)
    diffuse = a_pix / np.pi * v.irradiance
    rep = LossReport()
    grads = {}
    if stage == 1:
        data, g_img = loss_data(diffuse, v.target)
        ss, g_ss = loss_semantic_smooth(a_pix, v.class_id)
        rep.data, rep.ss = data, ss / n_ent
        rep.total = data + h.beta_ssa * rep.ss
        g_a = g_img * v.irradiance / np.pi + (h.beta_ssa / n_ent) * g_ss
        grads["albedo"] = backprop_to_textures(v.albedo_taps, g_a, *problem.albedo_shape[::-1])
        return rep, grads
    r_pix = gather(state.roughness, v.rough_taps)[:, 0]
    spec, dspec = _specular(problem, v, r_pix, seed, want_grad=True)
    data, g_img = loss_data(diffuse + spec, v.target)
    g_r = (g_img * dspec).sum(axis=1)
    rep.data = data
    if stage == 2:
        if v.vhl is not None:
            targets = propagation_targets(problem, state.roughness, h.q)
            sp, g_sp = loss_propagation(r_pix, v.class_id, v.vhl, h.q, targets=targets, region=v.pulled)
            rep.sp = sp / n_ent
            g_r = g_r + (h.beta_sp / n_ent) * g_sp
        rep.total = data + h.beta_sp * rep.sp
    else:
        ss, g_ss = loss_semantic_smooth(r_pix, v.class_id)
        rs, g_rs = loss_room_smooth(r_pix, v.room_id)
        rep.ss, rep.rs = ss / n_ent, rs / n_ent
        rep.total = data + h.beta_ssr * (rep.ss + rep.rs)
        g_r = g_r + (h.beta_ssr / n_ent) * (g_ss + g_rs)
        grads["albedo"] = backprop_to_textures(v.albedo_taps, g_img * v.irradiance / np.pi,
                                               *problem.albedo_shape[::-1])
    grads["roughness"] = backprop_to_textures(v.rough_taps, g_r[:, None], *problem.rough_shape[::-1])
    return rep, grads


def _mean_report(reports: list) -> LossReport:
    out = LossReport()
    for name in ("data", "ss", "sp", "rs", "total"):
        setattr(out, name, float(np.mean([getattr(r, name) for r in reports])))
    out.per_view = [r.total for r in reports]
    return out


def run_stage(problem: Problem, state: OptimState, stage: int, epochs: int | None = None) -> OptimState:
    h = state.hyper
    problem.hyper = h
    epochs = h.epochs if epochs is None else epochs
    names = ["albedo"] if stage == 1 else ["roughness"] if stage == 2 else ["albedo", "roughness"]
    state.reset_moments(names)
    history = state.history.setdefault(stage, [])
    for epoch in range(epochs):
        t0 = time.perf_counter()
        reports = []
        for k in range(len(problem.views)):
            rep, grads = view_objective(problem, state, k, stage, derive_seed(h.seed, stage, epoch, k))
            adam_step(state, {n: grads[n] for n in names})
            reports.append(rep)
        epoch_rep = _mean_report(reports)
        history.append(epoch_rep.as_dict())
        log.info("stage %d epoch %d loss %.6f (%.2fs)", stage, epoch, epoch_rep.total, time.perf_counter() - t0)
    state.stage = stage
    return state


def run_stage1(problem: Problem, state: OptimState, epochs: int | None = None) -> OptimState:
    """Coarse Lambertian albedo with semantic smoothing."""
    return run_stage(problem, state, 1, epochs)


def run_stage2(problem: Problem, state: OptimState, epochs: int | None = None) -> OptimState:
    """Roughness on frozen albedo, propagated from virtual highlights."""
    if problem.vhl_masks is None:
        compute_vhl(problem, state.albedo_texture(), state.hyper)
    return run_stage(problem, state, 2, epochs)


def run_stage3(problem: Problem, state: OptimState, epochs: int | None = None) -> OptimState:
    """Joint refinement with semantic and room smoothing on roughness."""
    if any(v.room_id.max(initial=0) == 0 for v in problem.views if len(v.pixels)):
        log.warning("some views have no room ids; room smoothing is inactive there")
    return run_stage(problem, state, 3, epochs)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: OptimState, directory, stage: int) -> dict:
    """Write textures and Adam moments for one stage; returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("albedo", "roughness"):
        p = d / f"{name}_stage{stage}.pfm"
        write_pfm(TextureImage(getattr(state, name)), p)
        paths[name] = str(p)
        opt = state.adam.get(name)
        if opt is not None and name in opt.m:
            for mom in ("m", "v"):
                mp = d / f"{name}_stage{stage}_{mom}.pfm"
                write_pfm(TextureImage(getattr(opt, mom)[name]), mp)
                paths[f"{name}_{mom}"] = str(mp)
    return paths


# ---------------------------------------------------------------------------
# estimator


class MaterialEstimator(BaseEstimator):
    """Recover albedo and roughness textures from a scene's input views.

    ``fit(scene)`` runs the requested stages and exposes ``albedo_``,
    ``roughness_`` (TextureImage), ``coverage_`` (bool texel maps),
    ``history_`` (per-stage epoch losses) and ``vhl_``. ``predict(cameras)``
    renders the fitted materials.

    Parameters
    ----------
    stages : tuple of int
        Stages to run, in order.
    init_albedo : TextureImage or None
        Starting albedo; required to run stage 2 or 3 without stage 1.
    normalize_priors : bool
        Divide the summed smoothness and propagation terms by the data-term
        entry count so both sides of the objective are per-pixel averages.
    """

    def __init__(self, stages=(1, 2, 3), epochs=40, learning_rate=3e-2, beta_ssa=10.0, beta_sp=1.0,
                 beta_ssr=0.1, q=0.4, n_samples=16, vhl_samples=64, albedo_res=None, roughness_res=None,
                 init_albedo=None, random_state=0, checkpoint_dir=None, sampler="mixture", normalize_priors=True):
        self.stages = stages
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.beta_ssa = beta_ssa
        self.beta_sp = beta_sp
        self.beta_ssr = beta_ssr
        self.q = q
        self.n_samples = n_samples
        self.vhl_samples = vhl_samples
        self.albedo_res = albedo_res
        self.roughness_res = roughness_res
        self.init_albedo = init_albedo
        self.random_state = random_state
        self.checkpoint_dir = checkpoint_dir
        self.sampler = sampler
        self.normalize_priors = normalize_priors

    def _hyper(self) -> Hyper:
        return Hyper(lr=self.learning_rate, epochs=self.epochs, beta_ssa=self.beta_ssa, beta_sp=self.beta_sp,
                     beta_ssr=self.beta_ssr, q=self.q, n_samples=self.n_samples, vhl_samples=self.vhl_samples,
                     seed=int(self.random_state), sampler=self.sampler,
                     normalize_priors=self.normalize_priors)

    def fit(self, scene: Scene, y=None, problem: Problem | None = None):
        stages = tuple(sorted(int(s) for s in self.stages))
        if not stages or any(s not in (1, 2, 3) for s in stages):
            raise InputError(f"stages must be a non-empty subset of 1,2,3, got {self.stages!r}")
        if 1 not in stages and self.init_albedo is None:
            raise InputError("stages 2/3 need a stage-1 albedo; pass init_albedo")
        hyper = self._hyper()
        problem = problem or prepare(scene, hyper, albedo_res=self.albedo_res, roughness_res=self.roughness_res,
                                     with_rooms=3 in stages)
        ares, rres = problem.albedo_shape[0], problem.rough_shape[0]
        state = OptimState.initial(ares, rres, hyper)
        if self.init_albedo is not None:
            init = self.init_albedo
            if (init.width, init.height) != (ares, ares):
                raise InputError(f"init albedo is {init.width}x{init.height}, expected {ares}x{ares}")
            state.albedo[:] = np.repeat(init.data, 3, axis=2) if init.channels == 1 else init.data
        self.checkpoints_ = {}
        self.timings_ = {}
        runners = {1: run_stage1, 2: run_stage2, 3: run_stage3}
        for s in stages:
            t0 = time.perf_counter()
            runners[s](problem, state)
            self.timings_[s] = time.perf_counter() - t0
            if self.checkpoint_dir is not None:
                self.checkpoints_[s] = save_checkpoint(state, self.checkpoint_dir, s)
        self.state_ = state
        self.problem_ = problem
        self.albedo_ = state.albedo_texture()
        self.roughness_ = state.roughness_texture()
        self.coverage_ = {"albedo": problem.coverage("albedo"), "roughness": problem.coverage("roughness")}
        self.history_ = state.history
        self.vhl_ = problem.vhl_masks
        return self

    def predict(self, cameras, n_samples: int = 64, seed: int = 0):
        """Render the fitted materials from each camera; returns a list of TextureImage."""
        problem = self.problem_
        scene = problem.scene
        cfg = RenderConfig(n_samples=n_samples, sampler="ggx", seed=seed)
        return [render(scene, cam, cfg, tbl=problem.tbl, irradiance=problem.irradiance,
                       albedo=self.albedo_, roughness=self.roughness_) for cam in cameras]


__all__ = [
    "Hyper", "LossReport", "OptimState", "MaterialEstimator", "Problem", "ViewData",
    "loss_semantic_smooth", "loss_room_smooth", "loss_propagation", "loss_data",
    "backprop_to_textures", "adam_step", "prepare", "compute_vhl",
    "run_stage1", "run_stage2", "run_stage3", "save_checkpoint"
]
