"""Segmentation priors: occupancy-grid rooms, virtual highlights and class statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .assets import MaskImage
from .errors import InputError
from .geometry import Surfels, TriangleMesh, texel_surfels

# ---------------------------------------------------------------------------
# rooms


@dataclass
class RoomMap:
    cell_size: float
    origin: np.ndarray  # (x, z) of the grid corner
    occupied: np.ndarray  # (nz, nx) bool
    labels: np.ndarray  # (nz, nx) int, 0 on occupied cells, rooms from 1
    texel_rooms: MaskImage | None = None

    @property
    def n_rooms(self) -> int:
        return int(self.labels.max())

    def cell_of(self, xz) -> tuple[np.ndarray, np.ndarray]:
        xz = np.asarray(xz, dtype=np.float64).reshape(-1, 2)
        nz, nx = self.labels.shape
        ix = np.clip(np.floor((xz[:, 0] - self.origin[0]) / self.cell_size).astype(np.int64), 0, nx - 1)
        iz = np.clip(np.floor((xz[:, 1] - self.origin[1]) / self.cell_size).astype(np.int64), 0, nz - 1)
        return iz, ix

    def room_at(self, points) -> np.ndarray:
        """Room id of the nearest free cell for each 3D point (ties to the lower id)."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        xz = points[:, [0, 2]]
        iz, ix = self.cell_of(xz)
        rooms = self.labels[iz, ix].copy()
        todo = np.nonzero(rooms == 0)[0]
        if len(todo):
            fz, fx = np.nonzero(self.labels > 0)
            centers = self.origin + (np.stack([fx, fz], axis=1) + 0.5) * self.cell_size
            ids = self.labels[fz, fx]
            k = min(8, len(ids))
            dist, nn = cKDTree(centers).query(xz[todo], k=k)
            dist = dist.reshape(len(todo), k)
            nn = nn.reshape(len(todo), k)
            tie = dist <= dist[:, :1] + 1e-9
            cand = np.where(tie, ids[nn], np.iinfo(np.int64).max)
            rooms[todo] = cand.min(axis=1)
        return rooms


def label_rooms(free: np.ndarray) -> np.ndarray:
    """4-connected components of free cells, numbered from 1 in raster order."""
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, _ = ndimage.label(np.asarray(free, dtype=bool), structure=structure)
    return labels.astype(np.int64)


def _renumber(labels: np.ndarray) -> np.ndarray:
    """Relabel ids contiguously from 1 in raster order of first appearance."""
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    lut = np.zeros(int(labels.max()) + 1, dtype=np.int64)
    lut[ids[np.argsort(first)]] = np.arange(1, len(ids) + 1)
    return lut[labels]


def split_rooms(free: np.ndarray, radius_cells: int) -> np.ndarray:
    """Rooms of a free-space grid, split at openings narrower than ``2 * radius_cells + 1`` cells.

    Free space is eroded by a disk, its components seed the rooms and the
    seeds grow back through free space one 4-neighbour step at a time (ties
    go to the lower id). Free regions that erode away entirely keep their
    own flood-fill component. ``radius_cells == 0`` is plain flood fill.
    """
    free = np.asarray(free, dtype=bool)
    if radius_cells <= 0:
        return label_rooms(free)
    r = int(radius_cells)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = yy * yy + xx * xx <= r * r
    core = ndimage.binary_erosion(free, structure=disk, border_value=0)
    labels = label_rooms(core)
    big = free.size + 1
    cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    while True:
        todo = free & (labels == 0)
        if not todo.any():
            break
        grown = ndimage.grey_erosion(np.where(labels > 0, labels, big), footprint=cross, mode="constant", cval=big)
        step = todo & (grown < big)
        if not step.any():
            break
        labels[step] = grown[step]
    rest = free & (labels == 0)
    if rest.any():
        extra = label_rooms(rest)
        labels[rest] = extra[rest] + labels.max()
    return _renumber(labels)


def _clip_slab(tri: np.ndarray, y0: float, y1: float) -> np.ndarray:
    poly = [p for p in tri]
    for bound, keep_above in ((y0, True), (y1, False)):
        out = []
        n = len(poly)
        for k in range(n):
            a, b = poly[k], poly[(k + 1) % n]
            ina = a[1] >= bound if keep_above else a[1] <= bound
            inb = b[1] >= bound if keep_above else b[1] <= bound
            if ina:
                out.append(a)
            if ina != inb:
                s = (bound - a[1]) / (b[1] - a[1])
                out.append(a + s * (b - a))
        poly = out
        if not poly:
            break
    return np.array(poly).reshape(-1, 3)


def _mark_polygon(occ, poly2d, origin, cell):
    """Mark cells whose closed square overlaps a (possibly degenerate) convex polygon."""
    nz, nx = occ.shape
    lo = poly2d.min(axis=0)
    hi = poly2d.max(axis=0)
    tol = 1e-9
    i0 = max(0, int(np.floor((lo[0] - origin[0]) / cell - tol)))
    i1 = min(nx - 1, int(np.floor((hi[0] - origin[0]) / cell + tol)))
    k0 = max(0, int(np.floor((lo[1] - origin[1]) / cell - tol)))
    k1 = min(nz - 1, int(np.floor((hi[1] - origin[1]) / cell + tol)))
    if i1 < i0 or k1 < k0:
        return
    ii, kk = np.meshgrid(np.arange(i0, i1 + 1), np.arange(k0, k1 + 1))
    bx0 = origin[0] + ii * cell
    bz0 = origin[1] + kk * cell
    ok = np.ones(ii.shape, dtype=bool)
    n = len(poly2d)
    for k in range(n):
        a = poly2d[k]
        b = poly2d[(k + 1) % n]
        e = b - a
        axis = np.array([-e[1], e[0]])
        if np.hypot(*axis) < 1e-12:
            continue
        proj = poly2d @ axis
        pmin, pmax = proj.min(), proj.max()
        corners = [
            bx0 * axis[0] + bz0 * axis[1],
            (bx0 + cell) * axis[0] + bz0 * axis[1],
            bx0 * axis[0] + (bz0 + cell) * axis[1],
            (bx0 + cell) * axis[0] + (bz0 + cell) * axis[1],
        ]
        cmin = np.minimum.reduce(corners)
        cmax = np.maximum.reduce(corners)
        scale = tol * max(1.0, np.abs(axis).sum())
        ok &= (cmax >= pmin - scale) & (cmin <= pmax + scale)
    occ[kk[ok], ii[ok]] = True


def occupancy_grid(mesh: TriangleMesh, cell_size: float = 0.1, slice_=(0.5, 1.5)):
    """Cells (z rows, x columns) touched by geometry inside the height slice."""
    lo, hi = mesh.bounds()
    origin = np.array([lo[0], lo[2]])
    nx = max(1, int(np.ceil((hi[0] - lo[0]) / cell_size - 1e-9)))
    nz = max(1, int(np.ceil((hi[2] - lo[2]) / cell_size - 1e-9)))
    occ = np.zeros((nz, nx), dtype=bool)
    y0, y1 = slice_
    p = mesh.positions[mesh.triangles]
    in_slab = (p[:, :, 1].max(axis=1) >= y0) & (p[:, :, 1].min(axis=1) <= y1)
    for tri in p[in_slab]:
        poly = _clip_slab(tri, y0, y1)
        if len(poly):
            _mark_polygon(occ, poly[:, [0, 2]], origin, cell_size)
    return occ, origin


def compute_rooms(mesh: TriangleMesh, cell_size: float = 0.1, slice_=(0.5, 1.5), atlas_res=None,
                  surfels: Surfels | None = None, door_width: float = 1.2) -> RoomMap:
    """Room segmentation of the free space in a horizontal occupancy slice.

    Openings up to ``door_width`` meters wide count as doorways and split
    rooms (see :func:`split_rooms`); ``door_width=0`` joins every connected
    free region into one room.

    With ``atlas_res`` (or precomputed ``surfels``) every surface texel is
    also assigned the room of its nearest free cell.
    """
    occ, origin = occupancy_grid(mesh, cell_size, slice_)
    if occ.all():
        raise InputError("every occupancy cell is occupied; no free space to segment")
    labels = split_rooms(~occ, int(np.ceil(0.5 * door_width / cell_size - 1e-9)))
    rooms = RoomMap(cell_size, origin, occ, labels)
    if surfels is None and atlas_res is not None:
        surfels = texel_surfels(mesh, atlas_res)
    if surfels is not None:
        w, h = surfels.resolution
        ids = np.zeros((h, w), dtype=np.int64)
        ids[surfels.texel_j, surfels.texel_i] = rooms.room_at(surfels.position)
        rooms.texel_rooms = MaskImage(ids)
    return rooms


# ---------------------------------------------------------------------------
# statistics


def class_stats(values, mask) -> tuple[float, int]:
    """Mean and count of ``values`` where ``mask`` holds (mean 0 for empty)."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    sel = values[mask]
    n = int(mask.sum())
    return (float(sel.mean()) if n else 0.0), n


def quantile(values, mask, q: float) -> float:
    """Linear-interpolation quantile (position ``q * (n - 1)``) over masked values."""
    sel = np.asarray(values, dtype=np.float64)[np.asarray(mask, dtype=bool)]
    if sel.size == 0:
        raise ValueError("quantile of an empty selection")
    return float(np.quantile(sel, q, method="linear"))


# ---------------------------------------------------------------------------
# virtual highlights


@dataclass
class VhlMasks:
    """Per view: pixel class ids and a flag for virtual-highlight pixels."""

    class_ids: list  # per view, (P,) int (0 where excluded)
    highlight: list  # per view, (P,) bool

    def mask(self, view: int, class_id: int) -> np.ndarray:
        return self.highlight[view] & (self.class_ids[view] == class_id)

    def classes(self, view: int) -> np.ndarray:
        c = np.unique(self.class_ids[view][self.highlight[view]])
        return c[c > 0]

    def classes_with_vhl(self) -> set:
        out = set()
        for v in range(len(self.highlight)):
            out |= set(self.classes(v).tolist())
        return out


def highlight_mask(spec_lum, diffuse_lum, class_ids, tau_abs=0.05, tau_rel=1.0) -> np.ndarray:
    """Pixels whose specular luminance strictly exceeds their class threshold.

    Threshold per class: ``max(tau_abs, tau_rel * median diffuse luminance)``.
    ``class_ids`` of 0 are never marked.
    """
    spec_lum = np.asarray(spec_lum, dtype=np.float64)
    class_ids = np.asarray(class_ids)
    out = np.zeros(spec_lum.shape, dtype=bool)
    for c in np.unique(class_ids):
        if c <= 0:
            continue
        sel = class_ids == c
        thr = max(tau_abs, tau_rel * float(np.median(diffuse_lum[sel])))
        out[sel] = spec_lum[sel] > thr
    return out


def detect_vhl(scene, tbl, gbuffers, albedo, irradiance, n_samples: int = 64, seed: int = 0,
               tau_abs: float = 0.05, tau_rel: float = 1.0, emitter_threshold=0.5) -> VhlMasks:
    """Find virtual highlights: where a near-mirror surface would reflect bright light.

    Each view's specular term is rendered with uniform roughness 0.01 (GGX
    sampling) and compared against a per-class threshold derived from the
    current diffuse shading. Emitter and unlabeled pixels are excluded.
    """
    from .renderer import RenderConfig, emitter_pixels, luminance, shade_diffuse, specular_pixels

    class_ids, highlight = [], []
    for k, gb in enumerate(gbuffers):
        emit, _ = emitter_pixels(gb, tbl.emissive, emitter_threshold)
        ids = np.where(gb.valid & ~emit, gb.class_id, 0)
        rough = np.full(gb.n_pixels, 0.01)
        spec = specular_pixels(gb, rough, tbl, RenderConfig(
            n_samples=n_samples, sampler="ggx", seed=seed + k, emitter_threshold=emitter_threshold))
        diff = shade_diffuse(gb, albedo, irradiance)
        hl = highlight_mask(luminance(spec), luminance(diff), ids, tau_abs, tau_rel)
        class_ids.append(ids)
        highlight.append(hl)
    return VhlMasks(class_ids, highlight)
