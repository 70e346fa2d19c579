"""Triangle meshes, BVH ray casting and texel-to-surface sampling.

Ray/triangle tests and traversal are numba kernels operating on flat
arrays; :class:`BVH` owns those arrays and offers batched entry points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InputError

_MAX_LEAF = 4
_STACK = 64
_BARY_EPS = 1e-9
# multiples of the scene diagonal; the nudge exceeds the secondary-ray t_min
_EDGE_NUDGE = 3e-4


@dataclass(frozen=True)
class TriangleMesh:
    positions: np.ndarray  # (nv, 3) float64, meters
    normals: np.ndarray  # (nv, 3) unit
    uvs: np.ndarray  # (nv, 2) in [0, 1]
    triangles: np.ndarray  # (nt, 3) int64
    has_uvs: bool = True

    def __post_init__(self):
        for name, width in (("positions", 3), ("normals", 3), ("uvs", 2)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != width:
                raise InputError(f"mesh {name} must have shape (n, {width})")
            object.__setattr__(self, name, arr)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "triangles", tris)
        if tris.size and (tris.min() < 0 or tris.max() >= len(self.positions)):
            raise InputError("triangle index out of range")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_vertices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.positions[self.triangles]
        return p[:, 0], p[:, 1], p[:, 2]

    def face_normals(self) -> np.ndarray:
        p0, p1, p2 = self.triangle_vertices()
        n = np.cross(p1 - p0, p2 - p0)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def interpolate(self, tri: np.ndarray, bary: np.ndarray, attr: str) -> np.ndarray:
        """Barycentric interpolation of a per-vertex attribute."""
        values = getattr(self, attr)[self.triangles[tri]]  # (n, 3, k)
        return np.einsum("nj,njk->nk", bary, values)


def compute_vertex_normals(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (unnormalized cross products sum by area)."""
    p = positions[triangles]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    normals = np.zeros_like(positions)
    for k in range(3):
        np.add.at(normals, triangles[:, k], fn)
    length = np.linalg.norm(normals, axis=1, keepdims=True)
    length[length == 0] = 1.0
    return normals / length


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not 0 <= self.t_min < self.t_max:
            raise ValueError("require 0 <= t_min < t_max")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    t: float
    triangle: int
    barycentrics: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    uv: np.ndarray


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True, inline="always")
def _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, i):
    # Moller-Trumbore; returns (t, b1, b2) with t = inf on miss.
    px = dy * e2[i, 2] - dz * e2[i, 1]
    py = dz * e2[i, 0] - dx * e2[i, 2]
    pz = dx * e2[i, 1] - dy * e2[i, 0]
    det = e1[i, 0] * px + e1[i, 1] * py + e1[i, 2] * pz
    if det == 0.0:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[i, 0]
    sy = oy - v0[i, 1]
    sz = oz - v0[i, 2]
    b1 = (sx * px + sy * py + sz * pz) * inv
    if b1 < -_BARY_EPS or b1 > 1.0 + _BARY_EPS:
        return np.inf, 0.0, 0.0
    qx = sy * e1[i, 2] - sz * e1[i, 1]
    qy = sz * e1[i, 0] - sx * e1[i, 2]
    qz = sx * e1[i, 1] - sy * e1[i, 0]
    b2 = (dx * qx + dy * qy + dz * qz) * inv
    if b2 < -_BARY_EPS or b1 + b2 > 1.0 + _BARY_EPS:
        return np.inf, 0.0, 0.0
    t = (e2[i, 0] * qx + e2[i, 1] * qy + e2[i, 2] * qz) * inv
    return t, b1, b2


@numba.njit(cache=True, inline="always")
def _slab(ox, oy, oz, ix, iy, iz, lo, hi, j, tmin, tmax):
    t0 = (lo[j, 0] - ox) * ix
    t1 = (hi[j, 0] - ox) * ix
    if t0 > t1:
        t0, t1 = t1, t0
    tmin = max(tmin, t0)
    tmax = min(tmax, t1)
    t0 = (lo[j, 1] - oy) * iy
    t1 = (hi[j, 1] - oy) * iy
    if t0 > t1:
        t0, t1 = t1, t0
    tmin = max(tmin, t0)
    tmax = min(tmax, t1)
    t0 = (lo[j, 2] - oz) * iz
    t1 = (hi[j, 2] - oz) * iz
    if t0 > t1:
        t0, t1 = t1, t0
    tmin = max(tmin, t0)
    tmax = min(tmax, t1)
    return tmin <= tmax


@numba.njit(cache=True)
def _safe_inv(d):
    if d == 0.0:
        return 1e300
    return 1.0 / d


@numba.njit(cache=True)
def trace(arrays, ox, oy, oz, dx, dy, dz, tmin, tmax):
    """Nearest hit along a ray. Returns (t, tri, b1, b2); tri = -1 on miss."""
    lo, hi, left, right, start, count, order, v0, e1, e2 = arrays
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    best_t = tmax
    best_tri = -1
    best_b1 = 0.0
    best_b2 = 0.0
    stack = np.empty(_STACK, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _slab(ox, oy, oz, ix, iy, iz, lo, hi, node, tmin, best_t):
            continue
        c = count[node]
        if c > 0:
            s = start[node]
            for k in range(s, s + c):
                tri = order[k]
                t, b1, b2 = _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri)
                if t > tmin and (t < best_t or (t == best_t and best_tri >= 0 and tri < best_tri)):
                    if t < tmax:
                        best_t = t
                        best_tri = tri
                        best_b1 = b1
                        best_b2 = b2
        else:
            stack[sp] = left[node]
            sp += 1
            stack[sp] = right[node]
            sp += 1
    if best_tri < 0:
        return np.inf, -1, 0.0, 0.0
    return best_t, best_tri, best_b1, best_b2


@numba.njit(cache=True, parallel=True)
def _trace_batch(arrays, origins, dirs, tmin, tmax, out_t, out_tri, out_b):
    for r in numba.prange(origins.shape[0]):
        t, tri, b1, b2 = trace(
            arrays,
            origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2],
            tmin[r], tmax[r],
        )
        out_t[r] = t
        out_tri[r] = tri
        out_b[r, 0] = 1.0 - b1 - b2
        out_b[r, 1] = b1
        out_b[r, 2] = b2


# ---------------------------------------------------------------------------
# BVH


class BVH:
    """Binary bounding-volume hierarchy over a :class:`TriangleMesh`.

    Built by recursive median splits along the longest centroid axis;
    leaves hold at most four triangles. The build is deterministic.
    """

    def __init__(self, mesh: TriangleMesh):
        if mesh.n_triangles == 0:
            raise InputError("cannot build a BVH over an empty mesh")
        self.mesh = mesh
        p0, p1, p2 = mesh.triangle_vertices()
        tri_lo = np.minimum(np.minimum(p0, p1), p2)
        tri_hi = np.maximum(np.maximum(p0, p1), p2)
        centroids = (p0 + p1 + p2) / 3.0

        lo_list, hi_list, left, right, start, count = [], [], [], [], [], []
        order = np.arange(mesh.n_triangles)

        def new_node():
            lo_list.append(None)
            hi_list.append(None)
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(lo_list) - 1

        root = new_node()
        work = [(root, 0, mesh.n_triangles)]
        while work:
            node, s, e = work.pop()
            idx = order[s:e]
            lo_list[node] = tri_lo[idx].min(axis=0)
            hi_list[node] = tri_hi[idx].max(axis=0)
            if e - s <= _MAX_LEAF:
                start[node] = s
                count[node] = e - s
                continue
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            # stable sort keeps the build deterministic for tied centroids
            sorted_idx = idx[np.argsort(c[:, axis], kind="stable")]
            order[s:e] = sorted_idx
            mid = (s + e) // 2
            l_node = new_node()
            r_node = new_node()
            left[node] = l_node
            right[node] = r_node
            work.append((r_node, mid, e))
            work.append((l_node, s, mid))

        self.node_lo = np.array(lo_list, dtype=np.float64)
        self.node_hi = np.array(hi_list, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.order = order.astype(np.int64)
        self.v0 = np.ascontiguousarray(p0)
        self.e1 = np.ascontiguousarray(p1 - p0)
        self.e2 = np.ascontiguousarray(p2 - p0)
        self.arrays = (
            self.node_lo, self.node_hi, self.left, self.right, self.start,
            self.count, self.order, self.v0, self.e1, self.e2,
        )
        self.epsilon = 1e-4 * mesh.diagonal()

    @property
    def n_nodes(self) -> int:
        return len(self.node_lo)

    def leaves(self) -> list[np.ndarray]:
        return [self.order[s:s + c] for s, c in zip(self.start, self.count) if c > 0]

    def intersect(self, ray: Ray) -> Hit | None:
        t, tri, b = self.intersect_batch(
            ray.origin[None], ray.direction[None],
            t_min=ray.t_min, t_max=ray.t_max,
        )
        if tri[0] < 0:
            return None
        return self._make_hit(float(t[0]), int(tri[0]), b[0])

    def intersect_batch(self, origins, directions, t_min=0.0, t_max=np.inf):
        """Vectorized nearest-hit query; returns ``(t, tri, barycentrics)``."""
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        directions = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
        n = len(origins)
        tmin = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)).copy()
        tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)).copy()
        out_t = np.empty(n)
        out_tri = np.empty(n, dtype=np.int64)
        out_b = np.empty((n, 3))
        _trace_batch(self.arrays, origins, directions, tmin, tmax, out_t, out_tri, out_b)
        return out_t, out_tri, out_b

    def _make_hit(self, t, tri, bary):
        m = self.mesh
        tri_a = np.array([tri])
        b = bary[None]
        n = m.interpolate(tri_a, b, "normals")[0]
        return Hit(
            t=t,
            triangle=tri,
            barycentrics=bary.copy(),
            position=m.interpolate(tri_a, b, "positions")[0],
            normal=n / np.linalg.norm(n),
            uv=m.interpolate(tri_a, b, "uvs")[0],
        )


def build_bvh(mesh: TriangleMesh) -> BVH:
    return BVH(mesh)


def intersect(bvh: BVH, ray: Ray) -> Hit | None:
    return bvh.intersect(ray)


# ---------------------------------------------------------------------------
# texel surfels


@dataclass
class Surfels:
    """Surface samples, one per covered atlas texel (structure of arrays)."""

    resolution: tuple[int, int]  # (width, height)
    texel_i: np.ndarray  # column
    texel_j: np.ndarray  # row, 0 = bottom (v = 0)
    triangle: np.ndarray
    barycentrics: np.ndarray  # (n, 3)
    position: np.ndarray  # (n, 3)
    normal: np.ndarray  # (n, 3) shading normal, oriented with the face
    class_id: np.ndarray = field(default=None)
    room_id: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.texel_i)

    @property
    def flat_index(self) -> np.ndarray:
        return self.texel_j * self.resolution[0] + self.texel_i

    def coverage(self) -> np.ndarray:
        w, h = self.resolution
        mask = np.zeros((h, w), dtype=bool)
        mask[self.texel_j, self.texel_i] = True
        return mask


@numba.njit(cache=True)
def _bary2d(px, py, ax, ay, bx, by, cx, cy):
    det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
    if det == 0.0:
        return -1.0, -1.0, -1.0
    l0 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det
    l1 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det
    return l0, l1, 1.0 - l0 - l1


@numba.njit(cache=True)
def _clip_to_box(poly_x, poly_y, n, x0, y0, x1, y1):
    # Sutherland-Hodgman against an axis-aligned box; returns new polygon.
    for edge in range(4):
        out_x = np.empty(n + 4)
        out_y = np.empty(n + 4)
        m = 0
        for k in range(n):
            ax, ay = poly_x[k], poly_y[k]
            bx, by = poly_x[(k + 1) % n], poly_y[(k + 1) % n]
            if edge == 0:
                ia, ib = ax >= x0, bx >= x0
            elif edge == 1:
                ia, ib = ax <= x1, bx <= x1
            elif edge == 2:
                ia, ib = ay >= y0, by >= y0
            else:
                ia, ib = ay <= y1, by <= y1
            if ia:
                out_x[m] = ax
                out_y[m] = ay
                m += 1
            if ia != ib:
                if edge == 0:
                    s = (x0 - ax) / (bx - ax)
                elif edge == 1:
                    s = (x1 - ax) / (bx - ax)
                elif edge == 2:
                    s = (y0 - ay) / (by - ay)
                else:
                    s = (y1 - ay) / (by - ay)
                out_x[m] = ax + s * (bx - ax)
                out_y[m] = ay + s * (by - ay)
                m += 1
        poly_x, poly_y, n = out_x, out_y, m
        if n == 0:
            break
    return poly_x, poly_y, n


@numba.njit(cache=True)
def _closest_on_polygon(px, py, poly_x, poly_y, n):
    best = np.inf
    bx_, by_ = poly_x[0], poly_y[0]
    for k in range(n):
        ax, ay = poly_x[k], poly_y[k]
        cx, cy = poly_x[(k + 1) % n], poly_y[(k + 1) % n]
        ex, ey = cx - ax, cy - ay
        ll = ex * ex + ey * ey
        s = 0.0
        if ll > 0:
            s = min(1.0, max(0.0, ((px - ax) * ex + (py - ay) * ey) / ll))
        qx, qy = ax + s * ex, ay + s * ey
        d = (qx - px) ** 2 + (qy - py) ** 2
        if d < best:
            best = d
            bx_, by_ = qx, qy
    return bx_, by_


@numba.njit(cache=True)
def _rasterize_uv(uv_tris, width, height, owner, bary, clamped):
    """Two-pass UV rasterization in texel units.

    Pass 1 assigns texels whose center lies inside a triangle; pass 2 adds
    texels merely overlapped (conservative coverage), using the point of
    the clipped triangle nearest the texel center. Lower triangle index
    wins in each pass; a triangle left without any texel claims the texel
    under its centroid if that texel is still free.
    """
    nt = uv_tris.shape[0]
    got = np.zeros(nt, dtype=np.bool_)
    for pass_ in range(2):
        for t in range(nt):
            ax = uv_tris[t, 0, 0] * width
            ay = uv_tris[t, 0, 1] * height
            bx = uv_tris[t, 1, 0] * width
            by = uv_tris[t, 1, 1] * height
            cx = uv_tris[t, 2, 0] * width
            cy = uv_tris[t, 2, 1] * height
            i0 = max(0, int(np.floor(min(ax, bx, cx))) - 1)
            i1 = min(width - 1, int(np.floor(max(ax, bx, cx))) + 1)
            j0 = max(0, int(np.floor(min(ay, by, cy))) - 1)
            j1 = min(height - 1, int(np.floor(max(ay, by, cy))) + 1)
            for j in range(j0, j1 + 1):
                for i in range(i0, i1 + 1):
                    if owner[j, i] >= 0:
                        continue
                    px = i + 0.5
                    py = j + 0.5
                    l0, l1, l2 = _bary2d(px, py, ax, ay, bx, by, cx, cy)
                    inside = l0 >= 0.0 and l1 >= 0.0 and l2 >= 0.0
                    if pass_ == 0:
                        if inside:
                            owner[j, i] = t
                            bary[j, i, 0] = l0
                            bary[j, i, 1] = l1
                            bary[j, i, 2] = l2
                            got[t] = True
                        continue
                    poly_x = np.array([ax, bx, cx])
                    poly_y = np.array([ay, by, cy])
                    qx, qy, m = _clip_to_box(poly_x, poly_y, 3, float(i), float(j), i + 1.0, j + 1.0)
                    if m < 3:
                        continue
                    sx, sy = _closest_on_polygon(px, py, qx, qy, m)
                    l0, l1, l2 = _bary2d(sx, sy, ax, ay, bx, by, cx, cy)
                    if l0 == -1.0 and l1 == -1.0:
                        continue
                    # clamp round-off onto the triangle
                    l0 = max(l0, 0.0)
                    l1 = max(l1, 0.0)
                    l2 = max(l2, 0.0)
                    s = l0 + l1 + l2
                    owner[j, i] = t
                    clamped[j, i] = True
                    bary[j, i, 0] = l0 / s
                    bary[j, i, 1] = l1 / s
                    bary[j, i, 2] = l2 / s
                    got[t] = True
    for t in range(nt):
        if got[t]:
            continue
        gx = (uv_tris[t, 0, 0] + uv_tris[t, 1, 0] + uv_tris[t, 2, 0]) / 3.0
        gy = (uv_tris[t, 0, 1] + uv_tris[t, 1, 1] + uv_tris[t, 2, 1]) / 3.0
        i = min(width - 1, max(0, int(gx * width)))
        j = min(height - 1, max(0, int(gy * height)))
        if owner[j, i] < 0:
            owner[j, i] = t
            clamped[j, i] = True
            bary[j, i, 0] = 1.0 / 3.0
            bary[j, i, 1] = 1.0 / 3.0
            bary[j, i, 2] = 1.0 / 3.0


def texel_surfels(mesh: TriangleMesh, atlas_res) -> Surfels:
    """One surface sample per atlas texel covered by the mesh's UV layout."""
    if not mesh.has_uvs:
        raise InputError("mesh has no texture coordinates")
    width, height = _resolution(atlas_res)
    if width < 1 or height < 1:
        raise InputError("atlas resolution must be >= 1")
    uv_tris = np.ascontiguousarray(mesh.uvs[mesh.triangles])
    owner = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    clamped = np.zeros((height, width), dtype=bool)
    _rasterize_uv(uv_tris, width, height, owner, bary, clamped)
    jj, ii = np.nonzero(owner >= 0)
    tri = owner[jj, ii]
    b = bary[jj, ii]
    pos = mesh.interpolate(tri, b, "positions")
    # Points clamped onto a triangle edge may lie on a neighboring face's
    # plane; nudge them inside so their rays do not start on that face.
    edge = clamped[jj, ii]
    if edge.any():
        centroid = mesh.positions[mesh.triangles[tri[edge]]].mean(axis=1)
        to_c = centroid - pos[edge]
        dist = np.linalg.norm(to_c, axis=1, keepdims=True)
        step = np.minimum(_EDGE_NUDGE * mesh.diagonal(), 0.5 * dist)
        pos[edge] += to_c / np.maximum(dist, 1e-300) * step
    nrm = mesh.interpolate(tri, b, "normals")
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    face_n = mesh.face_normals()[tri]
    flip = np.einsum("ij,ij->i", nrm, face_n) < 0
    nrm[flip] *= -1
    return Surfels(
        resolution=(width, height),
        texel_i=ii.astype(np.int64),
        texel_j=jj.astype(np.int64),
        triangle=tri,
        barycentrics=b,
        position=pos,
        normal=nrm,
    )


def _resolution(res) -> tuple[int, int]:
    if np.isscalar(res):
        return int(res), int(res)
    w, h = res
    return int(w), int(h)


def orthonormal_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tangent frame for unit normals (Duff et al. construction), vectorized."""
    n = np.atleast_2d(n)
    sign = np.where(n[:, 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t = np.stack([1.0 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    s = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t, s
