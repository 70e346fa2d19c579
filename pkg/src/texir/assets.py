"""File I/O: PFM textures, PGM masks, PPM previews, OBJ meshes and scene files.

Conventions
-----------
Image and texture arrays are stored ``(height, width, channels)`` with row 0
at the *bottom*, exactly as PFM lays them out on disk. Texture coordinate
``v`` grows upward, so texel ``(i, j)`` has its center at
``((i + 0.5) / W, (j + 0.5) / H)``. Lookups clamp at the border.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, InvariantError, NonFiniteError, TruncatedFileError
from .geometry import BVH, TriangleMesh, compute_vertex_normals


class TextureImage:
    """A float image / texture atlas with bilinear lookup and gradient scatter."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise InputError("texture data must have shape (H, W, 1) or (H, W, 3)")
        self.data = np.ascontiguousarray(data)

    @classmethod
    def full(cls, width, height, value) -> "TextureImage":
        value = np.atleast_1d(np.asarray(value, dtype=np.float32))
        return cls(np.broadcast_to(value, (height, width, len(value))).copy())

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, TextureImage) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"TextureImage({self.width}x{self.height}x{self.channels})"

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def taps(self, uv):
        """Bilinear footprint: flat texel indices ``(n, 4)`` and weights ``(n, 4)``."""
        return bilinear_taps(uv, self.width, self.height)

    def sample(self, uv) -> np.ndarray:
        """Bilinear lookup at ``uv`` (n, 2); returns (n, channels) float64."""
        idx, w = self.taps(uv)
        flat = self.data.reshape(-1, self.channels).astype(np.float64)
        return np.einsum("nk,nkc->nc", w, flat[idx])

    def scatter(self, uv, values) -> np.ndarray:
        """Adjoint of :meth:`sample`: accumulate per-sample values into texels."""
        idx, w = self.taps(uv)
        return scatter_taps(idx, w, values, self.width, self.height)


def bilinear_taps(uv, width, height):
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    x = uv[:, 0] * width - 0.5
    y = uv[:, 1] * height - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xs = np.clip(np.stack([x0, x0 + 1, x0, x0 + 1], axis=1), 0, width - 1)
    ys = np.clip(np.stack([y0, y0, y0 + 1, y0 + 1], axis=1), 0, height - 1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return ys * width + xs, w


def scatter_taps(idx, w, values, width, height) -> np.ndarray:
    """Sum ``w * values`` into a ``(height, width, c)`` grid.

    ``np.bincount`` accumulates in input order, so the result is
    deterministic for a fixed pixel ordering.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    c = values.shape[1]
    out = np.empty((height * width, c))
    flat_idx = idx.ravel()
    for ch in range(c):
        contrib = (w * values[:, ch:ch + 1]).ravel()
        out[:, ch] = np.bincount(flat_idx, weights=contrib, minlength=height * width)
    return out.reshape(height, width, c)


def nearest_texel(uv, width, height) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    i = np.clip(np.floor(uv[:, 0] * width).astype(np.int64), 0, width - 1)
    j = np.clip(np.floor(uv[:, 1] * height).astype(np.int64), 0, height - 1)
    return j * width + i


@dataclass
class MaskImage:
    """Integer id image (class or room per pixel/texel); 0 means unlabeled."""

    ids: np.ndarray  # (H, W), row 0 = bottom

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2:
            raise InputError("mask must be 2-D")
        if ids.size and ids.min() < 0:
            raise InputError("mask ids must be >= 0")
        self.ids = ids.astype(np.int64)

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def __eq__(self, other):
        return isinstance(other, MaskImage) and np.array_equal(self.ids, other.ids)

    def lookup(self, uv) -> np.ndarray:
        return self.ids.ravel()[nearest_texel(uv, self.width, self.height)]

    def labels(self) -> np.ndarray:
        u = np.unique(self.ids)
        return u[u > 0]


# ---------------------------------------------------------------------------
# PFM


def _read_line(f) -> bytes:
    line = f.readline()
    if not line:
        raise TruncatedFileError("unexpected end of PFM header")
    return line


def read_pfm(path) -> TextureImage:
    with open(path, "rb") as f:
        magic = f.readline().rstrip(b"\r\n").strip()
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise FormatError(f"{path}: not a PFM file")
        dims = _read_line(f).decode("ascii", "replace").split()
        if len(dims) != 2 or not all(d.isdigit() for d in dims):
            raise FormatError(f"{path}: malformed PFM dimensions line")
        width, height = int(dims[0]), int(dims[1])
        try:
            scale = float(_read_line(f).decode("ascii", "replace").strip())
        except ValueError:
            raise FormatError(f"{path}: malformed PFM scale line") from None
        if scale == 0 or not np.isfinite(scale):
            raise FormatError(f"{path}: PFM scale must be finite and nonzero")
        dtype = "<f4" if scale < 0 else ">f4"
        n = width * height * channels
        payload = f.read(4 * n)
    if len(payload) < 4 * n:
        raise TruncatedFileError(f"{path}: PFM payload truncated ({len(payload)} of {4 * n} bytes)")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{path}: PFM contains non-finite values")
    return TextureImage(data.reshape(height, width, channels))


def write_pfm(image, path) -> None:
    if not isinstance(image, TextureImage):
        image = TextureImage(image)
    if not image.is_finite():
        raise NonFiniteError("refusing to write non-finite pixels to PFM")
    magic = b"PF" if image.channels == 3 else b"Pf"
    header = magic + b"\n%d %d\n-1.0\n" % (image.width, image.height)
    with open(path, "wb") as f:
        f.write(header)
        f.write(image.data.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# PGM / PPM

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pnm_header(buf: bytes, n_fields: int, path) -> tuple[list[bytes], int]:
    pos = 0
    tokens = []
    for _ in range(n_fields):
        m = _PNM_TOKEN.match(buf, pos)
        if m is None:
            raise FormatError(f"{path}: malformed header")
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"{path}: malformed header")
    return tokens, pos + 1


def read_mask_pgm(path) -> MaskImage:
    buf = Path(path).read_bytes()
    if buf[:2] == b"P2":
        raise FormatError(f"{path}: ASCII PGM (P2) is not supported, use binary P5")
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM file")
    tokens, offset = _pnm_header(buf, 4, path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval < 1 or maxval > 65535:
        raise FormatError(f"{path}: PGM maxval {maxval} outside 1..65535")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = width * height
    nbytes = n * np.dtype(dtype).itemsize
    payload = buf[offset:offset + nbytes]
    if len(payload) < nbytes:
        raise TruncatedFileError(f"{path}: PGM payload truncated")
    ids = np.frombuffer(payload, dtype=dtype).astype(np.int64).reshape(height, width)
    return MaskImage(ids)


def write_mask_pgm(mask, path) -> None:
    ids = mask.ids if isinstance(mask, MaskImage) else np.asarray(mask)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() > 65535):
        raise InputError("PGM ids must lie in 0..65535")
    maxval = 255 if ids.size == 0 or ids.max() < 256 else 65535
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (ids.shape[1], ids.shape[0], maxval))
        f.write(ids.astype(dtype).tobytes())


def tonemap(data, gamma: float = 2.2) -> np.ndarray:
    """Gamma-encode and clamp to [0, 1]."""
    return np.clip(np.clip(np.asarray(data, dtype=np.float64), 0.0, None) ** (1.0 / gamma), 0.0, 1.0)


def write_ppm_preview(image, path, gamma: float = 2.2) -> None:
    data = image.data if isinstance(image, TextureImage) else np.asarray(image)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    ldr = np.round(tonemap(data, gamma) * 255).astype(np.uint8)
    # PPM rows run top to bottom
    ldr = ldr[::-1]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (ldr.shape[1], ldr.shape[0]))
        f.write(ldr.tobytes())


# ---------------------------------------------------------------------------
# OBJ


def _obj_index(token: str, count: int, lineno: int, path) -> int:
    k = int(token)
    idx = k - 1 if k > 0 else count + k
    if k == 0 or not 0 <= idx < count:
        raise FormatError(f"{path}:{lineno}: index {k} out of range (have {count})")
    return idx


def load_obj(path, require_uvs: bool = True) -> TriangleMesh:
    """Load a Wavefront OBJ mesh, fan-triangulating polygons.

    Vertices are unified per distinct ``(v, vt, vn)`` triple. Missing normals
    are rebuilt as area-weighted face normals; zero-area triangles are
    dropped.
    """
    if not os.path.exists(path):
        raise InputError(f"mesh file not found: {path}")
    pos, tex, nrm = [], [], []
    corners = []  # per triangle: 3 (vi, ti, ni)
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    pos.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    tex.append([float(x) for x in parts[1:3]])
                elif tag == "vn":
                    nrm.append([float(x) for x in parts[1:4]])
                elif tag == "f":
                    face = []
                    for tok in parts[1:]:
                        fields = tok.split("/")
                        vi = _obj_index(fields[0], len(pos), lineno, path)
                        ti = _obj_index(fields[1], len(tex), lineno, path) if len(fields) > 1 and fields[1] else -1
                        ni = _obj_index(fields[2], len(nrm), lineno, path) if len(fields) > 2 and fields[2] else -1
                        face.append((vi, ti, ni))
                    if len(face) < 3:
                        raise FormatError(f"{path}:{lineno}: face with fewer than 3 vertices")
                    for k in range(1, len(face) - 1):
                        corners.append((face[0], face[k], face[k + 1]))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed '{tag}' record") from None
    if not corners:
        raise FormatError(f"{path}: no faces")
    has_uvs = all(c[1] >= 0 for tri in corners for c in tri)
    if require_uvs and not has_uvs:
        raise FormatError(f"{path}: face without texture coordinates")

    positions = np.asarray(pos, dtype=np.float64)
    if not np.isfinite(positions).all():
        raise FormatError(f"{path}: non-finite vertex position")
    key_to_vertex: dict[tuple[int, int, int], int] = {}
    tris = np.empty((len(corners), 3), dtype=np.int64)
    for t, tri in enumerate(corners):
        for k, key in enumerate(tri):
            if key not in key_to_vertex:
                key_to_vertex[key] = len(key_to_vertex)
            tris[t, k] = key_to_vertex[key]
    keys = np.array(list(key_to_vertex), dtype=np.int64)

    # drop degenerate triangles before deriving normals
    p = positions[keys[:, 0]][tris]
    area2 = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    distinct = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris = tris[(area2 > 1e-12) & distinct]
    if len(tris) == 0:
        raise FormatError(f"{path}: all faces are degenerate")

    vpos = positions[keys[:, 0]]
    if has_uvs:
        uvs = np.clip(np.asarray(tex, dtype=np.float64)[keys[:, 1]], 0.0, 1.0)
    else:
        uvs = np.zeros((len(keys), 2))
    if len(nrm) and (keys[:, 2] >= 0).all():
        normals = np.asarray(nrm, dtype=np.float64)[keys[:, 2]]
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    else:
        # smooth per position index so shared corners agree
        pn = compute_vertex_normals(positions, keys[:, 0][tris])
        normals = pn[keys[:, 0]]
    return TriangleMesh(vpos, normals, uvs, tris, has_uvs=has_uvs)


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as f:
        for p in mesh.positions:
            f.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for t in mesh.uvs:
            f.write(f"vt {t[0]:.9g} {t[1]:.9g}\n")
        for n in mesh.normals:
            f.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for a, b, c in mesh.triangles + 1:
            f.write(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}\n")


# ---------------------------------------------------------------------------
# scene


@dataclass(frozen=True)
class Camera:
    model: str  # "pinhole" | "equirect"
    width: int
    height: int
    rotation: np.ndarray  # camera-to-world, 3x3
    translation: np.ndarray  # camera center in world coordinates
    fov_deg: float | None = None  # horizontal field of view (pinhole)

    def __post_init__(self):
        if self.model not in ("pinhole", "equirect"):
            raise InputError(f"unknown camera model {self.model!r}")
        if self.width < 1 or self.height < 1:
            raise InputError("camera resolution must be positive")
        if self.model == "pinhole" and not (self.fov_deg and 0 < self.fov_deg < 180):
            raise InputError("pinhole camera needs 0 < fov_deg < 180")
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise InvariantError("camera rotation is not orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def to_json(self) -> dict:
        d = {
            "model": self.model,
            "width": self.width,
            "height": self.height,
            "rotation": self.rotation.ravel().tolist(),
            "translation": self.translation.tolist(),
        }
        if self.fov_deg is not None:
            d["fov_deg"] = self.fov_deg
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        try:
            rot = d["rotation"]
            if len(rot) != 9 or len(d["translation"]) != 3:
                raise InputError("camera rotation needs 9 floats and translation 3")
            return cls(
                model=d["model"],
                width=int(d["width"]),
                height=int(d["height"]),
                rotation=np.asarray(rot, dtype=np.float64).reshape(3, 3),
                translation=np.asarray(d["translation"], dtype=np.float64),
                fov_deg=d.get("fov_deg"),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed camera entry: {exc}") from None


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``eye`` looking at ``target`` (-z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    return np.stack([right, true_up, -fwd], axis=1)


@dataclass(frozen=True)
class AtlasSettings:
    albedo_res: int = 512
    roughness_res: int = 512
    irt_res: int = 256


@dataclass(frozen=True, eq=False)
class Scene:
    mesh: TriangleMesh
    emissive: TextureImage
    cameras: tuple
    images: tuple
    semantic: MaskImage | None = None
    albedo: TextureImage | None = None
    roughness: TextureImage | None = None
    irradiance: TextureImage | None = None
    atlas: AtlasSettings = field(default_factory=AtlasSettings)
    path: Path | None = None
    bvh: BVH | None = None

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise InvariantError(
                f"scene has {len(self.cameras)} cameras but {len(self.images)} images"
            )
        for k, (cam, img) in enumerate(zip(self.cameras, self.images)):
            if (img.width, img.height) != (cam.width, cam.height):
                raise InvariantError(f"image {k} resolution does not match its camera")
        if self.bvh is None:
            object.__setattr__(self, "bvh", BVH(self.mesh))

    def replace(self, **changes) -> "Scene":
        if "mesh" not in changes:
            changes.setdefault("bvh", self.bvh)
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        m1, m2 = self.mesh, other.mesh
        same_mesh = all(
            np.array_equal(getattr(m1, a), getattr(m2, a))
            for a in ("positions", "normals", "uvs", "triangles")
        )
        cams = all(
            c1.to_json() == c2.to_json() for c1, c2 in zip(self.cameras, other.cameras)
        ) and len(self.cameras) == len(other.cameras)
        return (
            same_mesh and cams
            and self.emissive == other.emissive
            and tuple(self.images) == tuple(other.images)
            and self.semantic == other.semantic
            and self.albedo == other.albedo
            and self.roughness == other.roughness
            and self.irradiance == other.irradiance
            and self.atlas == other.atlas
        )


_REQUIRED = ("mesh", "emissive_texture", "cameras", "images")
_OPTIONAL_TEX = {
    "albedo_texture": "albedo",
    "roughness_texture": "roughness",
    "irradiance_texture": "irradiance",
}


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    full = q if q.is_absolute() else base / q
    if not full.exists():
        raise InputError(f"referenced file not found: {full}")
    return full


def load_scene(path) -> Scene:
    """Load and validate a scene description (JSON) with all its assets."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"scene file not found: {path}")
    try:
        desc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(desc, dict):
        raise InputError(f"{path}: scene must be a JSON object")
    for key in _REQUIRED:
        if key not in desc:
            raise InputError(f"{path}: missing required key '{key}'")
    if not isinstance(desc["cameras"], list) or not isinstance(desc["images"], list):
        raise InputError(f"{path}: 'cameras' and 'images' must be lists")
    if len(desc["cameras"]) != len(desc["images"]):
        raise InvariantError(
            f"{path}: {len(desc['cameras'])} cameras but {len(desc['images'])} images"
        )
    base = path.parent
    mesh = load_obj(_resolve(base, desc["mesh"]))
    emissive = read_pfm(_resolve(base, desc["emissive_texture"]))
    if (emissive.data < 0).any():
        raise InvariantError("emissive texture has negative radiance")
    cameras = tuple(Camera.from_json(c) for c in desc["cameras"])
    images = tuple(read_pfm(_resolve(base, p)) for p in desc["images"])
    semantic = None
    if desc.get("semantic_mask"):
        semantic = read_mask_pgm(_resolve(base, desc["semantic_mask"]))
    extra = {}
    for key, attr in _OPTIONAL_TEX.items():
        if desc.get(key):
            extra[attr] = read_pfm(_resolve(base, desc[key]))
    atlas_desc = desc.get("atlas", {}) or {}
    unknown = set(atlas_desc) - {"albedo_res", "roughness_res", "irt_res"}
    if unknown:
        raise InputError(f"{path}: unknown atlas keys {sorted(unknown)}")
    atlas = AtlasSettings(**{k: int(v) for k, v in atlas_desc.items()})
    return Scene(
        mesh=mesh,
        emissive=emissive,
        cameras=cameras,
        images=images,
        semantic=semantic,
        atlas=atlas,
        path=path,
        **extra,
    )


def save_scene(scene: Scene, directory, name: str = "scene.json", mesh_path=None) -> Path:
    """Write a scene and all its textures into ``directory``.

    ``mesh_path`` reuses an existing OBJ instead of writing a new one.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    desc: dict = {}
    if mesh_path is None:
        write_obj(scene.mesh, d / "mesh.obj")
        desc["mesh"] = "mesh.obj"
    else:
        desc["mesh"] = str(Path(mesh_path).resolve())
    write_pfm(scene.emissive, d / "emissive.pfm")
    desc["emissive_texture"] = "emissive.pfm"
    if scene.semantic is not None:
        write_mask_pgm(scene.semantic, d / "semantic.pgm")
        desc["semantic_mask"] = "semantic.pgm"
    desc["cameras"] = [c.to_json() for c in scene.cameras]
    desc["images"] = []
    for k, img in enumerate(scene.images):
        write_pfm(img, d / f"view_{k:03d}.pfm")
        desc["images"].append(f"view_{k:03d}.pfm")
    for key, attr in _OPTIONAL_TEX.items():
        tex = getattr(scene, attr)
        if tex is not None:
            write_pfm(tex, d / f"{attr}.pfm")
            desc[key] = f"{attr}.pfm"
    desc["atlas"] = {
        "albedo_res": scene.atlas.albedo_res,
        "roughness_res": scene.atlas.roughness_res,
        "irt_res": scene.atlas.irt_res,
    }
    out = d / name
    write_json_atomic(out, desc)
    return out


def write_json_atomic(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    os.replace(tmp, path)
