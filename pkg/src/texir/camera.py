"""Primary-ray generation and point projection for pinhole and equirect cameras.

Camera frame is y-up; pinhole cameras look down -z with a horizontal
field of view. Equirect pixel ``(u, v)`` (v counted from the top row)
maps to ``phi = 2 pi (u + 0.5) / W``, ``theta = pi (v + 0.5) / H`` and the
direction ``(sin theta cos phi, cos theta, sin theta sin phi)``. Arrays are
returned in storage order (row 0 = bottom), matching PFM.
"""
from __future__ import annotations

import numpy as np

from .assets import Camera


def local_directions(cam: Camera) -> np.ndarray:
    """Unit ray directions in the camera frame, shape (H, W, 3)."""
    w, h = cam.width, cam.height
    i = np.arange(w) + 0.5
    j = np.arange(h) + 0.5
    if cam.model == "pinhole":
        f = (w / 2.0) / np.tan(np.radians(cam.fov_deg) / 2.0)
        x = (i - w / 2.0) / f
        y = (j - h / 2.0) / f
        xx, yy = np.meshgrid(x, y)
        d = np.stack([xx, yy, -np.ones_like(xx)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)
    phi = 2.0 * np.pi * i / w
    # storage row j sits at display row (h - 1 - j)
    theta = np.pi * (h - j) / h
    pp, tt = np.meshgrid(phi, theta)
    st = np.sin(tt)
    return np.stack([st * np.cos(pp), np.cos(tt), st * np.sin(pp)], axis=-1)


def primary_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """World-space origins and directions, each (H*W, 3), storage order."""
    d = local_directions(cam).reshape(-1, 3) @ cam.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(cam.translation, d.shape).copy()
    return o, d


def project(cam: Camera, points) -> tuple[np.ndarray, np.ndarray]:
    """Continuous storage-order pixel coordinates (x, y) of world points.

    Returns ``(xy, ok)`` where ``ok`` marks points in front of the camera and
    inside the image. Pixel centers sit at half-integers.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    local = (points - cam.translation) @ cam.rotation
    w, h = cam.width, cam.height
    if cam.model == "pinhole":
        f = (w / 2.0) / np.tan(np.radians(cam.fov_deg) / 2.0)
        z = -local[:, 2]
        front = z > 1e-9
        zs = np.where(front, z, 1.0)
        x = w / 2.0 + f * local[:, 0] / zs
        y = h / 2.0 + f * local[:, 1] / zs
        ok = front & (x >= 0) & (x <= w) & (y >= 0) & (y <= h)
        return np.stack([x, y], axis=1), ok
    r = np.linalg.norm(local, axis=1)
    ok = r > 1e-12
    d = local / np.where(ok, r, 1.0)[:, None]
    theta = np.arccos(np.clip(d[:, 1], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[:, 2], d[:, 0]), 2.0 * np.pi)
    x = phi * w / (2.0 * np.pi)
    y = h - theta * h / np.pi
    return np.stack([x, y], axis=1), ok
