import numpy as np
import pytest

from texir.assets import TextureImage
from texir.geometry import TriangleMesh


def quad_mesh(z=0.0, size=1.0, uv_lo=(0.0, 0.0), uv_hi=(1.0, 1.0), facing=1.0):
    """Square in the plane z = ``z`` spanning [0, size]^2, normal along +z * facing."""
    p = np.array([[0, 0, z], [size, 0, z], [size, size, z], [0, size, z]], dtype=float)
    (u0, v0), (u1, v1) = uv_lo, uv_hi
    uv = np.array([[u0, v0], [u1, v0], [u1, v1], [u0, v1]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 2, 3]]) if facing > 0 else np.array([[0, 2, 1], [0, 3, 2]])
    n = np.tile([0.0, 0.0, facing], (4, 1))
    return TriangleMesh(p, n, uv, tris)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def furnace():
    from texir.synthetic import furnace_box

    return furnace_box(radiance=2.0, res=16)


@pytest.fixture(scope="session")
def bright_wall():
    from texir.synthetic import bright_wall_box

    return bright_wall_box(value=5.0, res=16)


@pytest.fixture(scope="session")
def small_rooms():
    """A low-resolution three-room scene with ground truth, shared across tests."""
    from texir.synthetic import three_room_scene

    return three_room_scene(albedo_res=32, roughness_res=32, irt_res=32, tbl_res=32, image_size=(32, 24),
                            bounces=2, bounce_samples=16, bake_samples=64, image_samples=32)


def gray(width, height, value):
    return TextureImage.full(width, height, (value,) * 3)
