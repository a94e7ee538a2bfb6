import numpy as np
import pytest

from meshreg.mesh import TriMesh
from meshreg.primitives import cylinder, icosphere


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def bumpy_sphere(rng, subdivisions=1, radius=3.0, noise=0.15):
    """Closed mesh with radially jittered vertices (42 vertices at subdivision 1)."""
    m = icosphere(subdivisions, radius)
    r = 1.0 + noise * rng.uniform(-1, 1, m.n_vertices)
    v = m.vertices * r[:, None] @ random_rotation(rng).T + rng.normal(0, 1, 3)
    return m.with_vertices(v)


def random_test_mesh(rng):
    """Closed or open mesh with 30-100 vertices."""
    if rng.random() < 0.5:
        return bumpy_sphere(rng)
    n_around = int(rng.integers(6, 11))
    n_along = int(rng.integers(5, 10))
    while n_around * n_along > 100:
        n_along -= 1
    m = cylinder(rng.uniform(1.5, 3.0), rng.uniform(2.0, 5.0), n_around, n_along)
    v = m.vertices + rng.normal(0, 0.05, m.vertices.shape)
    return m.with_vertices(v @ random_rotation(rng).T)


def single_triangle():
    return TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
