import numpy as np
import pytest

from meshevolve.mesh import IndexedMesh
from meshevolve.shapes import icosphere, box, torus, plane_grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere2():
    return icosphere(2)


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(3)


def two_tets_glued_at_vertex():
    """Two tetrahedra sharing exactly one vertex (index 0)."""
    p1 = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    p2 = np.array([[-1, 0, 0], [0, -1, 0], [0, 0, -1]], float)
    pos = np.concatenate([p1, p2])
    f1 = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    f2 = [[0, 4, 5], [0, 5, 6], [0, 6, 4], [4, 6, 5]]
    return IndexedMesh(pos, np.asarray(f1 + f2, np.int32))


def bowtie():
    """Two triangles sharing exactly one vertex."""
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]], float)
    faces = np.array([[0, 1, 2], [0, 3, 4]], np.int32)
    return IndexedMesh(pos, faces)


def random_soup(rng, n_faces=30, scale=1.0):
    """Independent random triangles (shared nothing)."""
    tri = rng.normal(size=(n_faces, 3, 3)) * scale
    pos = tri.reshape(-1, 3)
    faces = np.arange(n_faces * 3, dtype=np.int32).reshape(-1, 3)
    return IndexedMesh(pos, faces)
