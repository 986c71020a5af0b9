import numpy as np
import pytest

from surfot.mesh import TriangleMesh, build_operators
from surfot.oracle import sphere_mesh, strip_mesh, unit_square_mesh


@pytest.fixture(scope="session")
def two_triangles():
    """Unit square split along one diagonal; the smallest useful mesh."""
    vertices = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]
    )
    faces = np.array([[0, 1, 2], [1, 3, 2]])
    return TriangleMesh(vertices, faces)


@pytest.fixture(scope="session")
def square5():
    return unit_square_mesh(5)


@pytest.fixture(scope="session")
def square5_ops(square5):
    return build_operators(square5)


@pytest.fixture(scope="session")
def test_meshes():
    """Flat closed-boundary, curved closed, and strip-with-boundary meshes."""
    return {
        "flat_square": unit_square_mesh(4),
        "sphere": sphere_mesh(1),
        "strip": strip_mesh(5, 3, 0.5),
    }
