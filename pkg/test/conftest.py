import sys
from pathlib import Path

import numpy as np
import pytest
from loguru import logger

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from lobe_registration.config import AnalysisConfig, RegistrationConfig  # noqa: E402
from lobe_registration.geometry.centerline import CenterlineTree, NodeKind  # noqa: E402
from lobe_registration.geometry.model import LobeModel  # noqa: E402
from lobe_registration.geometry.surface import TriangleSurface  # noqa: E402
from lobe_registration.geometry.tetmesh import TetrahedralMesh  # noqa: E402
from lobe_registration.phantom.generator import (  # noqa: E402
    PhantomSpec,
    generate_case,
    generate_phantom_lobe,
    phantom_case,
)

# +x, -x, +y, -y, +z, -z
OCTAHEDRON_VERTICES = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)


def _octahedron_triangles() -> np.ndarray:
    triangles = []
    for sx in (0, 1):
        for sy in (2, 3):
            for sz in (4, 5):
                face = [sx, sy, sz]
                # octants with an odd number of negative axes flip orientation
                if (sx + sy + sz) % 2 == 1:
                    face = [sx, sz, sy]
                triangles.append(face)
    return np.array(triangles)


def make_octahedron(scale: float = 1.0) -> LobeModel:
    """Octahedron lobe: one centre vertex, eight tetrahedra and a Y-shaped tree."""
    surface = TriangleSurface(OCTAHEDRON_VERTICES * scale, _octahedron_triangles())
    vertices = np.vstack([surface.vertices, np.zeros(3)])
    tets = np.column_stack([np.full(8, 6), surface.triangles])
    mesh = TetrahedralMesh(vertices, tets, np.arange(6))
    tree = CenterlineTree(
        np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.3, 0.2, 0.0], [0.3, -0.2, 0.0]]) * scale,
        (NodeKind.ROOT, NodeKind.JUNCTION, NodeKind.TERMINAL, NodeKind.TERMINAL),
        [-1, 0, 1, 1],
    )
    return LobeModel(surface, mesh, tree, "upper")


SMALL_PHANTOM = PhantomSpec(
    seed=3,
    half_axes=(20.0, 17.0, 15.0),
    surface_triangles=80,
    target_tetrahedra=120,
    depth=2,
    prune_fraction=0.0,
    noise=0.0,
    surface_landmarks=6,
    junction_landmarks=3,
)


@pytest.fixture(autouse=True)
def quiet_logger():
    """Keep loguru output out of the test report."""
    logger.remove()
    yield
    logger.remove()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def octahedron():
    return make_octahedron()


@pytest.fixture
def registration_config():
    """Short runs for the unit tests."""
    return RegistrationConfig(max_iters=60, patience=8, grid_cells=(2, 2, 2))


@pytest.fixture
def analysis_config():
    return AnalysisConfig()


@pytest.fixture(scope="session")
def small_spec():
    return SMALL_PHANTOM


@pytest.fixture(scope="session")
def small_phantom():
    return generate_phantom_lobe(SMALL_PHANTOM, "upper")


@pytest.fixture(scope="session")
def small_case():
    return phantom_case("phantom-0003", generate_case(SMALL_PHANTOM))
