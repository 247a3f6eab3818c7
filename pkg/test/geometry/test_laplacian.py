import numpy as np
import pytest

from lobe_registration.errors import ArgumentError, ConfigurationError
from lobe_registration.geometry.grid import DeformationGrid
from lobe_registration.geometry.laplacian import (
    build_laplacian,
    cotangent_weights,
    discrete_laplacian,
    laplacian_matrix,
    mixed_voronoi_areas,
    uniform_weights,
    vertex_adjacency,
)


def test_adjacency_is_sorted_one_ring(octahedron):
    adjacency = vertex_adjacency(6, octahedron.surface.edges())
    assert adjacency[0].tolist() == [2, 3, 4, 5]
    assert all(len(ring) == 4 for ring in adjacency)


def test_uniform_umbrella(octahedron):
    surface = octahedron.surface
    adjacency = vertex_adjacency(6, surface.edges())
    lu = discrete_laplacian(surface.vertices, adjacency, uniform_weights(adjacency))
    # every vertex minus the mean of its ring, which is the origin
    assert np.allclose(lu, surface.vertices)


@pytest.mark.parametrize("weighting", ["uniform", "cotangent"])
def test_constant_field_has_zero_laplacian(octahedron, weighting):
    surface = octahedron.surface
    lap = build_laplacian(6, surface.edges(), weighting, surface=surface)
    assert np.allclose(lap @ np.ones((6, 3)), 0.0)


def test_cotangent_weights_on_regular_surface(octahedron):
    surface = octahedron.surface
    weights = cotangent_weights(surface)
    areas = mixed_voronoi_areas(surface)
    assert areas.sum() == pytest.approx(surface.face_areas().sum())
    values = np.array(list(weights.values()))
    assert np.allclose(values, values[0])
    assert values[0] > 0


def test_tet_cotangent_linear_precision():
    grid = DeformationGrid((2, 2, 2), np.zeros(3), np.ones(3))
    lap = build_laplacian(
        grid.n_vertices,
        grid.edges(),
        "cotangent",
        vertices=grid.rest_vertices,
        tetrahedra=grid.tetrahedra,
    )
    centre = grid.vertex_index(1, 1, 1)
    linear = grid.rest_vertices @ np.array([[1.0, 2.0, 0.0], [0.0, 1.0, -1.0], [3.0, 0.0, 1.0]])
    assert np.allclose((lap @ linear)[centre], 0.0)
    assert np.allclose(lap @ np.ones(grid.n_vertices), 0.0)


def test_unknown_weighting_rejected(octahedron):
    with pytest.raises(ConfigurationError, match="unknown Laplacian weighting"):
        build_laplacian(6, octahedron.surface.edges(), "harmonic")
    with pytest.raises(ConfigurationError, match="need a surface"):
        build_laplacian(6, octahedron.surface.edges(), "cotangent")


def test_missing_edge_weight_rejected():
    adjacency = vertex_adjacency(3, [[0, 1], [1, 2]])
    with pytest.raises(ConfigurationError, match="no Laplacian weight"):
        laplacian_matrix(adjacency, {(0, 1): 1.0})


def test_field_shape_checked():
    adjacency = vertex_adjacency(3, [[0, 1], [1, 2]])
    with pytest.raises(ArgumentError, match="one row per vertex"):
        discrete_laplacian(np.zeros((2, 3)), adjacency, uniform_weights(adjacency))
