import numpy as np
import pytest

from lobe_registration.errors import BindingError, InvariantError
from lobe_registration.geometry.tetmesh import (
    TetrahedralMesh,
    apply_deformation,
    barycentric_coordinates,
    bind_barycentric,
    bisect_edge,
)


def test_octahedron_mesh_matches_surface(octahedron):
    mesh = octahedron.tet_mesh
    mesh.check_orientation()
    mesh.check_boundary(octahedron.surface)
    assert mesh.signed_volumes().sum() == pytest.approx(octahedron.surface.signed_volume())


def test_inverted_tetrahedron_detected(octahedron):
    tets = octahedron.tet_mesh.tetrahedra.copy()
    tets[0] = tets[0][[0, 2, 1, 3]]
    mesh = TetrahedralMesh(octahedron.tet_mesh.vertices, tets, np.arange(6))
    with pytest.raises(InvariantError, match="positive_volume"):
        mesh.check_orientation()


def test_boundary_mismatch_detected(octahedron):
    mesh = TetrahedralMesh(
        octahedron.tet_mesh.vertices, octahedron.tet_mesh.tetrahedra[1:], np.arange(6)
    )
    with pytest.raises(InvariantError, match="boundary_matches_surface"):
        mesh.check_boundary(octahedron.surface)


def test_bisect_edge_keeps_volume_and_boundary(octahedron):
    mesh = octahedron.tet_mesh
    vertices, tets = bisect_edge(mesh.vertices, mesh.tetrahedra, 6, 0)
    refined = TetrahedralMesh(vertices, tets, np.arange(6))
    # four tetrahedra share the spoke to +x
    assert refined.n_tetrahedra == mesh.n_tetrahedra + 4
    refined.check_orientation()
    refined.check_boundary(octahedron.surface)
    assert refined.signed_volumes().sum() == pytest.approx(mesh.signed_volumes().sum())


def test_barycentric_weights_reproduce_point(rng):
    corners = np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0], [0, 0, 2]], dtype=float)
    p = np.array([0.3, 0.4, 0.5])
    w = barycentric_coordinates(p, corners)
    assert w.sum() == pytest.approx(1.0)
    assert w @ corners == pytest.approx(p)


def test_binding_follows_affine_deformation(octahedron, rng):
    points = rng.uniform(-0.2, 0.2, size=(30, 3))
    binding = bind_barycentric(points, octahedron.tet_mesh)
    assert np.allclose(binding.weights.sum(axis=1), 1.0)
    assert np.all(binding.weights >= -1e-9)

    a = np.array([[1.1, 0.1, 0.0], [0.0, 0.9, 0.2], [0.05, 0.0, 1.2]])
    t = np.array([1.0, -2.0, 0.5])
    moved = octahedron.tet_mesh.vertices @ a.T + t
    assert np.allclose(apply_deformation(binding, moved), points @ a.T + t)
    matrix = binding.matrix(octahedron.tet_mesh.n_vertices)
    assert np.allclose(matrix @ moved, points @ a.T + t)


def test_point_slightly_outside_is_snapped(octahedron):
    binding = bind_barycentric([[1.02, 0.0, 0.0]], octahedron.tet_mesh)
    assert apply_deformation(binding, octahedron.tet_mesh.vertices) == pytest.approx(
        [[1.0, 0.0, 0.0]]
    )


def test_point_far_outside_raises(octahedron):
    with pytest.raises(BindingError) as exc:
        bind_barycentric([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]], octahedron.tet_mesh)
    assert exc.value.point_index == 1
    assert exc.value.distance == pytest.approx(2.0)
