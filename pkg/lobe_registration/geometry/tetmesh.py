"""Tetrahedral meshes and barycentric embedding of points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np
import scipy.sparse as sp
from loguru import logger
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from lobe_registration.config import EMBED_EPSILON, SNAP_TOLERANCE
from lobe_registration.errors import ArgumentError, BindingError, InvariantError
from lobe_registration.geometry.surface import TriangleSurface, as_cells, as_points

if TYPE_CHECKING:
    from lobe_registration.geometry.grid import DeformationGrid

# Outward faces of a positively oriented tetrahedron, face k opposite vertex k
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
# Candidate elements examined per point before falling back to a full scan
_CANDIDATES = 16


def signed_volumes(vertices: np.ndarray, tetrahedra: np.ndarray) -> np.ndarray:
    """Signed volume of every tetrahedron."""
    p = vertices[tetrahedra]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    e3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", e1, np.cross(e2, e3)) / 6.0


@dataclass(frozen=True, eq=False)
class TetrahedralMesh:
    """Tetrahedral volume mesh.

    Attributes:
        vertices: ``(N, 3)`` vertex positions.
        tetrahedra: ``(T, 4)`` positively oriented vertex indices.
        surface_vertex_map: For a lobe mesh, the tetrahedral vertex index of
            every vertex of the associated :class:`TriangleSurface`.

    """

    vertices: np.ndarray
    tetrahedra: np.ndarray
    surface_vertex_map: np.ndarray | None = None

    def __post_init__(self) -> None:
        vertices = as_points(self.vertices, "vertices")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(
            self, "tetrahedra", as_cells(self.tetrahedra, 4, len(vertices), "tetrahedra")
        )
        if self.surface_vertex_map is not None:
            m = np.array(self.surface_vertex_map, dtype=np.int64).reshape(-1)
            if m.size and (m.min() < 0 or m.max() >= len(vertices)):
                raise InvariantError("valid_indices", "surface map references missing vertices")
            m.setflags(write=False)
            object.__setattr__(self, "surface_vertex_map", m)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tetrahedra(self) -> int:
        return len(self.tetrahedra)

    def signed_volumes(self, vertices: np.ndarray | None = None) -> np.ndarray:
        return signed_volumes(self.vertices if vertices is None else vertices, self.tetrahedra)

    def check_orientation(self) -> None:
        """Raise unless every tetrahedron has positive signed volume."""
        vol = self.signed_volumes()
        bad = np.flatnonzero(vol <= 0)
        if len(bad):
            raise InvariantError(
                "positive_volume",
                f"{len(bad)} tetrahedra are inverted or flat, e.g. {int(bad[0])}",
            )

    def boundary_faces(self) -> np.ndarray:
        """Outward-oriented faces that belong to exactly one tetrahedron."""
        faces = self.tetrahedra[:, TET_FACES].reshape(-1, 3)
        _, inverse, counts = np.unique(
            np.sort(faces, axis=1), axis=0, return_inverse=True, return_counts=True
        )
        return faces[counts[inverse.reshape(-1)] == 1]

    def edges(self) -> np.ndarray:
        t = self.tetrahedra
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        e = np.concatenate([t[:, list(p)] for p in pairs])
        return np.unique(np.sort(e, axis=1), axis=0)

    def check_boundary(self, surface: TriangleSurface) -> None:
        """Raise unless the mesh boundary equals ``surface`` under the surface map."""
        if self.surface_vertex_map is None:
            raise InvariantError("boundary_matches_surface", "mesh has no surface map")
        if len(self.surface_vertex_map) != surface.n_vertices:
            raise InvariantError(
                "boundary_matches_surface",
                f"surface map has {len(self.surface_vertex_map)} entries for "
                f"{surface.n_vertices} surface vertices",
            )
        if not np.allclose(
            self.vertices[self.surface_vertex_map], surface.vertices, rtol=0, atol=1e-9
        ):
            raise InvariantError(
                "boundary_matches_surface", "surface vertices differ from mesh vertices"
            )
        mapped = self.surface_vertex_map[surface.triangles]
        expected = {tuple(_canonical_cycle(f)) for f in mapped}
        actual = {tuple(_canonical_cycle(f)) for f in self.boundary_faces()}
        if expected != actual:
            raise InvariantError(
                "boundary_matches_surface",
                f"{len(expected ^ actual)} boundary faces differ from the surface",
            )

    def with_vertices(self, vertices: ArrayLike) -> "TetrahedralMesh":
        return TetrahedralMesh(vertices, self.tetrahedra, self.surface_vertex_map)


def _canonical_cycle(face: np.ndarray) -> list[int]:
    """Rotate an oriented triangle so its smallest index comes first."""
    k = int(np.argmin(face))
    return [int(face[k]), int(face[(k + 1) % 3]), int(face[(k + 2) % 3])]


def bisect_edge(
    vertices: np.ndarray, tetrahedra: np.ndarray, a: int, b: int
) -> tuple[np.ndarray, np.ndarray]:
    """Split edge ``(a, b)`` at its midpoint in every tetrahedron containing it.

    Each affected tetrahedron is replaced by the two halves obtained by
    substituting the midpoint for ``b`` and for ``a``; orientation is kept and
    neighbouring elements stay conforming.
    """
    mid = 0.5 * (vertices[a] + vertices[b])
    m = len(vertices)
    has_a = np.any(tetrahedra == a, axis=1)
    has_b = np.any(tetrahedra == b, axis=1)
    touched = has_a & has_b
    first = tetrahedra[touched].copy()
    second = tetrahedra[touched].copy()
    first[first == b] = m
    second[second == a] = m
    new_tets = np.concatenate([tetrahedra[~touched], first, second])
    return np.vstack([vertices, mid]), new_tets


def barycentric_coordinates(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Barycentric weights of ``points`` (``(..., 3)``) in tetrahedra ``(..., 4, 3)``."""
    base = corners[..., 0, :]
    m = np.stack(
        [corners[..., 1, :] - base, corners[..., 2, :] - base, corners[..., 3, :] - base],
        axis=-1,
    )
    lam = np.linalg.solve(m, (points - base)[..., None])[..., 0]
    return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)


def closest_points_on_triangles(
    p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Closest point to ``p`` on each triangle ``(a, b, c)`` (arrays of shape ``(F, 3)``)."""
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4
    with np.errstate(divide="ignore", invalid="ignore"):
        on_ab = a + (d1 / (d1 - d3))[:, None] * ab
        on_ac = a + (d2 / (d2 - d6))[:, None] * ac
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = b + t_bc[:, None] * (c - b)
        denom = 1.0 / (va + vb + vc)
        inside = a + (vb * denom)[:, None] * ab + (vc * denom)[:, None] * ac
    conditions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [a, b, on_ab, c, on_ac, on_bc]
    out = inside.copy()
    # np.select picks the first matching region, as the sequential tests do
    selected = np.select([cnd[:, None] for cnd in conditions], choices, default=inside)
    out[:] = selected
    return out


@dataclass(frozen=True, eq=False)
class BarycentricBinding:
    """Barycentric attachment of a batch of points to tetrahedral elements.

    Row ``i`` binds point ``i``: ``elements[i]`` is the containing element and
    ``weights[i]`` its four vertex weights (summing to one).
    """

    elements: np.ndarray
    weights: np.ndarray
    element_vertices: np.ndarray

    def __len__(self) -> int:
        return len(self.elements)

    def matrix(self, n_vertices: int) -> sp.csr_matrix:
        """Sparse ``(P, n_vertices)`` interpolation matrix."""
        rows = np.repeat(np.arange(len(self.elements)), 4)
        cols = self.element_vertices.reshape(-1)
        return sp.csr_matrix(
            (self.weights.reshape(-1), (rows, cols)), shape=(len(self.elements), n_vertices)
        )


MeshLike = Union[TetrahedralMesh, "DeformationGrid"]


def bind_barycentric(
    points: ArrayLike,
    mesh: MeshLike,
    *,
    epsilon: float = EMBED_EPSILON,
    snap_tolerance: float = SNAP_TOLERANCE,
) -> BarycentricBinding:
    """Attach every point to the tetrahedral element containing it.

    Points within ``epsilon`` of an element are accepted as inside. Points
    further out but within ``snap_tolerance`` are snapped to the closest
    point of the nearest element (logged as a warning).

    Args:
        points: ``(P, 3)`` positions.
        mesh: :class:`TetrahedralMesh` or :class:`DeformationGrid`.
        epsilon: Inside-test tolerance in mm.
        snap_tolerance: Maximum snapping distance in mm.

    Returns:
        BarycentricBinding: One row per point.

    Raises:
        BindingError: For the first point further than ``snap_tolerance`` away.

    """
    pts = as_points(points)
    vertices, tetrahedra = _mesh_arrays(mesh)
    if len(tetrahedra) == 0:
        raise ArgumentError("cannot bind to a mesh without tetrahedra")
    if len(pts) == 0:
        empty = np.zeros((0, 4))
        return BarycentricBinding(
            np.zeros(0, dtype=np.int64), empty, np.zeros((0, 4), dtype=np.int64)
        )

    candidates = _candidate_elements(pts, mesh, vertices, tetrahedra)
    weights_all = barycentric_coordinates(
        pts[:, None, :], vertices[tetrahedra[candidates]]
    )
    score = weights_all.min(axis=-1)
    pick = np.argmax(score, axis=1)
    rows = np.arange(len(pts))
    elements = candidates[rows, pick]
    weights = weights_all[rows, pick]
    best_score = score[rows, pick]

    for i in np.flatnonzero(best_score < -epsilon):
        elem, w, inside = _scan_all(pts[i], vertices, tetrahedra, epsilon)
        if not inside:
            elem, w, dist = _snap(pts[i], vertices, tetrahedra)
            if dist > snap_tolerance:
                raise BindingError(int(i), dist)
            logger.warning(f"Snapped point {int(i)} onto element {elem} ({dist:.3g} mm away)")
        elements[i] = elem
        weights[i] = w

    return BarycentricBinding(elements, weights, tetrahedra[elements])


def apply_deformation(binding: BarycentricBinding, control_vertices: ArrayLike) -> np.ndarray:
    """Interpolate bound points from deformed control vertices.

    Args:
        binding: Binding computed against the undeformed control mesh.
        control_vertices: ``(N, 3)`` deformed positions of the control mesh.

    Returns:
        ``(P, 3)`` displaced points, ``sum_k w_k * x_k`` per point.

    """
    x = np.asarray(control_vertices, dtype=np.float64)
    return np.einsum("pk,pkd->pd", binding.weights, x[binding.element_vertices])


def _mesh_arrays(mesh: MeshLike) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(mesh, TetrahedralMesh):
        return mesh.vertices, mesh.tetrahedra
    return mesh.rest_vertices, mesh.tetrahedra


def _candidate_elements(
    pts: np.ndarray, mesh: MeshLike, vertices: np.ndarray, tetrahedra: np.ndarray
) -> np.ndarray:
    """Return ``(P, K)`` element indices likely to contain each point."""
    if not isinstance(mesh, TetrahedralMesh):
        return mesh.cell_tetrahedra(pts)
    centroids = vertices[tetrahedra].mean(axis=1)
    k = min(_CANDIDATES, len(tetrahedra))
    _, idx = cKDTree(centroids).query(pts, k=k)
    return np.asarray(idx, dtype=np.int64).reshape(len(pts), k)


def _scan_all(
    p: np.ndarray, vertices: np.ndarray, tetrahedra: np.ndarray, epsilon: float
) -> tuple[int, np.ndarray, bool]:
    weights = barycentric_coordinates(
        np.broadcast_to(p, (len(tetrahedra), 3)), vertices[tetrahedra]
    )
    score = weights.min(axis=1)
    best = int(np.argmax(score))
    return best, weights[best], bool(score[best] >= -epsilon)


def _snap(
    p: np.ndarray, vertices: np.ndarray, tetrahedra: np.ndarray
) -> tuple[int, np.ndarray, float]:
    """Nearest element, weights of the closest point in it, and the distance."""
    faces = tetrahedra[:, TET_FACES].reshape(-1, 3)
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    closest = closest_points_on_triangles(p, a, b, c)
    dist = np.linalg.norm(closest - p, axis=1)
    f = int(np.argmin(dist))
    elem = f // 4
    w = barycentric_coordinates(closest[f], vertices[tetrahedra[elem]])
    w = np.clip(w, 0.0, None)
    w /= w.sum()
    return elem, w, float(dist[f])
