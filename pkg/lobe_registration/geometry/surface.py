"""Closed triangle surfaces, vertex normals and ray casting."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike

from lobe_registration.errors import (
    ArgumentError,
    DegenerateGeometryError,
    InvariantError,
)

# Triangles below this area (mm^2) are treated as degenerate
MIN_TRIANGLE_AREA = 1e-12


def as_points(values: ArrayLike, name: str = "points") -> np.ndarray:
    """Return ``values`` as a read-only finite ``(N, 3)`` float array."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ArgumentError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvariantError("finite_coordinates", f"{name} contain NaN or inf")
    arr.setflags(write=False)
    return arr


def as_cells(values: ArrayLike, width: int, n_vertices: int, name: str) -> np.ndarray:
    """Return ``values`` as a read-only ``(M, width)`` index array into ``n_vertices``."""
    arr = np.array(values, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, width)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ArgumentError(f"{name} must have shape (M, {width}), got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= n_vertices):
        raise InvariantError("valid_indices", f"{name} reference missing vertices")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TriangleSurface:
    """Indexed triangle surface with outward (counter-clockwise) orientation.

    Attributes:
        vertices: ``(N, 3)`` vertex positions in millimetres.
        triangles: ``(M, 3)`` vertex indices per triangle.

    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        vertices = as_points(self.vertices, "vertices")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(
            self,
            "triangles",
            as_cells(self.triangles, 3, len(vertices), "triangles"),
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals."""
        return compute_vertex_normals(self)

    def face_cross(self, vertices: np.ndarray | None = None) -> np.ndarray:
        """Return un-normalised face normals (twice the area times the unit normal)."""
        v = self.vertices if vertices is None else vertices
        a, b, c = (v[self.triangles[:, k]] for k in range(3))
        return np.cross(b - a, c - a)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted ``(E, 2)`` pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def signed_volume(self) -> float:
        """Enclosed volume; positive for outward-oriented closed surfaces."""
        v = self.vertices
        a, b, c = (v[self.triangles[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounding_box_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def with_vertices(self, vertices: ArrayLike) -> "TriangleSurface":
        """Return a surface with the same connectivity at new positions."""
        return TriangleSurface(vertices, self.triangles)


def ensure_closed_manifold(surface: TriangleSurface) -> None:
    """Check that every edge is shared by exactly two consistently oriented triangles.

    Raises:
        InvariantError: ``closed_manifold`` or ``consistent_orientation``.

    """
    t = surface.triangles
    if len(t) == 0:
        raise InvariantError("closed_manifold", "surface has no triangles")
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    undirected, counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
    bad = undirected[counts != 2]
    if len(bad):
        i, j = bad[0]
        raise InvariantError(
            "closed_manifold",
            f"{len(bad)} edges not shared by exactly two triangles, e.g. ({i}, {j})",
        )
    _, directed_counts = np.unique(directed, axis=0, return_counts=True)
    if np.any(directed_counts != 1):
        raise InvariantError(
            "consistent_orientation", "adjacent triangles have opposite orientation"
        )


def compute_vertex_normals(surface: TriangleSurface) -> np.ndarray:
    """Compute area-weighted unit vertex normals.

    Each vertex normal is the sum of the incident face cross products (which
    are proportional to face area), normalised to unit length.

    Args:
        surface: Oriented triangle surface.

    Returns:
        ``(N, 3)`` unit normals.

    Raises:
        DegenerateGeometryError: If all triangles around a vertex are degenerate.

    """
    cross = surface.face_cross()
    accum = np.zeros((surface.n_vertices, 3))
    for k in range(3):
        np.add.at(accum, surface.triangles[:, k], cross)
    norms = np.linalg.norm(accum, axis=1)
    degenerate = np.flatnonzero(norms < 2.0 * MIN_TRIANGLE_AREA)
    if len(degenerate):
        raise DegenerateGeometryError(
            f"zero-area umbrella at vertex {int(degenerate[0])} "
            f"({len(degenerate)} vertices affected)"
        )
    normals = accum / norms[:, None]
    normals.setflags(write=False)
    return normals


@dataclass(frozen=True)
class RayHit:
    """Intersection of a ray with a triangle surface.

    Attributes:
        t: Ray parameter of the hit (``origin + t * direction``).
        point: Hit position.
        triangle: Index of the hit triangle.
        barycentric: Weights of the triangle's three vertices at ``point``.

    """

    t: float
    point: np.ndarray
    triangle: int
    barycentric: np.ndarray


def intersect_ray(
    surface: TriangleSurface,
    origin: ArrayLike,
    direction: ArrayLike,
    t_min: float = 0.0,
    tolerance: float = 1e-12,
) -> RayHit | None:
    """Return the first intersection with parameter ``t >= t_min`` or ``None``.

    Uses the Moller-Trumbore test against every triangle. Ties in ``t`` go to
    the lowest triangle index.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    v = surface.vertices
    a, b, c = (v[surface.triangles[:, k]] for k in range(3))
    e1 = b - a
    e2 = c - a
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    valid = np.abs(det) > 1e-15
    inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
    s = o - a
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    w = (q @ d) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = (
        valid
        & (u >= -tolerance)
        & (w >= -tolerance)
        & (u + w <= 1.0 + tolerance)
        & (t >= t_min - tolerance)
    )
    if not np.any(hit):
        return None
    candidates = np.flatnonzero(hit)
    best = candidates[np.lexsort((candidates, t[candidates]))[0]]
    bary = np.array([1.0 - u[best] - w[best], u[best], w[best]])
    point = o + t[best] * d
    return RayHit(t=float(t[best]), point=point, triangle=int(best), barycentric=bary)
