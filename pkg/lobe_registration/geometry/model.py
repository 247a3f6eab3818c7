"""Lobe models: surface, volume mesh and centerline tree of one lobe."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike

from lobe_registration.errors import ArgumentError
from lobe_registration.geometry.centerline import CenterlineTree
from lobe_registration.geometry.surface import TriangleSurface, as_points, ensure_closed_manifold
from lobe_registration.geometry.tetmesh import BarycentricBinding, TetrahedralMesh, bind_barycentric


@dataclass(frozen=True, eq=False)
class LobeModel:
    """The unit of registration.

    The model's points are stacked as ``[tet vertices; centerline nodes]``;
    surface vertices are the tet vertices selected by the mesh's surface map.
    """

    surface: TriangleSurface
    tet_mesh: TetrahedralMesh
    centerline: CenterlineTree
    label: str = "upper"

    def __post_init__(self) -> None:
        if not self.label:
            raise ArgumentError("lobe label must be non-empty")
        if self.tet_mesh.surface_vertex_map is None:
            raise ArgumentError("lobe tetrahedral mesh needs a surface vertex map")
        if len(self.tet_mesh.surface_vertex_map) != self.surface.n_vertices:
            raise ArgumentError(
                f"surface map has {len(self.tet_mesh.surface_vertex_map)} entries "
                f"for {self.surface.n_vertices} surface vertices"
            )

    def validate(self) -> None:
        """Enforce every geometric invariant of a lobe model.

        Raises:
            InvariantError: Named invariant that does not hold.
            BindingError: A centerline node lies outside the volume mesh.

        """
        ensure_closed_manifold(self.surface)
        _ = self.surface.normals
        self.tet_mesh.check_orientation()
        self.tet_mesh.check_boundary(self.surface)
        _ = self.centerline_binding

    @property
    def n_tet_vertices(self) -> int:
        return self.tet_mesh.n_vertices

    @property
    def surface_vertex_map(self) -> np.ndarray:
        return self.tet_mesh.surface_vertex_map  # type: ignore[return-value]

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.tet_mesh.vertices, self.centerline.positions])

    @property
    def hilum(self) -> np.ndarray:
        return self.centerline.positions[self.centerline.root]

    @cached_property
    def centerline_binding(self) -> BarycentricBinding:
        """Barycentric attachment of the centerline nodes to the volume mesh."""
        return bind_barycentric(self.centerline.positions, self.tet_mesh)

    def with_points(self, points: ArrayLike) -> "LobeModel":
        """Same topology at new positions (``[tet vertices; centerline nodes]``)."""
        p = as_points(points, "model points")
        n = self.n_tet_vertices
        if len(p) != n + self.centerline.n_nodes:
            raise ArgumentError(
                f"expected {n + self.centerline.n_nodes} model points, got {len(p)}"
            )
        tet = self.tet_mesh.with_vertices(p[:n])
        return LobeModel(
            surface=self.surface.with_vertices(p[:n][self.surface_vertex_map]),
            tet_mesh=tet,
            centerline=self.centerline.with_positions(p[n:]),
            label=self.label,
        )

    def translated(self, offset: ArrayLike) -> "LobeModel":
        return self.with_points(self.points + np.asarray(offset, dtype=np.float64))

    def with_centerline(self, centerline: CenterlineTree) -> "LobeModel":
        return LobeModel(self.surface, self.tet_mesh, centerline, self.label)


LANDMARK_KINDS = ("surface", "bronchus")


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Corresponding evaluation points on the source and target models.

    Attributes:
        kinds: ``surface`` or ``bronchus`` per landmark.
        indices: Source vertex or node index the landmark was placed on
            (``-1`` when not tied to a vertex).
        source: ``(L, 3)`` source positions.
        target: ``(L, 3)`` target positions.

    """

    kinds: tuple[str, ...]
    indices: np.ndarray
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "source", as_points(np.reshape(self.source, (-1, 3)), "landmarks"))
        object.__setattr__(self, "target", as_points(np.reshape(self.target, (-1, 3)), "landmarks"))
        unknown = sorted(set(self.kinds) - set(LANDMARK_KINDS))
        if unknown:
            raise ArgumentError(f"unknown landmark kinds: {unknown}")
        if not (len(self.kinds) == len(self.indices) == len(self.source) == len(self.target)):
            raise ArgumentError("landmark kinds, indices and positions differ in length")

    def __len__(self) -> int:
        return len(self.kinds)

    def mask(self, kind: str) -> np.ndarray:
        return np.array([k == kind for k in self.kinds], dtype=bool)
