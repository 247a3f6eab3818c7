"""Tetrahedralised cuboid control lattice for piecewise-affine deformation."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike

from lobe_registration.errors import ArgumentError, DegenerateGeometryError
from lobe_registration.geometry.surface import as_points
from lobe_registration.geometry.tetmesh import signed_volumes

if TYPE_CHECKING:
    from lobe_registration.geometry.model import LobeModel

TETS_PER_CELL = 6


def _cell_template() -> np.ndarray:
    """Six positively oriented tetrahedra of the unit cube, as corner offsets.

    Every tetrahedron follows a monotone path from corner ``(0,0,0)`` to
    ``(1,1,1)``, so each cube face is split along the diagonal through its
    lowest corner and neighbouring cells conform.
    """
    tets = []
    for order in permutations(range(3)):
        corner = np.zeros(3, dtype=np.int64)
        path = [corner.copy()]
        for axis in order:
            corner[axis] = 1
            path.append(corner.copy())
        tet = np.array(path)
        e = tet[1:] - tet[0]
        if np.linalg.det(e.astype(float)) < 0:
            tet[[2, 3]] = tet[[3, 2]]
        tets.append(tet)
    return np.array(tets)


_TEMPLATE = _cell_template()


@dataclass(frozen=True, eq=False)
class DeformationGrid:
    """Axis-aligned lattice of ``cells`` cuboids, each split into six tetrahedra.

    Vertex ``(i, j, k)`` has index ``i + (nx + 1) * (j + (ny + 1) * k)``;
    cell ``(i, j, k)`` owns tetrahedra ``6 * (i + nx * (j + ny * k))`` to
    ``6 * (...) + 5``.
    """

    cells: tuple[int, int, int]
    origin: np.ndarray
    spacing: np.ndarray
    displacements: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        cells = tuple(int(c) for c in self.cells)
        if len(cells) != 3 or min(cells) < 1:
            raise ArgumentError(f"grid cells must be three positive integers, got {self.cells}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "spacing", np.asarray(self.spacing, dtype=np.float64))
        if np.any(self.spacing <= 0):
            raise DegenerateGeometryError(f"grid spacing must be positive, got {self.spacing}")
        if self.displacements is None:
            u = np.zeros((self.n_vertices, 3))
        else:
            u = np.array(as_points(self.displacements, "grid displacements"))
            if len(u) != self.n_vertices:
                raise ArgumentError(
                    f"expected {self.n_vertices} grid displacements, got {len(u)}"
                )
        object.__setattr__(self, "displacements", u)
        object.__setattr__(self, "_rest", self._build_vertices())
        object.__setattr__(self, "_tets", self._build_tetrahedra())

    @property
    def n_vertices(self) -> int:
        nx, ny, nz = self.cells
        return (nx + 1) * (ny + 1) * (nz + 1)

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.cells
        return nx * ny * nz

    @property
    def rest_vertices(self) -> np.ndarray:
        return self._rest  # type: ignore[attr-defined]

    @property
    def tetrahedra(self) -> np.ndarray:
        return self._tets  # type: ignore[attr-defined]

    @property
    def deformed_vertices(self) -> np.ndarray:
        return self.rest_vertices + self.displacements

    def vertex_index(self, i: ArrayLike, j: ArrayLike, k: ArrayLike) -> np.ndarray:
        nx, ny, _ = self.cells
        return np.asarray(i) + (nx + 1) * (np.asarray(j) + (ny + 1) * np.asarray(k))

    def _build_vertices(self) -> np.ndarray:
        nx, ny, nz = self.cells
        k, j, i = np.meshgrid(
            np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij"
        )
        ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        v = self.origin + ijk * self.spacing
        v.setflags(write=False)
        return v

    def _build_tetrahedra(self) -> np.ndarray:
        nx, ny, nz = self.cells
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        base = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)  # cell order
        corners = base[:, None, None, :] + _TEMPLATE[None]  # (C, 6, 4, 3)
        tets = self.vertex_index(corners[..., 0], corners[..., 1], corners[..., 2])
        tets = tets.reshape(-1, 4).astype(np.int64)
        tets.setflags(write=False)
        return tets

    def cell_of(self, points: ArrayLike) -> np.ndarray:
        """Index of the cell containing each point (clamped to the lattice)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        ijk = np.floor((p - self.origin) / self.spacing).astype(np.int64)
        ijk = np.clip(ijk, 0, np.array(self.cells) - 1)
        nx, ny, _ = self.cells
        return ijk[:, 0] + nx * (ijk[:, 1] + ny * ijk[:, 2])

    def cell_tetrahedra(self, points: ArrayLike) -> np.ndarray:
        """``(P, 6)`` tetrahedra of the cell containing each point."""
        cell = self.cell_of(points)
        return TETS_PER_CELL * cell[:, None] + np.arange(TETS_PER_CELL)[None, :]

    def edges(self) -> np.ndarray:
        t = self.tetrahedra
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        e = np.concatenate([t[:, list(p)] for p in pairs])
        return np.unique(np.sort(e, axis=1), axis=0)

    def signed_volumes(self, vertices: np.ndarray | None = None) -> np.ndarray:
        v = self.deformed_vertices if vertices is None else vertices
        return signed_volumes(v, self.tetrahedra)

    def with_displacements(self, displacements: ArrayLike) -> "DeformationGrid":
        return DeformationGrid(self.cells, self.origin, self.spacing, displacements)


def build_deformation_grid(
    model: "LobeModel | ArrayLike",
    cells: tuple[int, int, int] = (4, 4, 4),
    margin: float = 2.0,
) -> DeformationGrid:
    """Build a control lattice bounding ``model`` expanded by ``margin`` mm.

    Args:
        model: A :class:`LobeModel` (all tet vertices and centerline nodes are
            bounded) or an ``(N, 3)`` point array.
        cells: Number of cells along x, y and z.
        margin: Padding added on every side of the bounding box.

    Raises:
        DegenerateGeometryError: If the padded box is flat along some axis.

    """
    if hasattr(model, "points"):
        points = model.points
    else:
        points = as_points(model)
    if len(points) == 0:
        raise ArgumentError("cannot build a grid around an empty model")
    if margin < 0:
        raise ArgumentError("grid margin must be non-negative")
    lo = points.min(axis=0) - margin
    hi = points.max(axis=0) + margin
    extent = hi - lo
    if np.any(extent <= 1e-12):
        raise DegenerateGeometryError(f"bounding box has zero extent: {extent}")
    spacing = extent / np.asarray(cells, dtype=np.float64)
    return DeformationGrid(tuple(cells), lo, spacing)
