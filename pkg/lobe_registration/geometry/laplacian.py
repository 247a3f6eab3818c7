"""Discrete Laplacian operators on vertex graphs and triangle surfaces."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike

from lobe_registration.errors import ArgumentError, ConfigurationError, DegenerateGeometryError
from lobe_registration.geometry.surface import MIN_TRIANGLE_AREA, TriangleSurface

EdgeWeights = dict[tuple[int, int], float]


def vertex_adjacency(n_vertices: int, edges: ArrayLike) -> list[np.ndarray]:
    """One-ring neighbour indices per vertex, sorted ascending."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    both = np.concatenate([e, e[:, ::-1]])
    both = np.unique(both, axis=0)
    splits = np.searchsorted(both[:, 0], np.arange(n_vertices + 1))
    return [both[splits[i] : splits[i + 1], 1] for i in range(n_vertices)]


def uniform_weights(adjacency: list[np.ndarray]) -> EdgeWeights:
    """Umbrella weights ``1 / |A_i|`` for every directed edge ``(i, j)``."""
    weights: EdgeWeights = {}
    for i, ring in enumerate(adjacency):
        if len(ring) == 0:
            continue
        w = 1.0 / len(ring)
        for j in ring:
            weights[(i, int(j))] = w
    return weights


def mixed_voronoi_areas(surface: TriangleSurface) -> np.ndarray:
    """Per-vertex mixed Voronoi areas.

    Non-obtuse triangles contribute their Voronoi region; obtuse triangles
    contribute half their area to the obtuse corner and a quarter to the
    other two corners.
    """
    v = surface.vertices
    t = surface.triangles
    areas = np.zeros(surface.n_vertices)
    tri_area = surface.face_areas()
    for k in range(3):
        i, j, l = t[:, k], t[:, (k + 1) % 3], t[:, (k + 2) % 3]
        eij = v[j] - v[i]
        eil = v[l] - v[i]
        cot_l = _cot(v[i] - v[l], v[j] - v[l])  # opposite edge (i, j)
        cot_j = _cot(v[i] - v[j], v[l] - v[j])  # opposite edge (i, l)
        voronoi = (np.einsum("ij,ij->i", eij, eij) * cot_l + np.einsum("ij,ij->i", eil, eil) * cot_j) / 8.0
        dots = np.stack(
            [
                np.einsum("ij,ij->i", eij, eil),
                np.einsum("ij,ij->i", v[i] - v[j], v[l] - v[j]),
                np.einsum("ij,ij->i", v[i] - v[l], v[j] - v[l]),
            ],
            axis=1,
        )
        obtuse_here = dots[:, 0] < 0
        obtuse_other = (dots[:, 1] < 0) | (dots[:, 2] < 0)
        contrib = np.where(
            obtuse_here, tri_area / 2.0, np.where(obtuse_other, tri_area / 4.0, voronoi)
        )
        np.add.at(areas, i, contrib)
    return areas


def _cot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b) / np.linalg.norm(np.cross(a, b), axis=1)


def cotangent_weights(surface: TriangleSurface, *, clamp_negative: bool = True) -> EdgeWeights:
    """Cotangent weights ``(cot a_ij + cot b_ij) / (2 A_i)`` per directed edge.

    Args:
        surface: Manifold triangle surface.
        clamp_negative: Replace negative weights (obtuse opposite angles) by 0.

    Raises:
        DegenerateGeometryError: If a triangle has area below ``1e-12`` mm^2.

    """
    tri_area = surface.face_areas()
    bad = np.flatnonzero(tri_area < MIN_TRIANGLE_AREA)
    if len(bad):
        raise DegenerateGeometryError(f"triangle {int(bad[0])} has zero area")
    v = surface.vertices
    t = surface.triangles
    areas = mixed_voronoi_areas(surface)

    cot_sum: dict[tuple[int, int], float] = {}
    for k in range(3):
        i, j, opp = t[:, k], t[:, (k + 1) % 3], t[:, (k + 2) % 3]
        cot = _cot(v[i] - v[opp], v[j] - v[opp])
        for a, b, c in zip(i.tolist(), j.tolist(), cot.tolist()):
            key = (a, b) if a < b else (b, a)
            cot_sum[key] = cot_sum.get(key, 0.0) + c

    weights: EdgeWeights = {}
    for (a, b), c in cot_sum.items():
        wa = c / (2.0 * areas[a])
        wb = c / (2.0 * areas[b])
        if clamp_negative:
            wa, wb = max(wa, 0.0), max(wb, 0.0)
        weights[(a, b)] = wa
        weights[(b, a)] = wb
    return weights


def tet_cotangent_weights(
    vertices: np.ndarray, tetrahedra: np.ndarray, *, clamp_negative: bool = True
) -> EdgeWeights:
    """Volumetric cotangent weights normalised by the barycentric dual volume.

    Edge ``(i, j)`` collects ``|e_kl| cot(theta_kl) / 6`` from every
    tetrahedron containing it, where ``kl`` is the opposite edge and
    ``theta_kl`` the dihedral angle there.
    """
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(tetrahedra, dtype=np.int64)
    p = v[t]
    vol = np.abs(
        np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))
    ) / 6.0
    if np.any(vol < MIN_TRIANGLE_AREA):
        raise DegenerateGeometryError(f"tetrahedron {int(np.argmin(vol))} has zero volume")
    dual = np.zeros(len(v))
    for k in range(4):
        np.add.at(dual, t[:, k], vol / 4.0)

    acc: dict[tuple[int, int], float] = {}
    for a, b, k, l in [(0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2), (1, 2, 0, 3), (1, 3, 0, 2), (2, 3, 0, 1)]:
        xk, xl = v[t[:, k]], v[t[:, l]]
        e = xl - xk
        length = np.linalg.norm(e, axis=1)
        e_hat = e / length[:, None]
        da = v[t[:, a]] - xk
        db = v[t[:, b]] - xk
        da -= np.einsum("ij,ij->i", da, e_hat)[:, None] * e_hat
        db -= np.einsum("ij,ij->i", db, e_hat)[:, None] * e_hat
        contrib = length * _cot(da, db) / 6.0
        for i, j, c in zip(t[:, a].tolist(), t[:, b].tolist(), contrib.tolist()):
            key = (i, j) if i < j else (j, i)
            acc[key] = acc.get(key, 0.0) + c

    weights: EdgeWeights = {}
    for (i, j), c in acc.items():
        wi, wj = c / dual[i], c / dual[j]
        if clamp_negative:
            wi, wj = max(wi, 0.0), max(wj, 0.0)
        weights[(i, j)] = wi
        weights[(j, i)] = wj
    return weights


def laplacian_matrix(adjacency: list[np.ndarray], weights: EdgeWeights) -> sp.csr_matrix:
    """Sparse operator with ``(L u)_i = sum_j w_ij (u_i - u_j)``.

    Raises:
        ConfigurationError: If an adjacent pair has no weight.

    """
    n = len(adjacency)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for i, ring in enumerate(adjacency):
        total = 0.0
        for j in ring.tolist():
            try:
                w = weights[(i, j)]
            except KeyError:
                raise ConfigurationError(f"no Laplacian weight for edge ({i}, {j})") from None
            rows.append(i)
            cols.append(j)
            vals.append(-w)
            total += w
        rows.append(i)
        cols.append(i)
        vals.append(total)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def discrete_laplacian(
    field: ArrayLike, adjacency: list[np.ndarray], weights: EdgeWeights
) -> np.ndarray:
    """Apply the weighted umbrella Laplacian to a per-vertex vector field."""
    u = np.asarray(field, dtype=np.float64)
    if u.ndim != 2 or len(u) != len(adjacency):
        raise ArgumentError(
            f"field must have one row per vertex ({len(adjacency)}), got shape {u.shape}"
        )
    return laplacian_matrix(adjacency, weights) @ u


def build_laplacian(
    n_vertices: int,
    edges: ArrayLike,
    weighting: str = "uniform",
    *,
    surface: TriangleSurface | None = None,
    vertices: np.ndarray | None = None,
    tetrahedra: np.ndarray | None = None,
) -> sp.csr_matrix:
    """Laplacian over the graph ``edges`` with ``uniform`` or ``cotangent`` weights.

    Cotangent weights come from ``surface`` when given, otherwise from the
    tetrahedral mesh ``(vertices, tetrahedra)``.
    """
    adjacency = vertex_adjacency(n_vertices, edges)
    if weighting == "uniform":
        weights = uniform_weights(adjacency)
    elif weighting == "cotangent":
        if surface is not None:
            weights = cotangent_weights(surface)
        elif vertices is not None and tetrahedra is not None:
            weights = tet_cotangent_weights(vertices, tetrahedra)
        else:
            raise ConfigurationError("cotangent weights need a surface or a tetrahedral mesh")
    else:
        raise ConfigurationError(f"unknown Laplacian weighting {weighting!r}")
    return laplacian_matrix(adjacency, weights)
