"""Surface, centerline and landmark distances between lobe models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from lobe_registration.errors import ArgumentError
from lobe_registration.geometry.centerline import CenterlineTree
from lobe_registration.geometry.surface import TriangleSurface

# Euclidean candidates gathered before the penalised score is applied
NORMAL_SEARCH_CANDIDATES = 32


@dataclass(frozen=True, slots=True)
class CorrespondencePair:
    """Closest-point match between a query vertex and a target vertex."""

    query_index: int
    match_index: int
    distance: float


@dataclass(frozen=True, slots=True)
class MetricReport:
    """Evaluation metrics of one registered lobe, all in millimetres."""

    mean_distance: float
    hausdorff: float
    centerline_mean: float
    centerline_max: float
    tre_surface: tuple[float, ...] = field(default_factory=tuple)
    tre_bronchus: tuple[float, ...] = field(default_factory=tuple)

    @property
    def tre_surface_mean(self) -> float:
        return _mean(self.tre_surface)

    @property
    def tre_bronchus_mean(self) -> float:
        return _mean(self.tre_bronchus)

    @property
    def tre_surface_sd(self) -> float:
        return _sd(self.tre_surface)

    @property
    def tre_bronchus_sd(self) -> float:
        return _sd(self.tre_bronchus)


def _mean(values: tuple[float, ...]) -> float:
    return float(np.mean(values)) if values else float("nan")


def _sd(values: tuple[float, ...]) -> float:
    return float(np.std(values)) if values else float("nan")


def normal_aware_matches(
    points: ArrayLike,
    normals: ArrayLike,
    target_vertices: ArrayLike,
    target_normals: ArrayLike,
    gamma: float,
    tree: cKDTree | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Match every query to the target vertex minimising ``d + gamma (1 - n . n_p)``.

    The ``NORMAL_SEARCH_CANDIDATES`` Euclidean nearest vertices are scored
    first. When the farthest of them is not strictly further than the best
    score, every vertex within that score is rescored, so the result equals an
    exhaustive search. Ties go to the lowest target index.

    Returns:
        Matched target indices and their Euclidean distances.

    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    tv = np.asarray(target_vertices, dtype=np.float64).reshape(-1, 3)
    tn = np.asarray(target_normals, dtype=np.float64).reshape(-1, 3)
    if len(tv) == 0:
        raise ArgumentError("target has no vertices")
    if gamma < 0:
        raise ArgumentError("gamma must be non-negative")
    if len(p) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    tree = cKDTree(tv) if tree is None else tree

    k = min(NORMAL_SEARCH_CANDIDATES, len(tv))
    knn_d, idx = tree.query(p, k=k)
    knn_d = np.asarray(knn_d).reshape(len(p), k)
    idx = np.asarray(idx, dtype=np.int64).reshape(len(p), k)
    dist = np.linalg.norm(tv[idx] - p[:, None, :], axis=2)
    score = dist + gamma * (1.0 - np.einsum("pd,pkd->pk", n, tn[idx]))
    order = np.lexsort((idx, score))
    rows = np.arange(len(p))
    best = order[:, 0]
    match = idx[rows, best]
    best_score = score[rows, best]

    if k < len(tv):
        # with gamma = 0 this only fires when all k candidates are equidistant
        for i in np.flatnonzero(knn_d[:, -1] <= best_score):
            radius = best_score[i] * (1.0 + 1e-12) + 1e-12
            cand = np.array(sorted(tree.query_ball_point(p[i], radius)), dtype=np.int64)
            d = np.linalg.norm(tv[cand] - p[i], axis=1)
            s = d + gamma * (1.0 - tn[cand] @ n[i])
            match[i] = cand[np.lexsort((cand, s))[0]]
    distances = np.linalg.norm(tv[match] - p, axis=1)
    return match, distances


def normal_aware_closest_point(
    v: ArrayLike,
    n: ArrayLike,
    target: TriangleSurface,
    gamma: float = 1.0,
    query_index: int = 0,
) -> CorrespondencePair:
    """Closest target vertex to ``v`` under the normal-compatibility penalty.

    Args:
        v: Query position.
        n: Unit normal at the query.
        target: Surface whose vertices are searched.
        gamma: Weight of the normal mismatch ``1 - n . n_p``.
        query_index: Index recorded in the returned pair.

    Returns:
        CorrespondencePair: Match index and the plain Euclidean distance.

    """
    if target.n_vertices == 0:
        raise ArgumentError("target surface is empty")
    match, dist = normal_aware_matches(v, n, target.vertices, target.normals, gamma)
    return CorrespondencePair(query_index, int(match[0]), float(dist[0]))


def directed_surface_distances(
    source: TriangleSurface, target: TriangleSurface, gamma: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Normal-aware match and distance from every source vertex to ``target``."""
    if source.n_vertices == 0 or target.n_vertices == 0:
        raise ArgumentError("surface distance needs non-empty surfaces")
    return normal_aware_matches(
        source.vertices, source.normals, target.vertices, target.normals, gamma
    )


def surface_distance(source: TriangleSurface, target: TriangleSurface, gamma: float = 1.0) -> float:
    """Bidirectional surface distance: sum of the two mean normal-aware distances."""
    _, forward = directed_surface_distances(source, target, gamma)
    _, backward = directed_surface_distances(target, source, gamma)
    return float(forward.mean() + backward.mean())


def _vertices(shape: TriangleSurface | ArrayLike) -> np.ndarray:
    if isinstance(shape, TriangleSurface):
        return shape.vertices
    return np.asarray(shape, dtype=np.float64).reshape(-1, 3)


def nearest_vertex_distances(source: TriangleSurface | ArrayLike, target: TriangleSurface | ArrayLike) -> np.ndarray:
    """Euclidean distance from every source vertex to the nearest target vertex."""
    a, b = _vertices(source), _vertices(target)
    if len(a) == 0 or len(b) == 0:
        raise ArgumentError("distance needs non-empty vertex sets")
    d, _ = cKDTree(b).query(a, k=1)
    return np.asarray(d, dtype=np.float64)


def hausdorff_distance(a: TriangleSurface | ArrayLike, b: TriangleSurface | ArrayLike) -> float:
    """Symmetric vertex-to-vertex Hausdorff distance."""
    return float(max(nearest_vertex_distances(a, b).max(), nearest_vertex_distances(b, a).max()))


def mean_distance(a: TriangleSurface | ArrayLike, b: TriangleSurface | ArrayLike) -> float:
    """Average of the two directed mean nearest-vertex distances."""
    return float(0.5 * (nearest_vertex_distances(a, b).mean() + nearest_vertex_distances(b, a).mean()))


def closest_points_on_segments(
    points: ArrayLike, starts: np.ndarray, ends: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest segment, its parameter and the distance for every point.

    Returns:
        ``(segment, t, distance)`` arrays; ties go to the lowest segment index.

    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = ends - starts
    length2 = np.einsum("ij,ij->i", d, d)
    rel = p[:, None, :] - starts[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.einsum("pej,ej->pe", rel, d) / length2[None, :]
    t = np.where(length2[None, :] > 0, np.clip(t, 0.0, 1.0), 0.0)
    closest = starts[None, :, :] + t[..., None] * d[None, :, :]
    dist = np.linalg.norm(p[:, None, :] - closest, axis=2)
    seg = np.argmin(dist, axis=1)
    rows = np.arange(len(p))
    return seg, t[rows, seg], dist[rows, seg]


def centerline_distances(source: CenterlineTree, target: CenterlineTree) -> np.ndarray:
    """Distance from every target node to the source centerline curve."""
    starts, ends = source.segment_endpoints()
    _, _, dist = closest_points_on_segments(target.positions, starts, ends)
    return dist


def centerline_one_way_distance(source: CenterlineTree, target: CenterlineTree) -> float:
    """Mean distance from target nodes to the source polyline (target to source only)."""
    return float(centerline_distances(source, target).mean())


def target_registration_error(deformed_landmarks: ArrayLike, target_landmarks: ArrayLike) -> np.ndarray:
    """Per-landmark Euclidean distance between corresponding landmark lists."""
    a = np.asarray(deformed_landmarks, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(target_landmarks, dtype=np.float64).reshape(-1, 3)
    if len(a) != len(b):
        raise ArgumentError(f"landmark count mismatch: {len(a)} vs {len(b)}")
    return np.linalg.norm(a - b, axis=1)


def compute_metric_report(
    deformed_surface: TriangleSurface,
    target_surface: TriangleSurface,
    deformed_centerline: CenterlineTree,
    target_centerline: CenterlineTree,
    surface_landmarks: tuple[ArrayLike, ArrayLike] | None = None,
    bronchus_landmarks: tuple[ArrayLike, ArrayLike] | None = None,
) -> MetricReport:
    """Compute the evaluation metrics of a registered lobe.

    Args:
        deformed_surface: Source surface after registration.
        target_surface: Target surface.
        deformed_centerline: Source centerline after registration.
        target_centerline: Target centerline (possibly missing branches).
        surface_landmarks: ``(deformed, target)`` surface landmark positions.
        bronchus_landmarks: ``(deformed, target)`` bronchus landmark positions.

    Returns:
        MetricReport: Distances in millimetres.

    """
    cd = centerline_distances(deformed_centerline, target_centerline)
    tre_s = target_registration_error(*surface_landmarks) if surface_landmarks else np.zeros(0)
    tre_b = target_registration_error(*bronchus_landmarks) if bronchus_landmarks else np.zeros(0)
    return MetricReport(
        mean_distance=mean_distance(deformed_surface, target_surface),
        hausdorff=hausdorff_distance(deformed_surface, target_surface),
        centerline_mean=float(cd.mean()),
        centerline_max=float(cd.max()),
        tre_surface=tuple(float(x) for x in tre_s),
        tre_bronchus=tuple(float(x) for x in tre_b),
    )
