"""Registration objective: surface and centerline distances plus Laplacian smoothness.

Every registration step moves the model points linearly in its parameters,
``x = base + basis @ theta``. With correspondences frozen, each distance
term is a weighted sum of residual norms ``|S x - c|`` whose rows select (or
interpolate along centerline segments) model points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from lobe_registration.config import RegistrationConfig
from lobe_registration.errors import ArgumentError
from lobe_registration.geometry.centerline import CenterlineTree
from lobe_registration.geometry.model import LobeModel
from lobe_registration.geometry.surface import TriangleSurface, compute_vertex_normals
from lobe_registration.metrics.distance import closest_points_on_segments, normal_aware_matches

# Residual norms below this are treated as zero when normalising directions
_NORM_FLOOR = 1e-12


@dataclass(frozen=True, slots=True)
class ObjectiveBreakdown:
    """Value of the objective split into its three terms."""

    surface_term: float
    centerline_term: float
    regularization_term: float
    surface_distance: float = 0.0
    centerline_distance: float = 0.0
    total: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "total", self.surface_term + self.centerline_term + self.regularization_term
        )


@dataclass(frozen=True, slots=True)
class Regularizer:
    """Weighted squared Laplacian ``weight * ||R theta||^2`` of a control field."""

    matrix: sp.csr_matrix | np.ndarray
    weight: float

    def value(self, theta: np.ndarray) -> float:
        if self.weight == 0.0:
            return 0.0
        lt = self.matrix @ theta
        return float(self.weight * np.sum(lt * lt))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return 2.0 * self.weight * (self.matrix.T @ (self.matrix @ theta))

    def normal_matrix(self) -> np.ndarray:
        """Dense ``weight * R^T R``."""
        rtr = self.matrix.T @ self.matrix
        rtr = rtr.toarray() if sp.issparse(rtr) else np.asarray(rtr)
        return self.weight * rtr


def make_regularizer(
    laplacian: sp.csr_matrix | np.ndarray, beta: float, normalization: str = "sum"
) -> Regularizer:
    """``beta * ||R theta||^2``; ``normalization = "mean"`` divides ``beta`` by the number of rows."""
    rows = laplacian.shape[0]
    weight = beta / rows if normalization == "mean" and rows else beta
    return Regularizer(laplacian, float(weight))


@dataclass(frozen=True, eq=False)
class ObjectiveContext:
    """Target geometry and source topology shared by all evaluations of one lobe."""

    target_surface: TriangleSurface
    target_centerline: CenterlineTree
    source_triangles: np.ndarray
    surface_vertex_map: np.ndarray
    source_tree: CenterlineTree
    n_tet_vertices: int
    alpha: float
    gamma: float
    target_tree: cKDTree = field(init=False)
    target_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_tree", cKDTree(self.target_vertices))

    @property
    def target_vertices(self) -> np.ndarray:
        return self.target_surface.vertices - self.target_offset

    @property
    def target_nodes(self) -> np.ndarray:
        return self.target_centerline.positions - self.target_offset

    @classmethod
    def for_models(
        cls,
        source: LobeModel,
        target: LobeModel,
        config: RegistrationConfig,
        *,
        alpha: float | None = None,
        target_offset: ArrayLike | None = None,
    ) -> "ObjectiveContext":
        return cls(
            target_surface=target.surface,
            target_centerline=target.centerline,
            source_triangles=source.surface.triangles,
            surface_vertex_map=source.surface_vertex_map,
            source_tree=source.centerline,
            n_tet_vertices=source.n_tet_vertices,
            alpha=config.alpha if alpha is None else alpha,
            gamma=config.gamma,
            target_offset=np.zeros(3) if target_offset is None else np.asarray(target_offset, dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Frozen residual structure ``S x - c`` with per-row coefficients.

    Attributes:
        operator: ``(R, P)`` sparse row operator on model points.
        targets: ``(R, 3)`` matched target positions.
        coefficients: ``(R,)`` averaging weights (``1/N`` of the term's direction).
        centerline: ``(R,)`` mask of centerline rows.

    """

    operator: sp.csr_matrix
    targets: np.ndarray
    coefficients: np.ndarray
    centerline: np.ndarray

    def residuals(self, points: np.ndarray) -> np.ndarray:
        return self.operator @ points - self.targets

    def distances(self, points: np.ndarray) -> tuple[float, float]:
        """Surface distance ``d_s`` and centerline distance ``d_c`` at ``points``."""
        norms = np.linalg.norm(self.residuals(points), axis=1)
        weighted = self.coefficients * norms
        return float(weighted[~self.centerline].sum()), float(weighted[self.centerline].sum())


def compute_correspondences(points: np.ndarray, ctx: ObjectiveContext) -> Correspondences:
    """Match the source model at ``points`` to the target.

    Surface rows pair every source vertex with its normal-aware closest
    target vertex and every target vertex with its closest source vertex.
    Centerline rows pair every target node with the closest point of the
    source centerline polyline.
    """
    nt = ctx.n_tet_vertices
    smap = ctx.surface_vertex_map
    xs = points[:nt][smap]
    src_normals = compute_vertex_normals(TriangleSurface(xs, ctx.source_triangles))
    tv = ctx.target_vertices
    tn = ctx.target_surface.normals
    ns, ntg = len(xs), len(tv)

    fwd, _ = normal_aware_matches(xs, src_normals, tv, tn, ctx.gamma, tree=ctx.target_tree)
    rev, _ = normal_aware_matches(tv, tn, xs, src_normals, ctx.gamma)

    rows = [np.arange(ns), ns + np.arange(ntg)]
    cols = [smap, smap[rev]]
    vals = [np.ones(ns), np.ones(ntg)]
    targets = [tv[fwd], tv]
    coeff = [np.full(ns, 1.0 / ns), np.full(ntg, 1.0 / ntg)]
    n_rows = ns + ntg

    if ctx.alpha > 0:
        nodes = ctx.target_nodes
        nc = len(nodes)
        seg = ctx.source_tree.segments()
        if len(seg) == 0:
            root = ctx.source_tree.root
            seg = np.array([[root, root]])
        starts = points[nt + seg[:, 0]]
        ends = points[nt + seg[:, 1]]
        idx, tau, _ = closest_points_on_segments(nodes, starts, ends)
        r = n_rows + np.arange(nc)
        rows += [r, r]
        cols += [nt + seg[idx, 0], nt + seg[idx, 1]]
        vals += [1.0 - tau, tau]
        targets.append(nodes)
        coeff.append(np.full(nc, 1.0 / nc))
        n_rows += nc

    operator = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, len(points)),
    )
    mask = np.zeros(n_rows, dtype=bool)
    mask[ns + ntg :] = True
    return Correspondences(operator, np.vstack(targets), np.concatenate(coeff), mask)


@dataclass(frozen=True, eq=False)
class FrozenObjective:
    """The objective with correspondences held fixed, as a function of ``theta``."""

    correspondences: Correspondences
    base: np.ndarray
    basis: np.ndarray
    alpha: float
    regularizer: Regularizer | None = None

    def points(self, theta: np.ndarray) -> np.ndarray:
        return self.base + self.basis @ theta

    def breakdown(self, theta: np.ndarray) -> ObjectiveBreakdown:
        ds, dc = self.correspondences.distances(self.points(theta))
        reg = self.regularizer.value(theta) if self.regularizer is not None else 0.0
        return ObjectiveBreakdown(ds * ds, self.alpha * dc * dc, reg, ds, dc)

    def value(self, theta: np.ndarray) -> float:
        return self.breakdown(theta).total

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """Analytic gradient with respect to ``theta``."""
        c = self.correspondences
        x = self.points(theta)
        res = c.residuals(x)
        norms = np.linalg.norm(res, axis=1)
        ds = float((c.coefficients * norms)[~c.centerline].sum())
        dc = float((c.coefficients * norms)[c.centerline].sum())
        scale = np.where(c.centerline, 2.0 * self.alpha * dc, 2.0 * ds) * c.coefficients
        unit = res / np.maximum(norms, _NORM_FLOOR)[:, None]
        grad_x = c.operator.T @ (scale[:, None] * unit)
        grad = self.basis.T @ grad_x
        if self.regularizer is not None:
            grad = grad + self.regularizer.gradient(theta)
        return grad


def evaluate_objective(
    source: LobeModel,
    target: LobeModel,
    config: RegistrationConfig,
    *,
    points: ArrayLike | None = None,
    control_displacement: ArrayLike | None = None,
    laplacian: sp.csr_matrix | np.ndarray | None = None,
) -> ObjectiveBreakdown:
    """Evaluate the objective for the source model at ``points``.

    Args:
        source: Source model (topology and, by default, positions).
        target: Target model.
        config: Supplies ``alpha``, ``beta``, ``gamma`` and the normalisation.
        points: Model point positions; defaults to the source positions.
        control_displacement: Displacement of the active control structure.
        laplacian: Laplacian of the control structure; the regularisation
            term is zero when either this or ``control_displacement`` is omitted.

    """
    x = source.points if points is None else np.asarray(points, dtype=np.float64)
    if x.shape != source.points.shape:
        raise ArgumentError(f"expected points of shape {source.points.shape}, got {x.shape}")
    ctx = ObjectiveContext.for_models(source, target, config)
    corr = compute_correspondences(x, ctx)
    ds, dc = corr.distances(x)
    reg = 0.0
    if laplacian is not None and control_displacement is not None:
        u = np.asarray(control_displacement, dtype=np.float64)
        reg = make_regularizer(
            laplacian, config.beta, config.regularization_normalization
        ).value(u)
    return ObjectiveBreakdown(ds * ds, config.alpha * dc * dc, reg, ds, dc)
