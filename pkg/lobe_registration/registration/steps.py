"""The three registration steps: global affine, piecewise affine, local refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.sparse.linalg import splu

from lobe_registration.config import RegistrationConfig
from lobe_registration.errors import ArgumentError
from lobe_registration.geometry.grid import DeformationGrid, build_deformation_grid
from lobe_registration.geometry.laplacian import build_laplacian, vertex_adjacency
from lobe_registration.geometry.model import LobeModel
from lobe_registration.geometry.tetmesh import bind_barycentric, signed_volumes
from lobe_registration.registration.objective import ObjectiveContext, make_regularizer
from lobe_registration.registration.optimizer import (
    LinearProblem,
    OptimizationResult,
    ProblemPart,
    optimize,
)

# Smallest admissible determinant of the affine part (volume ratio)
MIN_VOLUME_RATIO = 0.01


@dataclass(eq=False)
class AffineResult:
    """Outcome of the global affine step.

    Attributes:
        transforms: ``4 x 4`` homogeneous world transform per lobe.
        models: Transformed source models, in input order.
        optimization: Optimiser outcome (parameters in hilum-origin frames).

    """

    transforms: list[np.ndarray]
    models: list[LobeModel]
    optimization: OptimizationResult

    @property
    def transform(self) -> np.ndarray:
        return self.transforms[0]

    @property
    def model(self) -> LobeModel:
        return self.models[0]


@dataclass(eq=False)
class PiecewiseResult:
    """Outcome of the piecewise-affine step."""

    grid: DeformationGrid
    model: LobeModel
    optimization: OptimizationResult


@dataclass(eq=False)
class RefinementResult:
    """Outcome of the local refinement step."""

    model: LobeModel
    surface_displacement: np.ndarray
    optimization: OptimizationResult


def _bbox_diagonal(points: np.ndarray) -> float:
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def _affine_check(points: np.ndarray, theta: np.ndarray) -> str | None:
    det = float(np.linalg.det(theta[:3]))
    if not np.isfinite(det) or det < MIN_VOLUME_RATIO:
        return f"affine transform collapses volume (det {det:.3g} < {MIN_VOLUME_RATIO})"
    return None


def step1_global_affine(
    sources: LobeModel | list[LobeModel],
    targets: LobeModel | list[LobeModel],
    config: RegistrationConfig,
) -> AffineResult:
    """Fit one affine transform minimising the objective without regularisation.

    Source and target are expressed with their hila at the origin, so the
    identity start already aligns the hila; the twelve affine parameters are
    then optimised. Given several lobe pairs, a single transform is shared by
    all of them (expressed about the mean hila).

    Raises:
        RegistrationError: If an iterate collapses the volume below 1 %.

    """
    src = [sources] if isinstance(sources, LobeModel) else list(sources)
    tgt = [targets] if isinstance(targets, LobeModel) else list(targets)
    if len(src) != len(tgt) or not src:
        raise ArgumentError("need matching, non-empty source and target lists")
    h_s = np.mean([m.hilum for m in src], axis=0)
    h_t = np.mean([m.hilum for m in tgt], axis=0)

    parts = []
    for s, t in zip(src, tgt):
        v = s.points - h_s
        basis = np.hstack([v, np.ones((len(v), 1))])
        ctx = ObjectiveContext.for_models(s, t, config, target_offset=h_t)
        parts.append(ProblemPart(ctx, np.zeros_like(v), basis))
    theta0 = np.vstack([np.eye(3), np.zeros((1, 3))])
    problem = LinearProblem(
        parts=tuple(parts),
        theta0=theta0,
        check=_affine_check,
        abort_on_invalid=True,
    )
    diag = max(_bbox_diagonal(s.points) for s in src)
    result = optimize(problem, config, "affine", diag)

    a = result.theta[:3].T
    t = result.theta[3]
    transform = np.eye(4)
    transform[:3, :3] = a
    transform[:3, 3] = t + h_t - a @ h_s
    models = [s.with_points(p.points(result.theta) + h_t) for s, p in zip(src, parts)]
    return AffineResult([transform] * len(src), models, result)


def step2_piecewise_affine(
    state: LobeModel, target: LobeModel, config: RegistrationConfig
) -> PiecewiseResult:
    """Optimise the displacements of a tetrahedral control grid around ``state``.

    Every model point is bound barycentrically to the grid, so the model
    follows the grid's piecewise-affine deformation. Iterates that invert a
    grid or lobe tetrahedron are rejected.
    """
    grid = build_deformation_grid(state, config.grid_cells, config.grid_margin)
    binding = bind_barycentric(state.points, grid)
    basis = binding.matrix(grid.n_vertices).toarray()
    ctx = ObjectiveContext.for_models(state, target, config)
    nt = state.n_tet_vertices
    lobe_tets = state.tet_mesh.tetrahedra
    grid_tets = grid.tetrahedra
    rest = grid.rest_vertices

    if config.regularization_domain == "grid":
        laplacian = build_laplacian(
            grid.n_vertices,
            grid.edges(),
            config.grid_weighting,
            vertices=rest,
            tetrahedra=grid_tets,
        )
    else:
        surface_laplacian = build_laplacian(
            state.surface.n_vertices,
            state.surface.edges(),
            config.surface_weighting,
            surface=state.surface,
        )
        laplacian = np.asarray(surface_laplacian @ basis[:nt][state.surface_vertex_map])
    regularizer = make_regularizer(laplacian, config.beta, config.regularization_normalization)

    def check(points: np.ndarray, theta: np.ndarray) -> str | None:
        if np.any(signed_volumes(rest + theta, grid_tets) <= 0):
            return "inverted grid tetrahedron"
        if np.any(signed_volumes(points[:nt], lobe_tets) <= 0):
            return "inverted lobe tetrahedron"
        return None

    problem = LinearProblem(
        parts=(ProblemPart(ctx, state.points.copy(), basis),),
        theta0=np.zeros((grid.n_vertices, 3)),
        regularizer=regularizer,
        check=check,
    )
    result = optimize(problem, config, "piecewise", _bbox_diagonal(state.points))
    model = state.with_points(problem.parts[0].points(result.theta))
    return PiecewiseResult(grid.with_displacements(result.theta), model, result)


def harmonic_extension(model: LobeModel) -> np.ndarray:
    """Dense ``(N_tet, N_surface)`` map from surface displacements to all tet vertices.

    Interior displacements solve the Laplace equation of the tetrahedral
    edge graph with the surface displacements as boundary values.
    """
    nt = model.n_tet_vertices
    smap = model.surface_vertex_map
    ext = np.zeros((nt, len(smap)))
    ext[smap, np.arange(len(smap))] = 1.0
    interior = np.setdiff1d(np.arange(nt), smap)
    if len(interior) == 0:
        return ext
    edges = model.tet_mesh.edges()
    adjacency = vertex_adjacency(nt, edges)
    degree = np.array([len(a) for a in adjacency], dtype=np.float64)
    ones = np.ones(len(edges))
    adj = sp.coo_matrix((ones, (edges[:, 0], edges[:, 1])), shape=(nt, nt))
    graph = (sp.diags(degree) - adj - adj.T).tocsc()
    k_ii = graph[interior][:, interior].tocsc()
    k_ib = graph[interior][:, smap].toarray()
    ext[interior] = -splu(k_ii).solve(k_ib)
    return ext


def step3_local_refinement(
    state: LobeModel,
    target: LobeModel,
    config: RegistrationConfig,
    centerline_weights: sp.csr_matrix,
) -> RefinementResult:
    """Optimise one displacement per surface vertex with a surface-Laplacian prior.

    Interior tet vertices follow by harmonic extension and centerline nodes
    by their barycentric weights in the lobe mesh, so the centerline term
    stays active. Iterates that invert lobe tetrahedra or flip surface
    triangles are rejected.

    Args:
        state: Model after the piecewise-affine step.
        target: Target model.
        config: Registration settings.
        centerline_weights: ``(N_nodes, N_tet)`` barycentric weights of the
            centerline nodes in the source lobe mesh.

    """
    ext = harmonic_extension(state)
    basis = np.vstack([ext, np.asarray(centerline_weights @ ext)])
    alpha = config.alpha if config.centerline_in_refinement else 0.0
    ctx = ObjectiveContext.for_models(state, target, config, alpha=alpha)
    laplacian = build_laplacian(
        state.surface.n_vertices,
        state.surface.edges(),
        config.surface_weighting,
        surface=state.surface,
    )
    regularizer = make_regularizer(laplacian, config.beta, config.regularization_normalization)
    nt = state.n_tet_vertices
    smap = state.surface_vertex_map
    lobe_tets = state.tet_mesh.tetrahedra
    start_normals = state.surface.face_cross()

    def check(points: np.ndarray, theta: np.ndarray) -> str | None:
        if np.any(signed_volumes(points[:nt], lobe_tets) <= 0):
            return "inverted lobe tetrahedron"
        cross = state.surface.face_cross(points[:nt][smap])
        if np.any(np.einsum("ij,ij->i", cross, start_normals) <= 0):
            return "flipped surface triangle"
        return None

    problem = LinearProblem(
        parts=(ProblemPart(ctx, state.points.copy(), basis),),
        theta0=np.zeros((state.surface.n_vertices, 3)),
        regularizer=regularizer,
        check=check,
        invalid_reason="fold_over",
    )
    result = optimize(problem, config, "refinement", _bbox_diagonal(state.points))
    model = state.with_points(problem.parts[0].points(result.theta))
    if result.reason == "fold_over":
        logger.warning(f"Refinement of lobe {state.label} stopped on fold-over")
    return RefinementResult(model, result.theta, result)
