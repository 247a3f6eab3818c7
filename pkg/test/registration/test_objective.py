import numpy as np
import pytest

from lobe_registration.config import RegistrationConfig
from lobe_registration.errors import ArgumentError
from lobe_registration.geometry.grid import build_deformation_grid
from lobe_registration.geometry.laplacian import build_laplacian
from lobe_registration.geometry.tetmesh import bind_barycentric
from lobe_registration.registration.objective import (
    FrozenObjective,
    ObjectiveContext,
    compute_correspondences,
    evaluate_objective,
    make_regularizer,
)


def _affine_basis(model):
    v = model.points - model.hilum
    return np.hstack([v, np.ones((len(v), 1))])


def test_identity_has_zero_objective(octahedron):
    value = evaluate_objective(octahedron, octahedron, RegistrationConfig())
    assert value.total == 0.0
    assert value.surface_distance == 0.0
    assert value.centerline_distance == 0.0


def test_shifted_target_terms(octahedron):
    target = octahedron.translated([0.0, 0.0, 0.1])
    value = evaluate_objective(octahedron, target, RegistrationConfig(alpha=2.0))
    # both surface directions contribute 0.1, every target node sits 0.1 above the tree
    assert value.surface_distance == pytest.approx(0.2)
    assert value.surface_term == pytest.approx(0.04)
    assert value.centerline_distance == pytest.approx(0.1)
    assert value.centerline_term == pytest.approx(0.02)
    assert value.total == pytest.approx(0.06)


def test_alpha_zero_drops_centerline_rows(octahedron):
    target = octahedron.translated([0.0, 0.0, 0.1])
    value = evaluate_objective(octahedron, target, RegistrationConfig(alpha=0.0))
    assert value.centerline_term == 0.0
    ctx = ObjectiveContext.for_models(octahedron, target, RegistrationConfig(alpha=0.0))
    corr = compute_correspondences(octahedron.points, ctx)
    assert corr.operator.shape == (12, octahedron.points.shape[0])
    assert not corr.centerline.any()


def test_regularization_term_is_the_weighted_sum(octahedron):
    laplacian = np.array([[1.0, -1.0], [-1.0, 1.0]])
    u = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    config = RegistrationConfig(beta=4.0)
    value = evaluate_objective(
        octahedron, octahedron, config, control_displacement=u, laplacian=laplacian
    )
    # beta * ||L u||^2 = 4 * 2
    assert value.regularization_term == pytest.approx(8.0)
    mean = evaluate_objective(
        octahedron,
        octahedron,
        RegistrationConfig(beta=4.0, regularization_normalization="mean"),
        control_displacement=u,
        laplacian=laplacian,
    )
    assert mean.regularization_term == pytest.approx(4.0)


def test_default_regularizer_keeps_beta(rng):
    regularizer = make_regularizer(np.eye(10), 2.0)
    assert regularizer.weight == 2.0
    u = rng.normal(size=(10, 3))
    assert regularizer.value(u) == pytest.approx(2.0 * np.sum(u * u))
    assert make_regularizer(np.eye(10), 2.0, "mean").weight == pytest.approx(0.2)


def test_points_shape_checked(octahedron):
    with pytest.raises(ArgumentError, match="expected points of shape"):
        evaluate_objective(octahedron, octahedron, RegistrationConfig(), points=np.zeros((3, 3)))


def test_gradient_matches_finite_differences(octahedron, rng):
    target = octahedron.with_points(octahedron.points * 1.2 + [0.05, -0.1, 0.2])
    config = RegistrationConfig(alpha=2.0)
    ctx = ObjectiveContext.for_models(octahedron, target, config, target_offset=octahedron.hilum)
    basis = _affine_basis(octahedron)
    theta = np.vstack([np.eye(3), np.zeros((1, 3))]) + rng.normal(scale=0.05, size=(4, 3))
    base = np.zeros_like(octahedron.points)
    corr = compute_correspondences(base + basis @ theta, ctx)
    regularizer = make_regularizer(rng.normal(size=(5, 4)), 0.3)
    frozen = FrozenObjective(corr, base, basis, config.alpha, regularizer)

    grad = frozen.gradient(theta)
    numeric = np.zeros_like(theta)
    h = 1e-6
    for idx in np.ndindex(theta.shape):
        step = np.zeros_like(theta)
        step[idx] = h
        numeric[idx] = (frozen.value(theta + step) - frozen.value(theta - step)) / (2 * h)
    assert grad == pytest.approx(numeric, rel=1e-4, abs=1e-7)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grid_gradient_matches_finite_differences(small_phantom, seed):
    state = small_phantom.inflated
    config = RegistrationConfig()
    grid = build_deformation_grid(state, (2, 2, 2), config.grid_margin)
    basis = bind_barycentric(state.points, grid).matrix(grid.n_vertices).toarray()
    laplacian = build_laplacian(grid.n_vertices, grid.edges(), "uniform")
    regularizer = make_regularizer(laplacian, config.beta)
    ctx = ObjectiveContext.for_models(state, small_phantom.deflated, config)
    theta = np.random.default_rng(seed).normal(scale=0.3, size=(grid.n_vertices, 3))
    base = state.points.copy()
    corr = compute_correspondences(base + basis @ theta, ctx)
    frozen = FrozenObjective(corr, base, basis, config.alpha, regularizer)

    grad = frozen.gradient(theta)
    numeric = np.zeros_like(theta)
    h = 1e-5
    for idx in np.ndindex(theta.shape):
        step = np.zeros_like(theta)
        step[idx] = h
        numeric[idx] = (frozen.value(theta + step) - frozen.value(theta - step)) / (2 * h)
    assert grad == pytest.approx(numeric, rel=1e-4, abs=1e-6)
