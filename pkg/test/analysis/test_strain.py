import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

from lobe_registration.analysis.strain import (
    aggregate_reports,
    cauchy_strain,
    compare_regions,
    regress_strain,
    sample_branch,
    strain_report_from_models,
)
from lobe_registration.config import AnalysisConfig
from lobe_registration.errors import ArgumentError, EmptyReportError, RankDeficiencyError
from lobe_registration.geometry.centerline import NodeKind
from lobe_registration.phantom.generator import generate_phantom_lobe, prune_terminals


def _scaled(model, k):
    return model.with_points(model.hilum + k * (model.points - model.hilum))


def test_cauchy_strain():
    assert cauchy_strain(10.0, -2.5) == -0.25
    with pytest.raises(ArgumentError, match="positive"):
        cauchy_strain(0.0, 1.0)


def test_regression_on_exact_line():
    fit = regress_strain([1.0, 2.0, 4.0], [0.5, 1.0, 2.0])
    assert fit.slope == pytest.approx(0.5)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.residual == pytest.approx(0.0, abs=1e-12)


def test_regression_needs_two_distances():
    with pytest.raises(RankDeficiencyError, match="two distinct"):
        regress_strain([3.0, 3.0], [1.0, 2.0])
    with pytest.raises(ArgumentError, match="distances"):
        regress_strain([1.0, 2.0], [1.0])


def test_anova_matches_scipy(rng):
    a = rng.normal(0.3, 0.05, size=12)
    b = rng.normal(0.4, 0.05, size=9)
    result = compare_regions(a, b)
    expected = stats.f_oneway(a, b)
    assert result.f_statistic == pytest.approx(expected.statistic)
    assert result.p_value == pytest.approx(expected.pvalue)
    assert (result.df_between, result.df_within) == (1, 19)


def test_anova_without_within_group_variance():
    same = compare_regions([0.3, 0.3], [0.3, 0.3, 0.3])
    assert (same.f_statistic, same.p_value) == (0.0, 1.0)
    different = compare_regions([0.3, 0.3], [0.4, 0.4])
    assert math.isinf(different.f_statistic)
    assert different.p_value == 0.0
    with pytest.raises(ArgumentError, match="at least two"):
        compare_regions([0.3], [0.4, 0.5])


def test_sample_branch_walks_to_the_surface(octahedron):
    sampling = sample_branch(octahedron.centerline, 2, octahedron.surface)
    assert sampling.path == (0, 1, 2)
    assert sampling.junctions == (1,)
    # ray through (0.3, 0.2, 0) meets x + y = 1
    assert sampling.surface_point == pytest.approx([0.6, 0.4, 0.0])


@pytest.mark.parametrize(
    "reference_state, expected", [("deflated", 0.25), ("inflated", 0.2)]
)
def test_uniform_scale_strain(octahedron, reference_state, expected):
    deformed = _scaled(octahedron, 0.8)
    config = AnalysisConfig(reference_state=reference_state)
    report = strain_report_from_models(octahedron, deformed, deformed.centerline, config)
    assert len(report.branches) == 2
    assert report.skipped == 0
    assert report.bronchus_mean == pytest.approx(expected)
    assert report.parenchyma_mean == pytest.approx(expected)
    assert report.bronchus_sd == pytest.approx(0.0, abs=1e-12)
    assert report.comparison is not None


def test_branch_pooling_uses_slopes(octahedron):
    deformed = _scaled(octahedron, 0.8)
    report = strain_report_from_models(
        octahedron, deformed, deformed.centerline, AnalysisConfig(pooling="branches")
    )
    assert report.pooling == "branches"
    assert [b.bronchus.slope for b in report.branches] == pytest.approx([0.25, 0.25])
    assert report.bronchus_mean == pytest.approx(0.25)
    assert report.parenchyma_mean == pytest.approx(0.25)


def test_phantom_strains_are_recovered(small_phantom):
    spec = small_phantom.spec
    report = strain_report_from_models(
        small_phantom.inflated, small_phantom.truth, small_phantom.truth.centerline
    )
    assert len(report.branches) == 4
    assert np.allclose(report.region_strains("bronchus"), spec.bronchus_strain)
    # the blend band lowers the strain of short surface segments slightly
    assert report.parenchyma_mean == pytest.approx(spec.parenchyma_strain, abs=0.04)
    assert report.parenchyma_mean > report.bronchus_mean
    assert report.comparison.p_value < 0.05


def test_strains_are_rotation_invariant(small_phantom):
    truth = small_phantom.truth
    turn = Rotation.from_rotvec([0.2, -0.4, 0.3]).as_matrix()
    rotated = truth.with_points((truth.points - truth.hilum) @ turn.T + truth.hilum)
    before = strain_report_from_models(small_phantom.inflated, truth, truth.centerline)
    after = strain_report_from_models(small_phantom.inflated, rotated, rotated.centerline)
    assert [s.strain for s in after.samples] == pytest.approx([s.strain for s in before.samples])


def test_pruned_source_closes_each_branch_once(small_phantom):
    source = small_phantom.inflated
    pruned = prune_terminals(source.centerline, 0.5, seed=1)
    source = source.with_centerline(pruned)
    deformed = small_phantom.truth.with_centerline(
        prune_terminals(small_phantom.truth.centerline, 0.5, seed=1)
    )
    target = small_phantom.truth.centerline
    report = strain_report_from_models(source, deformed, target)
    closing = [b.terminal for b in report.branches]
    assert len(closing) == len(set(closing)) == len(pruned.terminals)
    assert all(pruned.kinds[node] is NodeKind.TERMINAL for node in closing)
    assert report.skipped == len(target.terminals) - len(pruned.terminals)


@pytest.mark.parametrize("strain", [0.2, 0.35])
def test_homogeneous_contraction_has_no_regional_difference(small_spec, strain):
    spec = small_spec.model_copy(update={"bronchus_strain": strain, "parenchyma_strain": strain})
    phantom = generate_phantom_lobe(spec)
    report = strain_report_from_models(phantom.inflated, phantom.truth, phantom.truth.centerline)
    assert report.bronchus_mean == pytest.approx(report.parenchyma_mean, abs=1e-3)
    assert report.bronchus_mean == pytest.approx(strain, abs=1e-3)


def test_empty_report_raises(octahedron):
    root_only = octahedron.centerline.subtree([True, False, False, False])
    with pytest.raises(EmptyReportError, match="no branches"):
        strain_report_from_models(octahedron.with_centerline(root_only), octahedron, root_only)
    with pytest.raises(EmptyReportError, match="no strain reports"):
        aggregate_reports([])


def test_aggregate_reports(octahedron):
    reports = [
        strain_report_from_models(octahedron, _scaled(octahedron, k), _scaled(octahedron, k).centerline)
        for k in (0.8, 0.5)
    ]
    summary = aggregate_reports(reports)
    assert summary.n_cases == 2
    # deflated-referenced strain of a scale k is 1 / k - 1
    assert summary.bronchus_mean == pytest.approx(0.625)
    assert summary.bronchus_sd == pytest.approx(0.375)
    assert np.array(summary.case_means) == pytest.approx(np.array([[0.25, 0.25], [1.0, 1.0]]))
