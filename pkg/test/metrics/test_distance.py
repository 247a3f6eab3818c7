import math
from itertools import permutations, product

import numpy as np
import pytest

from lobe_registration.errors import ArgumentError
from lobe_registration.metrics.distance import (
    NORMAL_SEARCH_CANDIDATES,
    centerline_distances,
    centerline_one_way_distance,
    closest_points_on_segments,
    compute_metric_report,
    hausdorff_distance,
    mean_distance,
    normal_aware_closest_point,
    normal_aware_matches,
    surface_distance,
    target_registration_error,
)


def _unit(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _brute_force_matches(points, normals, tv, tn, gamma):
    out = []
    for p, n in zip(points, normals):
        score = np.linalg.norm(tv - p, axis=1) + gamma * (1.0 - tn @ n)
        out.append(int(np.lexsort((np.arange(len(tv)), score))[0]))
    return np.array(out)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 25.0])
def test_normal_aware_matches_equal_exhaustive_search(rng, gamma):
    tv = rng.normal(size=(4 * NORMAL_SEARCH_CANDIDATES, 3)) * 10
    tn = _unit(rng.normal(size=tv.shape))
    points = rng.normal(size=(50, 3)) * 10
    normals = _unit(rng.normal(size=points.shape))
    match, dist = normal_aware_matches(points, normals, tv, tn, gamma)
    expected = _brute_force_matches(points, normals, tv, tn, gamma)
    assert match.tolist() == expected.tolist()
    assert dist == pytest.approx(np.linalg.norm(tv[expected] - points, axis=1))


def test_opposite_normals_are_avoided():
    tv = np.array([[0.0, 0.0, 0.1], [0.0, 0.0, 1.0]])
    tn = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
    match, _ = normal_aware_matches([[0, 0, 0]], [[0, 0, 1]], tv, tn, gamma=1.0)
    assert match.tolist() == [1]
    match, _ = normal_aware_matches([[0, 0, 0]], [[0, 0, 1]], tv, tn, gamma=0.0)
    assert match.tolist() == [0]


def test_ties_go_to_lowest_index():
    tv = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    tn = np.array([[0, 0, 1.0], [0, 0, 1.0]])
    match, dist = normal_aware_matches([[0, 0, 0]], [[0, 0, 1.0]], tv, tn, gamma=1.0)
    assert match.tolist() == [0]
    assert dist.tolist() == [1.0]


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_ties_beyond_the_candidate_count(rng, gamma):
    # the 48 signed permutations of (1, 4, 8) all sit exactly 9 from the origin
    signs = np.array(list(product((1.0, -1.0), repeat=3)))
    base = np.vstack([signs * p for p in permutations((1.0, 4.0, 8.0))])
    assert len(base) > NORMAL_SEARCH_CANDIDATES
    tv = np.vstack([rng.permutation(base), [[40.0, 0.0, 0.0]]])
    tn = np.tile([0.0, 0.0, 1.0], (len(tv), 1))
    match, dist = normal_aware_matches([[0.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]], tv, tn, gamma)
    assert match.tolist() == [0]
    assert dist.tolist() == [9.0]


def test_closest_point_pair(octahedron):
    pair = normal_aware_closest_point(
        [1.5, 0.0, 0.0], [1.0, 0.0, 0.0], octahedron.surface, gamma=1.0, query_index=7
    )
    assert (pair.query_index, pair.match_index) == (7, 0)
    assert pair.distance == pytest.approx(0.5)


def test_invalid_inputs_rejected():
    with pytest.raises(ArgumentError, match="no vertices"):
        normal_aware_matches(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((0, 3)), np.zeros((0, 3)), 1.0)
    with pytest.raises(ArgumentError, match="gamma"):
        normal_aware_matches(np.zeros((1, 3)), np.zeros((1, 3)), np.ones((1, 3)), np.ones((1, 3)), -1.0)
    with pytest.raises(ArgumentError, match="landmark count mismatch"):
        target_registration_error(np.zeros((2, 3)), np.zeros((3, 3)))


def test_surface_distance_is_zero_on_identity(octahedron):
    assert surface_distance(octahedron.surface, octahedron.surface) == 0.0


def test_scaled_surface_distances(octahedron):
    bigger = octahedron.surface.with_vertices(octahedron.surface.vertices * 1.5)
    # normals agree vertex by vertex, so each direction contributes 0.5
    assert surface_distance(octahedron.surface, bigger) == pytest.approx(1.0)
    assert hausdorff_distance(octahedron.surface, bigger) == pytest.approx(0.5)
    assert mean_distance(octahedron.surface, bigger) == pytest.approx(0.5)


def test_hausdorff_and_mean_against_brute_force(rng):
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(30, 3)) + 0.3
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    assert hausdorff_distance(a, b) == pytest.approx(max(d.min(axis=1).max(), d.min(axis=0).max()))
    assert mean_distance(a, b) == pytest.approx(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))


def test_closest_points_on_segments():
    starts = np.array([[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]])
    ends = np.array([[2.0, 0.0, 0.0], [5.0, 5.0, 5.0]])
    seg, t, dist = closest_points_on_segments(
        [[1.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [5.0, 5.0, 6.0]], starts, ends
    )
    assert seg.tolist() == [0, 0, 1]
    assert t == pytest.approx([0.5, 0.0, 0.0])
    assert dist == pytest.approx([1.0, 1.0, 1.0])


def test_centerline_distance_ignores_missing_target_branches(octahedron):
    tree = octahedron.centerline
    pruned = tree.subtree([True, True, True, False])
    # every pruned node lies on the full tree
    assert centerline_one_way_distance(tree, pruned) == 0.0
    # the reverse direction sees the missing branch tip
    # node 3 projects onto the junction
    assert centerline_distances(pruned, tree).max() == pytest.approx(math.sqrt(0.08))


def test_metric_report_identity(octahedron):
    report = compute_metric_report(
        octahedron.surface, octahedron.surface, octahedron.centerline, octahedron.centerline
    )
    assert report.mean_distance == 0.0
    assert report.hausdorff == 0.0
    assert report.centerline_max == 0.0
    assert math.isnan(report.tre_surface_mean)


def test_metric_report_landmarks(octahedron):
    source = np.zeros((2, 3))
    target = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
    report = compute_metric_report(
        octahedron.surface,
        octahedron.surface,
        octahedron.centerline,
        octahedron.centerline,
        surface_landmarks=(source, target),
    )
    assert report.tre_surface == (5.0, 1.0)
    assert report.tre_surface_mean == pytest.approx(3.0)
    assert report.tre_surface_sd == pytest.approx(2.0)
    assert report.tre_bronchus == ()
