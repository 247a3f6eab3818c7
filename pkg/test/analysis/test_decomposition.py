import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lobe_registration.analysis.decomposition import (
    DeformationField,
    decompose_displacement,
    decompose_field,
)
from lobe_registration.errors import ArgumentError, UndefinedDirectionError


def test_components_sum_to_displacement(rng):
    rest = rng.normal(size=(50, 3)) * 20
    deformed = rest * 0.8 + rng.normal(size=(50, 3))
    s, r, valid = decompose_field(rest, deformed)
    assert valid.all()
    assert s + r == pytest.approx(deformed - rest)
    # s is radial
    assert np.allclose(np.cross(s, rest), 0.0, atol=1e-9)


def test_pure_rotation_has_no_contraction(rng):
    rest = rng.normal(size=(20, 3)) * 10
    deformed = Rotation.from_rotvec([0.1, 0.2, -0.3]).apply(rest)
    s, r, _ = decompose_field(rest, deformed)
    assert np.allclose(s, 0.0, atol=1e-9)
    assert r == pytest.approx(deformed - rest)


def test_pure_scale_has_no_rotation(rng):
    rest = rng.normal(size=(20, 3)) * 10
    s, r, _ = decompose_field(rest, rest * 0.7)
    assert s == pytest.approx(-0.3 * rest)
    assert np.allclose(r, 0.0, atol=1e-9)


def test_single_point_matches_field():
    s, r = decompose_displacement([3.0, 4.0, 0.0], [0.0, 4.0, 0.0])
    # |phi v| = 4, |v| = 5
    assert s == pytest.approx([-0.6, -0.8, 0.0])
    assert r == pytest.approx([-2.4, 0.8, 0.0])


def test_hilum_has_no_direction():
    with pytest.raises(UndefinedDirectionError, match="hilum"):
        decompose_displacement([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    s, r, valid = decompose_field([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert valid.tolist() == [False, True]
    assert s[0] == pytest.approx([0.0, 0.0, 0.0])
    assert r[0] == pytest.approx([1.0, 0.0, 0.0])


def test_field_from_models_is_hilum_relative(octahedron):
    shifted = octahedron.translated([5.0, 0.0, 0.0])
    field = DeformationField.from_models(
        octahedron.surface.vertices,
        octahedron.centerline.positions,
        octahedron.hilum,
        shifted.surface.vertices,
        shifted.centerline.positions,
        shifted.hilum,
    )
    assert len(field) == 6 + 4
    assert field.kinds.count("centerline") == 4
    # a rigid translation is no displacement once the hila are aligned
    assert np.allclose(field.displacement, 0.0)


def test_field_shape_mismatch():
    with pytest.raises(ArgumentError, match="same points"):
        DeformationField(np.zeros((2, 3)), np.zeros((2, 3)), ("surface",))
    with pytest.raises(ArgumentError, match="shapes differ"):
        decompose_field(np.zeros((2, 3)), np.zeros((3, 3)))
