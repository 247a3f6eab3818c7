import json
from dataclasses import replace

import numpy as np
import pytest

from lobe_registration.errors import ArgumentError, FormatError, InvariantError, ManifestError
from lobe_registration.io.formats import write_surface
from lobe_registration.io.manifest import (
    MANIFEST_NAME,
    Case,
    LobePair,
    load_case,
    parse_manifest,
    save_case,
)


def _octahedron_case(octahedron):
    return Case("octahedron", {"upper": LobePair("upper", octahedron, octahedron)})


def _edit_manifest(path, edit):
    raw = json.loads(path.read_text())
    edit(raw)
    path.write_text(json.dumps(raw))


def _files(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_save_and_load_round_trip(tmp_path, small_case):
    path = save_case(small_case, tmp_path / "first")
    assert path.name == MANIFEST_NAME
    loaded = load_case(path)
    assert loaded.case_id == small_case.case_id
    assert list(loaded.lobes) == list(small_case.lobes)
    assert loaded.ground_truth == json.loads(json.dumps(small_case.ground_truth))
    for label, pair in small_case.lobes.items():
        again = loaded.lobes[label]
        assert np.array_equal(again.inflated.points, pair.inflated.points)
        assert np.array_equal(again.deflated.tet_mesh.tetrahedra, pair.deflated.tet_mesh.tetrahedra)
        assert again.landmarks.kinds == pair.landmarks.kinds

    save_case(loaded, tmp_path / "second")
    assert _files(tmp_path / "first") == _files(tmp_path / "second")


def test_missing_centerline_field(tmp_path, octahedron):
    path = save_case(_octahedron_case(octahedron), tmp_path)
    _edit_manifest(path, lambda raw: raw["lobes"][0]["inflated"].pop("centerline"))
    with pytest.raises(ManifestError, match="missing field") as exc:
        load_case(path)
    assert exc.value.field == "lobes[0].inflated.centerline"


def test_unknown_field_rejected(tmp_path, octahedron):
    path = save_case(_octahedron_case(octahedron), tmp_path)
    _edit_manifest(path, lambda raw: raw.update(owner="someone"))
    with pytest.raises(ManifestError) as exc:
        parse_manifest(path)
    assert exc.value.field == "owner"


def test_referenced_file_must_exist(tmp_path, octahedron):
    path = save_case(_octahedron_case(octahedron), tmp_path)
    (tmp_path / "upper" / "deflated_tetmesh.txt").unlink()
    with pytest.raises(ManifestError, match="not found") as exc:
        load_case(path)
    assert exc.value.field == "lobes[0].deflated.tet_mesh"


def test_duplicate_labels(tmp_path, octahedron):
    path = save_case(_octahedron_case(octahedron), tmp_path)
    _edit_manifest(path, lambda raw: raw["lobes"].append(raw["lobes"][0]))
    with pytest.raises(ManifestError, match="duplicate lobe labels"):
        parse_manifest(path)


def test_any_non_empty_label_is_accepted(tmp_path, octahedron):
    middle = replace(octahedron, label="middle")
    path = save_case(Case("three-lobes", {"middle": LobePair("middle", middle, middle)}), tmp_path)
    loaded = load_case(path)
    assert list(loaded.lobes) == ["middle"]
    assert loaded.lobes["middle"].inflated.label == "middle"
    with pytest.raises(ArgumentError, match="non-empty"):
        replace(octahedron, label="")


def test_open_surface_is_an_invariant_error(tmp_path, octahedron):
    path = save_case(_octahedron_case(octahedron), tmp_path)
    surface = octahedron.surface
    open_surface = type(surface)(surface.vertices, surface.triangles[1:])
    write_surface(tmp_path / "upper" / "inflated_surface.txt", open_surface)
    with pytest.raises(InvariantError) as exc:
        load_case(path)
    assert exc.value.invariant == "closed_manifold"


def test_broken_model_file_is_a_format_error(tmp_path, octahedron):
    path = save_case(_octahedron_case(octahedron), tmp_path)
    (tmp_path / "upper" / "deflated_centerline.json").write_text("[]")
    with pytest.raises(FormatError, match="nodes"):
        load_case(path)


def test_malformed_manifest_json(tmp_path):
    path = tmp_path / MANIFEST_NAME
    path.write_text('{\n  "case_id": \n')
    with pytest.raises(ManifestError, match=f"{MANIFEST_NAME}:"):
        parse_manifest(path)


def test_manifest_config_is_kept(tmp_path, octahedron):
    case = _octahedron_case(octahedron)
    case.config = {"alpha": 2.0}
    loaded = load_case(save_case(case, tmp_path))
    assert loaded.config == {"alpha": 2.0}
    assert loaded.landmarks == {}
