import json

import numpy as np
import pytest

from lobe_registration.errors import FormatError, InvariantError, OutputError
from lobe_registration.geometry.model import LandmarkSet
from lobe_registration.io.formats import (
    read_centerline,
    read_landmarks,
    read_surface,
    read_tet_mesh,
    write_centerline,
    write_landmarks,
    write_surface,
    write_tet_mesh,
)


def _landmarks():
    return LandmarkSet(
        kinds=("surface", "bronchus"),
        indices=[3, -1],
        source=[[0.1, 1 / 3, 2.0], [1e-17, -5.5, 7.25]],
        target=[[0.0, 0.0, 0.0], [np.pi, np.e, -1.0]],
    )


@pytest.mark.parametrize(
    "name, writer, reader, attr",
    [
        ("surface.txt", write_surface, read_surface, "surface"),
        ("tetmesh.txt", write_tet_mesh, read_tet_mesh, "tet_mesh"),
        ("centerline.json", write_centerline, read_centerline, "centerline"),
    ],
)
def test_model_files_round_trip_byte_for_byte(tmp_path, octahedron, name, writer, reader, attr):
    scaled = octahedron.with_points(octahedron.points * (1 / 3) + 0.1)
    first = tmp_path / name
    second = tmp_path / f"again_{name}"
    writer(first, getattr(scaled, attr))
    writer(second, reader(first))
    assert first.read_bytes() == second.read_bytes()


def test_landmarks_round_trip(tmp_path):
    path = tmp_path / "landmarks.csv"
    write_landmarks(path, _landmarks())
    loaded = read_landmarks(path)
    assert loaded.kinds == ("surface", "bronchus")
    assert loaded.indices.tolist() == [3, -1]
    assert np.array_equal(loaded.source, _landmarks().source)
    write_landmarks(tmp_path / "again.csv", loaded)
    assert path.read_bytes() == (tmp_path / "again.csv").read_bytes()


def test_read_values_are_exact(tmp_path, octahedron):
    vertices = octahedron.surface.vertices * (1 / 3)
    path = tmp_path / "surface.txt"
    write_surface(path, octahedron.surface.with_vertices(vertices))
    assert np.array_equal(read_surface(path).vertices, vertices)


def test_comments_and_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "surface.txt"
    path.write_text(
        "# exported\nSURFACE v1\n\nvertices 3\n0 0 0\n1 0 0\n0 1 0\ntriangles 1\n0 1 2\n"
    )
    assert read_surface(path).n_triangles == 1


@pytest.mark.parametrize(
    "text, match",
    [
        ("MESH v1\n", r":1 \[header\]"),
        ("SURFACE v1\nvertices 2\n0 0 0\n", "unexpected end of file"),
        ("SURFACE v1\nvertices 1\n0 x 0\ntriangles 0\n", r":3 \[vertices\]: invalid number"),
        ("SURFACE v1\nvertices 1\n0 0\ntriangles 0\n", "expected 3 values"),
        ("SURFACE v1\nvertices x\n", "invalid vertices count"),
        ("SURFACE v1\nvertices 0\ntriangles 0\nextra\n", "trailing content"),
    ],
)
def test_malformed_surface(tmp_path, text, match):
    path = tmp_path / "surface.txt"
    path.write_text(text)
    with pytest.raises(FormatError, match=match):
        read_surface(path)


def test_surface_index_out_of_range_is_an_invariant(tmp_path):
    path = tmp_path / "surface.txt"
    path.write_text("SURFACE v1\nvertices 3\n0 0 0\n1 0 0\n0 1 0\ntriangles 1\n0 1 5\n")
    with pytest.raises(InvariantError, match="valid_indices"):
        read_surface(path)


def test_centerline_missing_field(tmp_path):
    path = tmp_path / "centerline.json"
    nodes = [
        {"position": [0, 0, 0], "kind": "root", "parent": None},
        {"position": [1, 0, 0], "kind": "terminal"},
    ]
    path.write_text(json.dumps({"format": "centerline v1", "nodes": nodes}))
    with pytest.raises(FormatError, match=r"\[nodes\[1\]\.parent\]") as exc:
        read_centerline(path)
    assert exc.value.field == "nodes[1].parent"


def test_centerline_with_two_roots(tmp_path):
    path = tmp_path / "centerline.json"
    nodes = [
        {"position": [0, 0, 0], "kind": "root", "parent": None},
        {"position": [1, 0, 0], "kind": "root", "parent": None},
    ]
    path.write_text(json.dumps({"format": "centerline v1", "nodes": nodes}))
    with pytest.raises(InvariantError, match="single_root"):
        read_centerline(path)


def test_centerline_bad_json(tmp_path):
    path = tmp_path / "centerline.json"
    path.write_text('{\n  "nodes": [\n')
    with pytest.raises(FormatError, match="centerline.json:2"):
        read_centerline(path)


def test_landmark_header_checked(tmp_path):
    path = tmp_path / "landmarks.csv"
    path.write_text("kind,index,x,y,z\n")
    with pytest.raises(FormatError, match=r":1 \[header\]"):
        read_landmarks(path)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError, match="missing.txt"):
        read_tet_mesh(tmp_path / "missing.txt")


def test_unwritable_target(tmp_path, octahedron):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(OutputError, match="blocker"):
        write_surface(blocker / "surface.txt", octahedron.surface)
