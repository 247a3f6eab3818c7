"""Text formats for surfaces, tetrahedral meshes, centerlines and landmarks.

Floats are written with 17 significant digits so that reading a file and
writing it again reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from lobe_registration.errors import FormatError, InvariantError, LobeRegistrationError, OutputError
from lobe_registration.geometry.centerline import CenterlineTree
from lobe_registration.geometry.model import LandmarkSet
from lobe_registration.geometry.surface import TriangleSurface
from lobe_registration.geometry.tetmesh import TetrahedralMesh

SURFACE_HEADER = "SURFACE v1"
TETMESH_HEADER = "TETMESH v1"
CENTERLINE_FORMAT = "centerline v1"
LANDMARK_COLUMNS = ["kind", "index", "sx", "sy", "sz", "tx", "ty", "tz"]


def fmt(value: float) -> str:
    """Format a float with 17 significant digits."""
    return format(float(value), ".17g")


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(str(path), exc.strerror or str(exc)) from exc


def _read_lines(path: Path) -> list[str]:
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(str(path), exc.strerror or str(exc)) from exc


class _LineReader:
    """Iterate over meaningful lines, remembering their numbers."""

    def __init__(self, path: Path) -> None:
        self.path = str(path)
        self._lines: Iterator[tuple[int, str]] = (
            (n, line.strip())
            for n, line in enumerate(_read_lines(path), start=1)
            if line.strip() and not line.lstrip().startswith("#")
        )
        self.line = 0

    def next(self, what: str) -> str:
        try:
            self.line, text = next(self._lines)
        except StopIteration:
            raise FormatError(self.path, f"unexpected end of file, expected {what}", field=what) from None
        return text

    def error(self, message: str, field: str | None = None) -> FormatError:
        return FormatError(self.path, message, line=self.line, field=field)

    def header(self, expected: str) -> None:
        text = self.next("header")
        if text != expected:
            raise self.error(f"expected header {expected!r}, got {text!r}", "header")

    def count(self, keyword: str) -> int:
        parts = self.next(keyword).split()
        if len(parts) != 2 or parts[0] != keyword:
            raise self.error(f"expected '{keyword} <count>'", keyword)
        try:
            value = int(parts[1])
        except ValueError:
            raise self.error(f"invalid {keyword} count {parts[1]!r}", keyword) from None
        if value < 0:
            raise self.error(f"negative {keyword} count", keyword)
        return value

    def rows(self, keyword: str, n: int, width: int, dtype: type) -> np.ndarray:
        out = np.zeros((n, width), dtype=dtype)
        for i in range(n):
            parts = self.next(keyword).split()
            if len(parts) != width:
                raise self.error(f"expected {width} values, got {len(parts)}", keyword)
            try:
                out[i] = [dtype(p) for p in parts]
            except ValueError:
                raise self.error(f"invalid number in {keyword} row", keyword) from None
        return out

    def finish(self) -> None:
        try:
            self.line, text = next(self._lines)
        except StopIteration:
            return
        raise self.error(f"unexpected trailing content {text!r}")


def _rows(values: np.ndarray, as_float: bool) -> str:
    if as_float:
        return "".join(" ".join(fmt(x) for x in row) + "\n" for row in values)
    return "".join(" ".join(str(int(x)) for x in row) + "\n" for row in values)


def write_surface(path: str | Path, surface: TriangleSurface) -> None:
    text = (
        f"{SURFACE_HEADER}\nvertices {surface.n_vertices}\n"
        + _rows(surface.vertices, True)
        + f"triangles {surface.n_triangles}\n"
        + _rows(surface.triangles, False)
    )
    _write_text(Path(path), text)


def read_surface(path: str | Path) -> TriangleSurface:
    """Read a surface file.

    Raises:
        FormatError: With line and field context on malformed input.

    """
    reader = _LineReader(Path(path))
    reader.header(SURFACE_HEADER)
    vertices = reader.rows("vertices", reader.count("vertices"), 3, float)
    triangles = reader.rows("triangles", reader.count("triangles"), 3, int)
    reader.finish()
    return _build(reader.path, TriangleSurface, vertices, triangles)


def write_tet_mesh(path: str | Path, mesh: TetrahedralMesh) -> None:
    smap = mesh.surface_vertex_map if mesh.surface_vertex_map is not None else np.zeros(0)
    text = (
        f"{TETMESH_HEADER}\nvertices {mesh.n_vertices}\n"
        + _rows(mesh.vertices, True)
        + f"tetrahedra {mesh.n_tetrahedra}\n"
        + _rows(mesh.tetrahedra, False)
        + f"surface_map {len(smap)}\n"
        + _rows(np.asarray(smap).reshape(-1, 1), False)
    )
    _write_text(Path(path), text)


def read_tet_mesh(path: str | Path) -> TetrahedralMesh:
    reader = _LineReader(Path(path))
    reader.header(TETMESH_HEADER)
    vertices = reader.rows("vertices", reader.count("vertices"), 3, float)
    tets = reader.rows("tetrahedra", reader.count("tetrahedra"), 4, int)
    smap = reader.rows("surface_map", reader.count("surface_map"), 1, int).reshape(-1)
    reader.finish()
    return _build(reader.path, TetrahedralMesh, vertices, tets, smap)


def _build(path: str, cls: type, *args: Any) -> Any:
    try:
        return cls(*args)
    except InvariantError:
        raise
    except (LobeRegistrationError, TypeError, ValueError) as exc:
        raise FormatError(path, str(exc)) from exc


def _json_dump(path: Path, payload: Any) -> None:
    _write_text(path, json.dumps(payload, indent=2) + "\n")


def _json_load(path: Path) -> Any:
    lines = _read_lines(path)
    try:
        return json.loads("\n".join(lines))
    except json.JSONDecodeError as exc:
        raise FormatError(str(path), exc.msg, line=exc.lineno) from exc


def write_centerline(path: str | Path, tree: CenterlineTree) -> None:
    nodes = [
        {
            "position": [float(x) for x in tree.positions[i]],
            "kind": str(tree.kinds[i]),
            "parent": None if tree.parents[i] < 0 else int(tree.parents[i]),
        }
        for i in range(tree.n_nodes)
    ]
    _json_dump(Path(path), {"format": CENTERLINE_FORMAT, "nodes": nodes})


def read_centerline(path: str | Path) -> CenterlineTree:
    p = Path(path)
    raw = _json_load(p)
    if not isinstance(raw, dict) or not isinstance(raw.get("nodes"), list):
        raise FormatError(str(p), "expected an object with a 'nodes' list", field="nodes")
    positions, kinds, parents = [], [], []
    for i, node in enumerate(raw["nodes"]):
        if not isinstance(node, dict):
            raise FormatError(str(p), f"node {i} is not an object", field=f"nodes[{i}]")
        for key in ("position", "kind", "parent"):
            if key not in node:
                raise FormatError(str(p), f"node {i} has no {key}", field=f"nodes[{i}].{key}")
        position = node["position"]
        if not isinstance(position, list) or len(position) != 3:
            raise FormatError(str(p), "position must be 3 numbers", field=f"nodes[{i}].position")
        positions.append(position)
        kinds.append(node["kind"])
        parents.append(-1 if node["parent"] is None else node["parent"])
    return _build(str(p), CenterlineTree, np.array(positions, dtype=np.float64), tuple(kinds), parents)


def write_landmarks(path: str | Path, landmarks: LandmarkSet) -> None:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LANDMARK_COLUMNS)
            for kind, index, s, t in zip(
                landmarks.kinds, landmarks.indices, landmarks.source, landmarks.target
            ):
                writer.writerow([kind, int(index), *(fmt(x) for x in s), *(fmt(x) for x in t)])
    except OSError as exc:
        raise OutputError(str(p), exc.strerror or str(exc)) from exc


def read_landmarks(path: str | Path) -> LandmarkSet:
    p = Path(path)
    lines = _read_lines(p)
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(str(p), "empty landmark file", line=1) from None
    if header != LANDMARK_COLUMNS:
        raise FormatError(str(p), f"expected columns {LANDMARK_COLUMNS}", line=1, field="header")
    kinds, indices, src, tgt = [], [], [], []
    for n, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(LANDMARK_COLUMNS):
            raise FormatError(str(p), f"expected {len(LANDMARK_COLUMNS)} columns", line=n)
        try:
            indices.append(int(row[1]))
            values = [float(x) for x in row[2:]]
        except ValueError:
            raise FormatError(str(p), "invalid number", line=n) from None
        kinds.append(row[0])
        src.append(values[:3])
        tgt.append(values[3:])
    return _build(
        str(p),
        LandmarkSet,
        tuple(kinds),
        np.array(indices, dtype=np.int64),
        np.array(src, dtype=np.float64).reshape(-1, 3),
        np.array(tgt, dtype=np.float64).reshape(-1, 3),
    )
