"""Case manifests: which files make up the lobes of one case.

A manifest is a JSON object::

    {
      "case_id": "phantom-0001",
      "lobes": [
        {
          "label": "upper",
          "inflated": {"surface": "...", "tet_mesh": "...", "centerline": "..."},
          "deflated": {"surface": "...", "tet_mesh": "...", "centerline": "..."},
          "landmarks": "upper/landmarks.csv"
        }
      ],
      "config": {"alpha": 2.0}
    }

Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from lobe_registration.errors import ManifestError, OutputError
from lobe_registration.geometry.model import LandmarkSet, LobeModel
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

MANIFEST_NAME = "case.json"


class ModelPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    surface: str
    tet_mesh: str
    centerline: str


class LobeEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: str
    inflated: ModelPaths
    deflated: ModelPaths
    landmarks: str | None = None

    @field_validator("label")
    @classmethod
    def label_not_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("lobe label must be non-empty")
        return value


class CaseManifest(BaseModel):
    """Validated manifest content."""

    model_config = ConfigDict(extra="forbid")

    case_id: str
    lobes: list[LobeEntry]
    config: dict[str, Any] = {}
    ground_truth: str | None = None

    @model_validator(mode="after")
    def unique_labels(self) -> "CaseManifest":
        if not self.lobes:
            raise ValueError("a case needs at least one lobe")
        labels = [lobe.label for lobe in self.lobes]
        duplicates = sorted({x for x in labels if labels.count(x) > 1})
        if duplicates:
            raise ValueError(f"duplicate lobe labels: {duplicates}")
        return self


@dataclass(eq=False)
class LobePair:
    label: str
    inflated: LobeModel
    deflated: LobeModel
    landmarks: LandmarkSet | None = None


@dataclass(eq=False)
class Case:
    """Loaded case: validated lobe models keyed by label, in manifest order."""

    case_id: str
    lobes: dict[str, LobePair]
    config: dict[str, Any] = field(default_factory=dict)
    ground_truth: dict[str, Any] | None = None

    @property
    def pairs(self) -> dict[str, tuple[LobeModel, LobeModel]]:
        return {k: (v.inflated, v.deflated) for k, v in self.lobes.items()}

    @property
    def landmarks(self) -> dict[str, LandmarkSet]:
        return {k: v.landmarks for k, v in self.lobes.items() if v.landmarks is not None}


def _location(loc: tuple[Any, ...]) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def parse_manifest(path: str | Path) -> CaseManifest:
    """Read and validate a manifest without touching the files it names.

    Raises:
        ManifestError: On unreadable JSON or a missing/invalid field, naming
            the field.

    """
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(str(p), exc.strerror or str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(str(p), exc.msg, line=exc.lineno) from exc
    try:
        return CaseManifest.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = _location(tuple(first["loc"]))
        message = "missing field" if first["type"] == "missing" else first["msg"]
        raise ManifestError(
            str(p), f"{where}: {message}" if where else message, field=where or None
        ) from exc


def _resolve(manifest_path: Path, relative: str, where: str) -> Path:
    resolved = manifest_path.parent / relative
    if not resolved.is_file():
        raise ManifestError(str(manifest_path), f"{where}: file {relative!r} not found", field=where)
    return resolved


def read_model(directory: str | Path, paths: ModelPaths, label: str) -> LobeModel:
    """Read the three files of one lobe model without validating it."""
    base = Path(directory)
    return LobeModel(
        surface=read_surface(base / paths.surface),
        tet_mesh=read_tet_mesh(base / paths.tet_mesh),
        centerline=read_centerline(base / paths.centerline),
        label=label,
    )


def _load_model(manifest_path: Path, paths: ModelPaths, label: str, where: str) -> LobeModel:
    for name in ("surface", "tet_mesh", "centerline"):
        _resolve(manifest_path, getattr(paths, name), f"{where}.{name}")
    model = read_model(manifest_path.parent, paths, label)
    model.validate()
    return model


def load_case(path: str | Path) -> Case:
    """Load every lobe of a case and enforce the lobe model invariants.

    Raises:
        ManifestError: Invalid manifest or a referenced file that does not exist.
        FormatError: A referenced file does not parse.
        InvariantError: A loaded model breaks a named invariant.
        BindingError: A centerline node lies outside its lobe mesh.

    """
    p = Path(path)
    manifest = parse_manifest(p)
    lobes: dict[str, LobePair] = {}
    for i, entry in enumerate(manifest.lobes):
        where = f"lobes[{i}]"
        inflated = _load_model(p, entry.inflated, entry.label, f"{where}.inflated")
        deflated = _load_model(p, entry.deflated, entry.label, f"{where}.deflated")
        landmarks = None
        if entry.landmarks is not None:
            landmarks = read_landmarks(_resolve(p, entry.landmarks, f"{where}.landmarks"))
        lobes[entry.label] = LobePair(entry.label, inflated, deflated, landmarks)

    ground_truth = None
    if manifest.ground_truth is not None:
        truth_path = _resolve(p, manifest.ground_truth, "ground_truth")
        try:
            ground_truth = json.loads(truth_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ManifestError(str(truth_path), exc.msg, line=exc.lineno) from exc
    logger.info(f"Loaded case {manifest.case_id} with lobes {list(lobes)}")
    return Case(manifest.case_id, lobes, dict(manifest.config), ground_truth)


def model_paths(label: str, state: str) -> ModelPaths:
    """Canonical relative file names of one lobe state."""
    return ModelPaths(
        surface=f"{label}/{state}_surface.txt",
        tet_mesh=f"{label}/{state}_tetmesh.txt",
        centerline=f"{label}/{state}_centerline.json",
    )


def save_model(directory: Path, paths: ModelPaths, model: LobeModel) -> None:
    write_surface(directory / paths.surface, model.surface)
    write_tet_mesh(directory / paths.tet_mesh, model.tet_mesh)
    write_centerline(directory / paths.centerline, model.centerline)


def write_json(path: Path, payload: Any) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(str(path), exc.strerror or str(exc)) from exc


def save_case(case: Case, directory: str | Path) -> Path:
    """Write a case in canonical form and return the manifest path.

    Saving a loaded case again reproduces every file byte for byte.
    """
    out = Path(directory)
    entries = []
    for label, pair in case.lobes.items():
        entry = LobeEntry(
            label=label,
            inflated=model_paths(label, "inflated"),
            deflated=model_paths(label, "deflated"),
            landmarks=f"{label}/landmarks.csv" if pair.landmarks is not None else None,
        )
        save_model(out, entry.inflated, pair.inflated)
        save_model(out, entry.deflated, pair.deflated)
        if pair.landmarks is not None and entry.landmarks is not None:
            write_landmarks(out / entry.landmarks, pair.landmarks)
        entries.append(entry)

    truth = None
    if case.ground_truth is not None:
        truth = "ground_truth.json"
        write_json(out / truth, case.ground_truth)
    manifest = CaseManifest(
        case_id=case.case_id, lobes=entries, config=dict(case.config), ground_truth=truth
    )
    path = out / MANIFEST_NAME
    write_json(path, manifest.model_dump(mode="json"))
    logger.bind(event="report_written").info(f"Saved case {case.case_id} to {path}")
    return path
