"""Vector-field exports of a deformation for external plotting tools."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from lobe_registration.analysis.decomposition import DeformationField
from lobe_registration.errors import ArgumentError
from lobe_registration.io.reports import write_csv

FIELD_COMPONENTS = ("displacement", "contraction", "rotation")
FIELD_COLUMNS = ["index", "kind", "x", "y", "z", "vx", "vy", "vz", "magnitude"]


def field_vectors(field: DeformationField, component: str, epsilon: float) -> np.ndarray:
    """``(P, 3)`` vectors of one component of ``field``."""
    if component == "displacement":
        return field.displacement
    s, r = field.components(epsilon)
    if component == "contraction":
        return s
    if component == "rotation":
        return r
    raise ArgumentError(f"unknown field component {component!r}; expected one of {FIELD_COMPONENTS}")


def export_field_visualization(
    field: DeformationField,
    out_dir: str | Path,
    components: Iterable[str] = FIELD_COMPONENTS,
    *,
    prefix: str = "field",
    epsilon: float = 1e-6,
) -> list[Path]:
    """Write one CSV per component, anchored at the rest positions.

    Rows are in the field's point order, so the contraction and rotation
    files sum to the displacement file record by record.

    Returns:
        The written paths, in ``components`` order.

    """
    components = list(components)
    unknown = [c for c in components if c not in FIELD_COMPONENTS]
    if unknown:
        raise ArgumentError(f"unknown field components {unknown}; expected {list(FIELD_COMPONENTS)}")
    written = []
    for component in components:
        vectors = field_vectors(field, component, epsilon)
        magnitude = np.linalg.norm(vectors, axis=1)
        rows = (
            {
                "index": i,
                "kind": field.kinds[i],
                "x": float(field.rest[i, 0]),
                "y": float(field.rest[i, 1]),
                "z": float(field.rest[i, 2]),
                "vx": float(vectors[i, 0]),
                "vy": float(vectors[i, 1]),
                "vz": float(vectors[i, 2]),
                "magnitude": float(magnitude[i]),
            }
            for i in range(len(field))
        )
        written.append(write_csv(Path(out_dir) / f"{prefix}_{component}.csv", FIELD_COLUMNS, rows))
    return written
