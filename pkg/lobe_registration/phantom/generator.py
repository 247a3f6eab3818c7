"""Synthetic lobe phantoms with a known deflation.

A phantom lobe is an ellipsoid with a bifurcating bronchial tree rooted at
its centre (the hilum). The ground-truth deflation contracts every point
radially toward the hilum, with one strain inside the ball that holds the
bronchial tree and another in the parenchyma beyond it, then rotates the
lobe about the hilum. The deflated model is finally perturbed with surface
noise and loses some distal branches, the way a segmentation of a collapsed
lung does.

Strains are Cauchy strains relative to the deflated length: an inflated
radial segment is ``1 + e`` times as long as its deflated image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from lobe_registration.errors import FormatError, InvariantError, SpecError
from lobe_registration.geometry.centerline import CenterlineTree, NodeKind
from lobe_registration.geometry.model import LandmarkSet, LobeModel
from lobe_registration.geometry.surface import TriangleSurface, intersect_ray
from lobe_registration.geometry.tetmesh import TetrahedralMesh, bisect_edge
from lobe_registration.io.manifest import Case, LobePair

# Clearance required between the blend band and the surface along every terminal ray (mm)
SURFACE_CLEARANCE = 1.0
# Vertical gap between stacked phantom lobes (mm)
LOBE_GAP = 10.0


class PhantomSpec(BaseModel):
    """Geometry, deflation and degradation parameters of a phantom lobe."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    half_axes: tuple[float, float, float] = (50.0, 42.0, 36.0)
    surface_triangles: int = 500
    target_tetrahedra: int = 700
    depth: int = 5
    fan_out: int = 2
    branch_angle_deg: float = 32.0
    angle_decay: float = 0.75
    jitter_deg: float = 3.0
    trunk_direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    bronchus_fraction: float = 0.55
    bronchus_strain: float = 0.292
    parenchyma_strain: float = 0.395
    blend_width: float = 2.0
    rotation_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    rotation_deg: float = 15.0
    prune_fraction: float = 0.3
    noise: float = 0.2
    surface_landmarks: int = 12
    junction_landmarks: int = 12

    @field_validator("half_axes")
    @classmethod
    def positive_axes(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if min(value) <= 0:
            raise ValueError("half axes must be positive")
        return value

    @field_validator("surface_triangles")
    @classmethod
    def enough_triangles(cls, value: int) -> int:
        if value < 20:
            raise ValueError("at least 20 surface triangles are needed")
        return value

    @field_validator("depth", "target_tetrahedra")
    @classmethod
    def at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("fan_out")
    @classmethod
    def branching(cls, value: int) -> int:
        if value < 2:
            raise ValueError("junctions need at least two children")
        return value

    @field_validator("bronchus_fraction")
    @classmethod
    def inside_lobe(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("must be in (0, 1)")
        return value

    @field_validator("bronchus_strain", "parenchyma_strain")
    @classmethod
    def strain_range(cls, value: float) -> float:
        if value <= -1:
            raise ValueError("strain must be greater than -1")
        return value

    @field_validator("prune_fraction")
    @classmethod
    def prune_range(cls, value: float) -> float:
        if not 0 <= value < 1:
            raise ValueError("prune fraction must be in [0, 1)")
        return value

    @field_validator("rotation_axis", "trunk_direction")
    @classmethod
    def non_zero(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if np.linalg.norm(value) == 0:
            raise ValueError("direction must be non-zero")
        return value

    @field_validator("blend_width", "noise", "jitter_deg", "angle_decay")
    @classmethod
    def non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @field_validator("surface_landmarks", "junction_landmarks")
    @classmethod
    def non_negative_count(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @property
    def bronchus_radius(self) -> float:
        """Hilum distance of the terminals, which bounds the bronchus region."""
        return self.bronchus_fraction * min(self.half_axes)


def parse_phantom_spec(data: Mapping[str, Any] | None = None, **updates: Any) -> PhantomSpec:
    """Validate a phantom specification.

    Raises:
        SpecError: Naming the first invalid field.

    """
    raw = {**(data or {}), **updates}
    try:
        return PhantomSpec.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first["loc"]) or "spec"
        raise SpecError(field, first["msg"]) from exc


def load_phantom_spec(path: str | Path, **updates: Any) -> PhantomSpec:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(str(p), exc.strerror or str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(str(p), exc.msg, line=exc.lineno) from exc
    if not isinstance(raw, dict):
        raise SpecError("spec", "phantom specification must be a JSON object")
    return parse_phantom_spec(raw, **updates)


def _rng(spec: PhantomSpec, purpose: int) -> np.random.Generator:
    return np.random.default_rng((spec.seed, purpose))


def ellipsoid_surface(half_axes: Sequence[float], n_triangles: int = 500) -> TriangleSurface:
    """Outward-oriented triangulated ellipsoid centred at the origin.

    Vertices are a Fibonacci lattice on the unit sphere scaled to the half
    axes; their convex hull has ``2 V - 4`` triangles.
    """
    n = max(n_triangles // 2 + 2, 12)
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    unit = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    triangles = ConvexHull(unit).simplices.astype(np.int64)
    a, b, c = (unit[triangles[:, k]] for k in range(3))
    inward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a) < 0
    triangles[inward] = triangles[inward][:, [0, 2, 1]]
    return TriangleSurface(unit * np.asarray(half_axes, dtype=np.float64), triangles)


def cone_tetrahedralize(
    surface: TriangleSurface, apex: np.ndarray, target_tetrahedra: int
) -> TetrahedralMesh:
    """Fill a surface that is star-shaped about ``apex`` with tetrahedra.

    Every triangle is joined to the apex; spokes from the apex are then
    bisected, longest first, until the mesh has ``target_tetrahedra``
    elements or every spoke has been split once.
    """
    ns = surface.n_vertices
    vertices = np.vstack([surface.vertices, apex])
    tets = np.column_stack([np.full(surface.n_triangles, ns), surface.triangles])
    spoke = np.linalg.norm(surface.vertices - apex, axis=1)
    for vertex in np.lexsort((np.arange(ns), -spoke)):
        if len(tets) >= target_tetrahedra:
            break
        vertices, tets = bisect_edge(vertices, tets, ns, int(vertex))
    return TetrahedralMesh(vertices, tets, np.arange(ns))


def _perpendicular_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = ref - (ref @ d) * d
    p /= np.linalg.norm(p)
    return p, np.cross(d, p)


def _child_directions(
    d: np.ndarray, level: int, spec: PhantomSpec, rng: np.random.Generator
) -> list[np.ndarray]:
    theta = math.radians(spec.branch_angle_deg) * spec.angle_decay**level
    jitter = math.radians(spec.jitter_deg)
    p, q = _perpendicular_basis(d)
    out = []
    for j in range(spec.fan_out):
        phi = 2.0 * math.pi * j / spec.fan_out + level * math.pi / 2 + rng.uniform(-jitter, jitter)
        tilt = theta + rng.uniform(-jitter, jitter)
        c = math.cos(tilt) * d + math.sin(tilt) * (math.cos(phi) * p + math.sin(phi) * q)
        out.append(c / np.linalg.norm(c))
    return out


def bronchial_tree(spec: PhantomSpec, hilum: np.ndarray | None = None) -> CenterlineTree:
    """Bifurcating tree with ``fan_out ** depth`` terminals at the bronchus radius.

    Junction level ``l`` sits at ``(l + 1) / (depth + 1)`` of the bronchus
    radius from the hilum; every segment carries one internal midpoint node.
    """
    rng = _rng(spec, 1)
    hilum = np.zeros(3) if hilum is None else np.asarray(hilum, dtype=np.float64)
    radius = spec.bronchus_radius
    positions: list[np.ndarray] = [hilum]
    kinds: list[NodeKind] = [NodeKind.ROOT]
    parents: list[int] = [-1]

    def add(position: np.ndarray, kind: NodeKind, parent: int) -> int:
        positions.append(position)
        kinds.append(kind)
        parents.append(parent)
        return len(positions) - 1

    def grow(parent: int, direction: np.ndarray, level: int) -> None:
        position = hilum + direction * radius * (level + 1) / (spec.depth + 1)
        mid = add(0.5 * (positions[parent] + position), NodeKind.INTERNAL, parent)
        if level == spec.depth:
            add(position, NodeKind.TERMINAL, mid)
            return
        node = add(position, NodeKind.JUNCTION, mid)
        for child in _child_directions(direction, level, spec, rng):
            grow(node, child, level + 1)

    trunk = np.asarray(spec.trunk_direction, dtype=np.float64)
    grow(0, trunk / np.linalg.norm(trunk), 0)
    return CenterlineTree(np.array(positions), tuple(kinds), parents)


def _check_clearance(model: LobeModel, spec: PhantomSpec) -> None:
    needed = spec.bronchus_radius + spec.blend_width + SURFACE_CLEARANCE
    tree = model.centerline
    for t in tree.terminals:
        hit = intersect_ray(model.surface, model.hilum, tree.positions[t] - model.hilum, t_min=1.0)
        reach = float(np.linalg.norm(hit.point - model.hilum)) if hit is not None else 0.0
        if reach <= needed:
            raise SpecError(
                "bronchus_fraction",
                f"terminal {int(t)} leaves only {reach:.3g} mm to the surface, need more than {needed:.3g} mm",
            )


def generate_lobe(spec: PhantomSpec, label: str = "upper", offset: Sequence[float] | None = None) -> LobeModel:
    """Inflated phantom lobe: ellipsoid surface, cone-filled volume and bronchial tree.

    The hilum is the ellipsoid centre, placed at ``offset``.

    Raises:
        SpecError: If the branching would leave no room for the parenchyma.

    """
    centre = np.zeros(3) if offset is None else np.asarray(offset, dtype=np.float64)
    surface = ellipsoid_surface(spec.half_axes, spec.surface_triangles)
    surface = surface.with_vertices(surface.vertices + centre)
    mesh = cone_tetrahedralize(surface, centre, spec.target_tetrahedra)
    model = LobeModel(surface, mesh, bronchial_tree(spec, centre), label)
    _check_clearance(model, spec)
    model.validate()
    logger.debug(
        f"Phantom lobe {label}: {surface.n_triangles} triangles, "
        f"{mesh.n_tetrahedra} tetrahedra, {model.centerline.n_nodes} centerline nodes"
    )
    return model


@dataclass(frozen=True, eq=False)
class GroundTruthDeformation:
    """Radial two-region contraction about the hilum followed by a rotation.

    Attributes:
        hilum: Fixed point of the deformation.
        bronchus_radius: Inflated radius up to which the bronchus strain applies.
        blend_width: Width of the cosine blend into the parenchyma strain, mm.
        bronchus_strain: Cauchy strain of the bronchus region.
        parenchyma_strain: Cauchy strain of the parenchyma region.
        rotation: ``(3, 3)`` rotation applied after the contraction.

    """

    hilum: np.ndarray
    bronchus_radius: float
    blend_width: float
    bronchus_strain: float
    parenchyma_strain: float
    rotation: np.ndarray

    @classmethod
    def from_spec(cls, spec: PhantomSpec, hilum: np.ndarray) -> "GroundTruthDeformation":
        axis = np.asarray(spec.rotation_axis, dtype=np.float64)
        rotvec = axis / np.linalg.norm(axis) * math.radians(spec.rotation_deg)
        return cls(
            hilum=np.asarray(hilum, dtype=np.float64).copy(),
            bronchus_radius=spec.bronchus_radius,
            blend_width=spec.blend_width,
            bronchus_strain=spec.bronchus_strain,
            parenchyma_strain=spec.parenchyma_strain,
            rotation=Rotation.from_rotvec(rotvec).as_matrix(),
        )

    def deflated_radius(self, rho: np.ndarray) -> np.ndarray:
        """Hilum distance after contraction of points at inflated distance ``rho``.

        The local length ratio ``1 / (1 + e)`` is integrated along the ray,
        so the map is monotone for any strains above -1.
        """
        rho = np.asarray(rho, dtype=np.float64)
        kb = 1.0 / (1.0 + self.bronchus_strain)
        kp = 1.0 / (1.0 + self.parenchyma_strain)
        r0, w = self.bronchus_radius, self.blend_width
        inner = kb * rho
        s = np.clip(rho - r0, 0.0, w)
        if w > 0:
            blend = kb * r0 + kb * s + 0.5 * (kp - kb) * (s - w / math.pi * np.sin(math.pi * s / w))
        else:
            blend = np.full_like(rho, kb * r0)
        outer = kb * (r0 + w) + 0.5 * (kp - kb) * w + kp * (rho - r0 - w)
        return np.where(rho <= r0, inner, np.where(rho < r0 + w, blend, outer))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        rel = np.asarray(points, dtype=np.float64) - self.hilum
        rho = np.linalg.norm(rel, axis=1)
        scale = np.ones_like(rho)
        moved = rho > 0
        scale[moved] = self.deflated_radius(rho[moved]) / rho[moved]
        return self.hilum + (rel * scale[:, None]) @ self.rotation.T

    def as_dict(self) -> dict[str, Any]:
        return {
            "hilum": [float(x) for x in self.hilum],
            "bronchus_radius": self.bronchus_radius,
            "blend_width": self.blend_width,
            "bronchus_strain": self.bronchus_strain,
            "parenchyma_strain": self.parenchyma_strain,
            "rotation": [[float(x) for x in row] for row in self.rotation],
        }


def apply_ground_truth_deformation(
    model: LobeModel, spec: PhantomSpec
) -> tuple[LobeModel, GroundTruthDeformation]:
    """Deflate ``model`` with the spec's strains and rotation.

    The deformed model keeps the point order of ``model``, so vertex ``i``
    of the result corresponds to vertex ``i`` of the input.

    Raises:
        SpecError: If the deformation inverts a tetrahedron.

    """
    deformation = GroundTruthDeformation.from_spec(spec, model.hilum)
    deformed = model.with_points(deformation(model.points))
    try:
        deformed.tet_mesh.check_orientation()
    except InvariantError as exc:
        raise SpecError("bronchus_strain", f"deflation folds the lobe: {exc}") from exc
    return deformed, deformation


def _prune_mask(tree: CenterlineTree, fraction: float, seed: int) -> np.ndarray:
    if not 0 <= fraction < 1:
        raise SpecError("prune_fraction", "prune fraction must be in [0, 1)")
    keep = np.ones(tree.n_nodes, dtype=bool)
    n_remove = math.floor(fraction * len(tree.terminals) + 0.5)
    if n_remove == 0:
        return keep
    tie = np.random.default_rng(seed).random(tree.n_nodes)
    depth = np.array([tree.depth(i) for i in range(tree.n_nodes)])
    n_children = np.array([len(c) for c in tree.children])
    root = tree.root
    for _ in range(n_remove):
        leaves = np.flatnonzero(keep & (n_children == 0))
        leaves = leaves[leaves != root]
        node = int(leaves[np.lexsort((-tie[leaves], -depth[leaves]))[0]])
        # drop the chain up to the nearest node that keeps another child
        while True:
            keep[node] = False
            parent = int(tree.parents[node])
            n_children[parent] -= 1
            if n_children[parent] > 0:
                break
            if parent == root:
                raise SpecError("prune_fraction", "pruning would remove every branch down to the root")
            node = parent
    return keep


def prune_terminals(tree: CenterlineTree, fraction: float, seed: int = 0) -> CenterlineTree:
    """Remove ``fraction`` of the terminal branches, deepest first.

    Each removal takes the terminal and its chain back to the nearest
    remaining junction; ties in depth are broken at random. Junctions left
    with one child become internal nodes.

    Raises:
        SpecError: If the fraction is outside ``[0, 1)`` or pruning would
            reach the root.

    """
    keep = _prune_mask(tree, fraction, seed)
    if keep.all():
        return tree
    pruned = tree.subtree(keep)
    logger.debug(
        f"Pruned {len(tree.terminals) - len(pruned.terminals)} terminals: "
        f"{len(tree.junctions)} -> {len(pruned.junctions)} junctions"
    )
    return pruned


def _surface_noise(model: LobeModel, amplitude: float, rng: np.random.Generator) -> LobeModel:
    if amplitude == 0:
        return model
    shift = rng.normal(0.0, amplitude, model.surface.n_vertices)[:, None] * model.surface.normals
    vertices = model.tet_mesh.vertices.copy()
    vertices[model.surface_vertex_map] += shift
    return model.with_points(np.vstack([vertices, model.centerline.positions]))


def _landmarks(
    spec: PhantomSpec,
    inflated: LobeModel,
    truth: LobeModel,
    junctions: np.ndarray,
) -> LandmarkSet:
    rng = _rng(spec, 4)
    n_surface = min(spec.surface_landmarks, inflated.surface.n_vertices)
    surface = np.sort(rng.choice(inflated.surface.n_vertices, n_surface, replace=False))
    n_junction = min(spec.junction_landmarks, len(junctions))
    chosen = np.sort(rng.choice(junctions, n_junction, replace=False)) if n_junction else junctions[:0]
    return LandmarkSet(
        kinds=("surface",) * len(surface) + ("bronchus",) * len(chosen),
        indices=np.concatenate([surface, chosen]),
        source=np.vstack([inflated.surface.vertices[surface], inflated.centerline.positions[chosen]]),
        target=np.vstack([truth.surface.vertices[surface], truth.centerline.positions[chosen]]),
    )


@dataclass(eq=False)
class PhantomCase:
    """One phantom lobe with its ground truth.

    Attributes:
        inflated: Source model.
        deflated: Target model, noisy and pruned.
        truth: Deflated model before noise and pruning; ``deformation``
            applied to ``inflated`` reproduces it exactly.
        deformation: Ground-truth correspondence map.
        landmarks: Landmark pairs with zero error under ``deformation``.

    """

    label: str
    spec: PhantomSpec
    inflated: LobeModel
    deflated: LobeModel
    truth: LobeModel
    deformation: GroundTruthDeformation
    landmarks: LandmarkSet

    def ground_truth(self) -> dict[str, Any]:
        return {
            "seed": self.spec.seed,
            "bronchus_strain": self.spec.bronchus_strain,
            "parenchyma_strain": self.spec.parenchyma_strain,
            "rotation_axis": list(self.spec.rotation_axis),
            "rotation_deg": self.spec.rotation_deg,
            "prune_fraction": self.spec.prune_fraction,
            "noise": self.spec.noise,
            "terminals_inflated": len(self.inflated.centerline.terminals),
            "terminals_deflated": len(self.deflated.centerline.terminals),
            "junctions_inflated": len(self.inflated.centerline.junctions),
            "junctions_deflated": len(self.deflated.centerline.junctions),
            "correspondence": "identity point order; deflated = deformation(inflated) before noise and pruning",
            "deformation": self.deformation.as_dict(),
        }


def generate_phantom_lobe(
    spec: PhantomSpec, label: str = "upper", offset: Sequence[float] | None = None
) -> PhantomCase:
    """Build one lobe pair with ground truth from ``spec``."""
    inflated = generate_lobe(spec, label, offset)
    truth, deformation = apply_ground_truth_deformation(inflated, spec)
    noisy = _surface_noise(truth, spec.noise, _rng(spec, 2))
    keep = _prune_mask(inflated.centerline, spec.prune_fraction, spec.seed)
    pruned = truth.centerline.subtree(keep) if not keep.all() else truth.centerline
    deflated = noisy.with_centerline(pruned)
    deflated.validate()

    # landmark junctions must survive pruning as junctions
    kept_index = np.cumsum(keep) - 1
    junctions = np.array(
        [
            j
            for j in inflated.centerline.junctions
            if keep[j] and pruned.kinds[kept_index[j]] is NodeKind.JUNCTION
        ],
        dtype=np.int64,
    )
    landmarks = _landmarks(spec, inflated, truth, junctions)
    return PhantomCase(label, spec, inflated, deflated, truth, deformation, landmarks)


def generate_case(spec: PhantomSpec, labels: Sequence[str] = ("upper",)) -> dict[str, PhantomCase]:
    """Phantom lobes of one case.

    Each further lobe sits below the previous one, uses the next seed and
    rotates the opposite way.
    """
    if not labels or len(set(labels)) != len(labels):
        raise SpecError("lobes", "lobe labels must be unique and non-empty")
    lobes = {}
    for i, label in enumerate(labels):
        lobe_spec = spec.model_copy(
            update={"seed": spec.seed + i, "rotation_deg": spec.rotation_deg * (-1) ** i}
        )
        offset = (0.0, 0.0, -i * (2.0 * spec.half_axes[2] + LOBE_GAP))
        lobes[label] = generate_phantom_lobe(lobe_spec, label, offset)
    logger.bind(event="phantom_generated").info(
        f"Generated phantom seed {spec.seed} with lobes {list(labels)}"
    )
    return lobes


def phantom_case(case_id: str, lobes: Mapping[str, PhantomCase]) -> Case:
    """Package phantom lobes as a case with a ground-truth sidecar."""
    return Case(
        case_id=case_id,
        lobes={
            label: LobePair(label, p.inflated, p.deflated, p.landmarks) for label, p in lobes.items()
        },
        ground_truth={
            "format": "phantom ground truth v1",
            "lobes": {label: p.ground_truth() for label, p in lobes.items()},
        },
    )
