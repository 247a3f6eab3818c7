"""Per-lobe and per-case orchestration of the registration steps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from loguru import logger

from lobe_registration.config import RegistrationConfig
from lobe_registration.errors import LobeRegistrationError
from lobe_registration.geometry.grid import DeformationGrid
from lobe_registration.geometry.model import LandmarkSet, LobeModel
from lobe_registration.geometry.tetmesh import apply_deformation, bind_barycentric
from lobe_registration.metrics.distance import MetricReport, compute_metric_report
from lobe_registration.registration.optimizer import OptimizationResult, TraceRecord
from lobe_registration.registration.steps import (
    step1_global_affine,
    step2_piecewise_affine,
    step3_local_refinement,
)


@dataclass(eq=False)
class RegistrationResult:
    """Deformed source lobe with per-step history and evaluation metrics.

    ``deformed`` has the same topology and point order as ``source``.
    """

    label: str
    source: LobeModel
    target: LobeModel
    deformed: LobeModel
    metrics: MetricReport
    transform: np.ndarray | None = None
    grid: DeformationGrid | None = None
    steps: dict[str, OptimizationResult] = field(default_factory=dict)

    @property
    def displacement(self) -> np.ndarray:
        """Per-point displacement ``phi(v) - v`` over ``[tet vertices; centerline]``."""
        return self.deformed.points - self.source.points

    @property
    def trace(self) -> list[TraceRecord]:
        return [r for result in self.steps.values() for r in result.trace]


@dataclass(eq=False)
class CaseRegistration:
    """Results of every lobe of a case; failed lobes are listed in ``errors``."""

    results: dict[str, RegistrationResult] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)


def deform_points(source: LobeModel, deformed: LobeModel, points: np.ndarray) -> np.ndarray:
    """Move arbitrary points embedded in the source lobe mesh along with it."""
    if len(points) == 0:
        return np.zeros((0, 3))
    binding = bind_barycentric(points, source.tet_mesh)
    return apply_deformation(binding, deformed.tet_mesh.vertices)


def deform_landmarks(source: LobeModel, deformed: LobeModel, landmarks: LandmarkSet) -> np.ndarray:
    """Deformed source landmark positions.

    Landmarks placed on a surface vertex or centerline node follow that
    vertex or node; others are carried by the lobe mesh.
    """
    moved = deform_points(source, deformed, landmarks.source)
    for i, (kind, index) in enumerate(zip(landmarks.kinds, landmarks.indices)):
        if index < 0:
            continue
        if kind == "surface" and index < source.surface.n_vertices:
            moved[i] = deformed.surface.vertices[index]
        elif kind == "bronchus" and index < source.centerline.n_nodes:
            moved[i] = deformed.centerline.positions[index]
    return moved


def evaluate_registration(
    source: LobeModel,
    deformed: LobeModel,
    target: LobeModel,
    landmarks: LandmarkSet | None = None,
) -> MetricReport:
    """Evaluation metrics of ``deformed`` against ``target``."""
    surface_pairs = bronchus_pairs = None
    if landmarks is not None and len(landmarks):
        moved = deform_landmarks(source, deformed, landmarks)
        s = landmarks.mask("surface")
        b = landmarks.mask("bronchus")
        surface_pairs = (moved[s], landmarks.target[s])
        bronchus_pairs = (moved[b], landmarks.target[b])
    return compute_metric_report(
        deformed.surface,
        target.surface,
        deformed.centerline,
        target.centerline,
        surface_pairs,
        bronchus_pairs,
    )


def _log_step(label: str, name: str, result: OptimizationResult) -> None:
    logger.bind(event="step_finished").info(
        f"Lobe {label} {name}: E {result.initial.total:.6g} -> {result.breakdown.total:.6g} "
        f"after {result.iterations} iterations ({result.reason})"
    )


def register_lobe(
    source: LobeModel,
    target: LobeModel,
    config: RegistrationConfig | None = None,
    landmarks: LandmarkSet | None = None,
) -> RegistrationResult:
    """Register one lobe pair with the enabled steps, in pipeline order.

    Args:
        source: Inflated lobe model.
        target: Deflated lobe model.
        config: Registration settings; defaults apply when omitted.
        landmarks: Optional evaluation landmarks for the TRE metrics.

    Returns:
        RegistrationResult: Deformed source model, history and metrics.

    """
    config = config or RegistrationConfig()
    label = source.label
    state = source
    steps: dict[str, OptimizationResult] = {}
    transform = None
    grid = None

    if "affine" in config.steps:
        logger.bind(event="step_started").info(f"Lobe {label}: global affine")
        affine = step1_global_affine(state, target, config)
        state, transform = affine.model, affine.transform
        steps["affine"] = affine.optimization
        _log_step(label, "affine", affine.optimization)
    if "piecewise" in config.steps:
        logger.bind(event="step_started").info(f"Lobe {label}: piecewise affine")
        piecewise = step2_piecewise_affine(state, target, config)
        state, grid = piecewise.model, piecewise.grid
        steps["piecewise"] = piecewise.optimization
        _log_step(label, "piecewise", piecewise.optimization)
    if "refinement" in config.steps:
        logger.bind(event="step_started").info(f"Lobe {label}: local refinement")
        weights = source.centerline_binding.matrix(source.n_tet_vertices)
        refinement = step3_local_refinement(state, target, config, weights)
        state = refinement.model
        steps["refinement"] = refinement.optimization
        _log_step(label, "refinement", refinement.optimization)

    metrics = evaluate_registration(source, state, target, landmarks)
    return RegistrationResult(
        label=label,
        source=source,
        target=target,
        deformed=state,
        metrics=metrics,
        transform=transform,
        grid=grid,
        steps=steps,
    )


def register_case(
    pairs: Mapping[str, tuple[LobeModel, LobeModel]],
    config: RegistrationConfig | None = None,
    landmarks: Mapping[str, LandmarkSet] | None = None,
    *,
    shared_affine: bool = False,
) -> CaseRegistration:
    """Register every lobe of a case independently.

    Args:
        pairs: ``label -> (source, target)``.
        config: Registration settings.
        landmarks: Optional ``label -> LandmarkSet``.
        shared_affine: Ablation: fit one affine transform jointly to all lobes
            and stop there, instead of registering lobes independently.

    Returns:
        CaseRegistration: Per-lobe results; a lobe that fails is reported in
        ``errors`` without affecting the others.

    """
    config = config or RegistrationConfig()
    landmarks = landmarks or {}
    case = CaseRegistration()

    if shared_affine:
        labels = list(pairs)
        affine = step1_global_affine(
            [pairs[k][0] for k in labels], [pairs[k][1] for k in labels], config
        )
        _log_step("+".join(labels), "shared affine", affine.optimization)
        for label, model, transform in zip(labels, affine.models, affine.transforms):
            source, target = pairs[label]
            case.results[label] = RegistrationResult(
                label=label,
                source=source,
                target=target,
                deformed=model,
                metrics=evaluate_registration(source, model, target, landmarks.get(label)),
                transform=transform,
                steps={"affine": affine.optimization},
            )
        return case

    for label, (source, target) in pairs.items():
        try:
            case.results[label] = register_lobe(source, target, config, landmarks.get(label))
        except LobeRegistrationError as exc:
            logger.error(f"Lobe {label} failed: {exc}")
            case.errors[label] = str(exc)
    logger.bind(event="case_registered").info(
        f"Registered {len(case.results)} of {len(pairs)} lobes"
    )
    return case
