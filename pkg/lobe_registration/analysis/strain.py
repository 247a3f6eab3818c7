"""Branch sampling, Cauchy strain regression and regional strain statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike
from scipy import stats

from lobe_registration.config import AnalysisConfig
from lobe_registration.errors import (
    ArgumentError,
    EmptyReportError,
    RankDeficiencyError,
)
from lobe_registration.geometry.centerline import CenterlineTree, NodeKind
from lobe_registration.geometry.model import LobeModel
from lobe_registration.geometry.surface import RayHit, TriangleSurface, intersect_ray

if TYPE_CHECKING:
    from lobe_registration.registration.pipeline import RegistrationResult


@dataclass(frozen=True, slots=True)
class StrainSample:
    """One sampled point of a branch.

    Attributes:
        branch: Branch index within the report.
        kind: ``junction``, ``terminal`` or ``surface``.
        reference_distance: Hilum distance (bronchus samples) or terminal
            distance (surface samples) in the reference state, mm.
        contraction: Magnitude of the radial contraction ``|s|``, mm.
        signed_contraction: Radial change ``|phi v| - |v|`` (negative toward the hilum), mm.
        strain: Magnitude of the Cauchy strain of the sampled length.

    """

    branch: int
    kind: str
    reference_distance: float
    contraction: float
    signed_contraction: float
    strain: float

    @property
    def region(self) -> str:
        return "parenchyma" if self.kind == "surface" else "bronchus"


@dataclass(frozen=True, slots=True)
class RegressionFit:
    """Least-squares line ``y = slope * x + intercept`` with its RMS residual."""

    slope: float
    intercept: float
    residual: float


@dataclass(frozen=True, slots=True)
class RegionComparison:
    """One-way ANOVA between bronchus and parenchyma strains."""

    f_statistic: float
    p_value: float
    df_between: int
    df_within: int


@dataclass(frozen=True, eq=False)
class BranchSampling:
    """Sampled points of one branch in the deformed (deflated) state."""

    path: tuple[int, ...]
    junctions: tuple[int, ...]
    terminal: int
    surface_point: np.ndarray
    hit: RayHit


@dataclass(frozen=True, eq=False)
class BranchStrain:
    """Samples and fitted strains of one branch."""

    branch: int
    terminal: int
    target_terminal: int
    samples: tuple[StrainSample, ...]
    bronchus: RegressionFit | None
    parenchyma: float | None


@dataclass(frozen=True, eq=False)
class StrainReport:
    """Regional strains of one registered lobe."""

    branches: tuple[BranchStrain, ...]
    bronchus_mean: float
    bronchus_sd: float
    parenchyma_mean: float
    parenchyma_sd: float
    comparison: RegionComparison | None
    pooling: str = "samples"
    reference_state: str = "deflated"
    skipped: int = 0

    @property
    def samples(self) -> list[StrainSample]:
        return [s for b in self.branches for s in b.samples]

    def region_strains(self, region: str) -> np.ndarray:
        return np.array([s.strain for s in self.samples if s.region == region])


@dataclass(frozen=True, slots=True)
class StrainSummary:
    """Mean and SD of per-case strains over several cases."""

    n_cases: int
    bronchus_mean: float
    bronchus_sd: float
    parenchyma_mean: float
    parenchyma_sd: float
    comparison: RegionComparison | None = None
    case_means: tuple[tuple[float, float], ...] = field(default_factory=tuple)


def cauchy_strain(length: float, delta: float) -> float:
    """Cauchy strain ``delta / length``.

    Raises:
        ArgumentError: If ``length <= 0``.

    """
    if not length > 0:
        raise ArgumentError(f"reference length must be positive, got {length}")
    return float(delta) / float(length)


def regress_strain(reference: ArrayLike, contraction: ArrayLike) -> RegressionFit:
    """Ordinary least squares of contraction against reference distance.

    Raises:
        RankDeficiencyError: With fewer than two distinct reference distances.

    """
    x = np.asarray(reference, dtype=np.float64).reshape(-1)
    y = np.asarray(contraction, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise ArgumentError(f"got {len(x)} distances for {len(y)} contractions")
    if len(x) < 2 or np.ptp(x) == 0:
        raise RankDeficiencyError("regression needs at least two distinct reference distances")
    fit = stats.linregress(x, y)
    residual = y - (fit.slope * x + fit.intercept)
    return RegressionFit(float(fit.slope), float(fit.intercept), float(np.sqrt(np.mean(residual**2))))


def sample_branch(
    tree: CenterlineTree,
    terminal: int,
    surface: TriangleSurface,
    positions: np.ndarray | None = None,
) -> BranchSampling | None:
    """Sample the branch from the root to ``terminal`` and its surface point.

    The surface point is where the ray from the hilum through the terminal
    first meets ``surface`` at or beyond the terminal. ``positions``
    overrides the tree's node positions (e.g. deformed nodes).

    Returns:
        The sampling, or ``None`` (logged) when the ray misses the surface.

    """
    pos = tree.positions if positions is None else positions
    path = tree.path_from_root(terminal)
    junctions = tuple(n for n in path[1:-1] if tree.kinds[n] is NodeKind.JUNCTION)
    hilum = pos[tree.root]
    direction = pos[terminal] - hilum
    if np.linalg.norm(direction) == 0:
        logger.warning(f"Branch to node {terminal} skipped: terminal coincides with the hilum")
        return None
    hit = intersect_ray(surface, hilum, direction, t_min=1.0)
    if hit is None:
        logger.warning(f"Branch to node {terminal} skipped: ray misses the surface")
        return None
    return BranchSampling(tuple(path), junctions, terminal, hit.point, hit)


def compare_regions(bronchus: Sequence[float], parenchyma: Sequence[float]) -> RegionComparison:
    """One-way ANOVA of two strain groups.

    Zero within-group variance gives ``F = 0`` when the means agree and
    ``F = inf`` otherwise.
    """
    a = np.asarray(bronchus, dtype=np.float64)
    b = np.asarray(parenchyma, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ArgumentError("each group needs at least two samples")
    grand = np.concatenate([a, b]).mean()
    ss_between = len(a) * (a.mean() - grand) ** 2 + len(b) * (b.mean() - grand) ** 2
    ss_within = float(np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2))
    df_between, df_within = 1, len(a) + len(b) - 2
    if ss_within == 0.0:
        if np.isclose(a.mean(), b.mean(), rtol=1e-12, atol=1e-15):
            return RegionComparison(0.0, 1.0, df_between, df_within)
        return RegionComparison(float("inf"), 0.0, df_between, df_within)
    f_stat = (ss_between / df_between) / (ss_within / df_within)
    p = float(stats.f.sf(f_stat, df_between, df_within))
    return RegionComparison(float(f_stat), p, df_between, df_within)


def _branch_strain(
    branch: int,
    target_terminal: int,
    sampling: BranchSampling,
    rest_nodes: np.ndarray,
    deformed_nodes: np.ndarray,
    rest_surface_point: np.ndarray,
    config: AnalysisConfig,
) -> BranchStrain:
    deflated_ref = config.reference_state == "deflated"
    eps = config.hilum_epsilon
    samples: list[StrainSample] = []
    for node in (*sampling.junctions, sampling.terminal):
        inflated = float(np.linalg.norm(rest_nodes[node]))
        deflated = float(np.linalg.norm(deformed_nodes[node]))
        if inflated <= eps or deflated <= eps:
            continue
        ref = deflated if deflated_ref else inflated
        signed = deflated - inflated
        kind = "terminal" if node == sampling.terminal else "junction"
        samples.append(
            StrainSample(branch, kind, ref, abs(signed), signed, abs(cauchy_strain(ref, signed)))
        )

    bronchus = None
    ref_x = [s.reference_distance for s in samples]
    try:
        bronchus = regress_strain(ref_x, [s.contraction for s in samples])
    except RankDeficiencyError:
        logger.debug(f"Branch {branch}: too few bronchus samples for a regression")

    parenchyma = None
    t = sampling.terminal
    q_inflated = float(np.linalg.norm(rest_surface_point))
    q_deflated = float(np.linalg.norm(sampling.surface_point))
    length_inflated = float(np.linalg.norm(rest_surface_point - rest_nodes[t]))
    length_deflated = float(np.linalg.norm(sampling.surface_point - deformed_nodes[t]))
    ref = length_deflated if deflated_ref else length_inflated
    if ref > eps:
        s_q = abs(q_deflated - q_inflated)
        s_t = abs(float(np.linalg.norm(deformed_nodes[t])) - float(np.linalg.norm(rest_nodes[t])))
        parenchyma = (s_q - s_t) / ref
        delta = length_deflated - length_inflated
        samples.append(
            StrainSample(
                branch,
                "surface",
                ref,
                s_q,
                q_deflated - q_inflated,
                abs(cauchy_strain(ref, delta)),
            )
        )
    return BranchStrain(branch, t, target_terminal, tuple(samples), bronchus, parenchyma)


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def strain_report_from_models(
    source: LobeModel,
    deformed: LobeModel,
    target_centerline: CenterlineTree,
    config: AnalysisConfig | None = None,
) -> StrainReport:
    """Regional strains of ``source`` mapped onto ``deformed``.

    One branch is analysed per terminal of ``target_centerline``: the source
    terminal whose deformed position is closest to it closes the branch, and
    the branch is sampled in the deformed state. A source terminal closes at
    most one branch; later target terminals resolving to it are skipped.

    Raises:
        EmptyReportError: If no branch could be sampled.

    """
    config = config or AnalysisConfig()
    tree = source.centerline
    rest_nodes = tree.positions - source.hilum
    deformed_nodes = deformed.centerline.positions - deformed.hilum
    rest_surface = source.surface.vertices - source.hilum
    deformed_surface = deformed.surface.with_vertices(deformed.surface.vertices - deformed.hilum)
    candidates = np.asarray(tree.terminals, dtype=np.int64)
    if len(candidates) == 0:
        raise EmptyReportError("source centerline has no branches")

    branches: list[BranchStrain] = []
    seen: set[int] = set()
    skipped = 0
    for target_terminal in target_centerline.terminals:
        goal = target_centerline.positions[target_terminal]
        dist = np.linalg.norm(deformed.centerline.positions[candidates] - goal, axis=1)
        node = int(candidates[int(np.argmin(dist))])
        if node in seen:
            logger.debug(
                f"Target terminal {int(target_terminal)} skipped: node {node} already closes a branch"
            )
            skipped += 1
            continue
        seen.add(node)
        sampling = sample_branch(tree, node, deformed_surface, deformed_nodes)
        if sampling is None:
            skipped += 1
            continue
        if not sampling.junctions:
            logger.warning(f"Branch to node {node} skipped: no junction between hilum and terminal")
            skipped += 1
            continue
        tri = source.surface.triangles[sampling.hit.triangle]
        rest_point = sampling.hit.barycentric @ rest_surface[tri]
        branches.append(
            _branch_strain(
                len(branches),
                int(target_terminal),
                sampling,
                rest_nodes,
                deformed_nodes,
                rest_point,
                config,
            )
        )
    if not branches:
        raise EmptyReportError(f"no valid branches ({skipped} skipped)")

    samples = [s for b in branches for s in b.samples]
    bronchus_samples = [s.strain for s in samples if s.region == "bronchus"]
    parenchyma_samples = [s.strain for s in samples if s.region == "parenchyma"]
    if config.pooling == "samples":
        b_mean, b_sd = _mean_sd(bronchus_samples)
        p_mean, p_sd = _mean_sd(parenchyma_samples)
    else:
        b_mean, b_sd = _mean_sd([b.bronchus.slope for b in branches if b.bronchus is not None])
        p_mean, p_sd = _mean_sd([b.parenchyma for b in branches if b.parenchyma is not None])

    comparison = None
    if len(bronchus_samples) >= 2 and len(parenchyma_samples) >= 2:
        comparison = compare_regions(bronchus_samples, parenchyma_samples)
    return StrainReport(
        branches=tuple(branches),
        bronchus_mean=b_mean,
        bronchus_sd=b_sd,
        parenchyma_mean=p_mean,
        parenchyma_sd=p_sd,
        comparison=comparison,
        pooling=config.pooling,
        reference_state=config.reference_state,
        skipped=skipped,
    )


def strain_report(result: "RegistrationResult", config: AnalysisConfig | None = None) -> StrainReport:
    """Regional strains of a registered lobe, one branch per target terminal."""
    return strain_report_from_models(
        result.source, result.deformed, result.target.centerline, config
    )


def aggregate_reports(reports: Sequence[StrainReport]) -> StrainSummary:
    """Mean and SD of per-case strains, with an ANOVA over the pooled samples."""
    if not reports:
        raise EmptyReportError("no strain reports to aggregate")
    b_mean, b_sd = _mean_sd([r.bronchus_mean for r in reports])
    p_mean, p_sd = _mean_sd([r.parenchyma_mean for r in reports])
    bronchus = np.concatenate([r.region_strains("bronchus") for r in reports])
    parenchyma = np.concatenate([r.region_strains("parenchyma") for r in reports])
    comparison = None
    if len(bronchus) >= 2 and len(parenchyma) >= 2:
        comparison = compare_regions(bronchus, parenchyma)
    return StrainSummary(
        n_cases=len(reports),
        bronchus_mean=b_mean,
        bronchus_sd=b_sd,
        parenchyma_mean=p_mean,
        parenchyma_sd=p_sd,
        comparison=comparison,
        case_means=tuple((r.bronchus_mean, r.parenchyma_mean) for r in reports),
    )
