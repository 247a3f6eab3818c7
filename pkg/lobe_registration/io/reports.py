"""CSV artifacts: optimisation traces, metric rows, strain tables and plot data.

Column orders are stable. Metric rows follow the layout MD, HD, CD mean,
CD max, TRE surface, TRE bronchus; strain summaries put the bronchus region
before the parenchyma region.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from loguru import logger

from lobe_registration.analysis.strain import StrainReport, StrainSummary
from lobe_registration.errors import FormatError, OutputError
from lobe_registration.io.formats import fmt
from lobe_registration.metrics.distance import MetricReport
from lobe_registration.registration.optimizer import TraceRecord

TRACE_COLUMNS = [
    "lobe",
    "step",
    "iteration",
    "accepted",
    "total",
    "surface_term",
    "centerline_term",
    "regularization_term",
    "step_length",
]
METRIC_COLUMNS = [
    "case_id",
    "lobe",
    "MD",
    "HD",
    "CD_mean",
    "CD_max",
    "TRE_surface",
    "TRE_surface_sd",
    "TRE_bronchus",
    "TRE_bronchus_sd",
]
SAMPLE_COLUMNS = [
    "case_id",
    "lobe",
    "branch",
    "kind",
    "region",
    "reference_distance",
    "contraction",
    "signed_contraction",
    "strain",
]
SUMMARY_COLUMNS = [
    "case_id",
    "lobe",
    "branches",
    "skipped",
    "bronchus_mean",
    "bronchus_sd",
    "parenchyma_mean",
    "parenchyma_sd",
]
COMPARISON_COLUMNS = ["scope", "f_statistic", "p_value", "df_between", "df_within"]
PLOT_COLUMNS = ["case_id", "lobe", "region", "reference_distance", "contraction"]


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return fmt(value)
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    """Write ``rows`` under a fixed header; floats use 17 significant digits.

    Raises:
        OutputError: If the file cannot be written.

    """
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _cell(row[k]) for k in columns})
    except OSError as exc:
        raise OutputError(str(p), exc.strerror or str(exc)) from exc
    logger.bind(event="report_written").debug(f"Wrote {p}")
    return p


def read_csv(path: str | Path, columns: Sequence[str]) -> list[dict[str, str]]:
    """Read a CSV written by :func:`write_csv`, checking its header."""
    p = Path(path)
    try:
        with p.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != list(columns):
                raise FormatError(str(p), f"expected columns {list(columns)}", line=1, field="header")
            return list(reader)
    except OSError as exc:
        raise FormatError(str(p), exc.strerror or str(exc)) from exc


def trace_rows(label: str, trace: Sequence[TraceRecord]) -> list[dict[str, Any]]:
    return [
        {
            "lobe": label,
            "step": r.step,
            "iteration": r.iteration,
            "accepted": r.accepted,
            "total": r.total,
            "surface_term": r.surface_term,
            "centerline_term": r.centerline_term,
            "regularization_term": r.regularization_term,
            "step_length": r.step_length,
        }
        for r in trace
    ]


def metric_row(case_id: str, label: str, report: MetricReport) -> dict[str, Any]:
    """One row of the registration accuracy table; TRE columns are mean and SD."""
    return {
        "case_id": case_id,
        "lobe": label,
        "MD": report.mean_distance,
        "HD": report.hausdorff,
        "CD_mean": report.centerline_mean,
        "CD_max": report.centerline_max,
        "TRE_surface": report.tre_surface_mean,
        "TRE_surface_sd": report.tre_surface_sd,
        "TRE_bronchus": report.tre_bronchus_mean,
        "TRE_bronchus_sd": report.tre_bronchus_sd,
    }


def sample_rows(case_id: str, label: str, report: StrainReport) -> list[dict[str, Any]]:
    return [
        {
            "case_id": case_id,
            "lobe": label,
            "branch": s.branch,
            "kind": s.kind,
            "region": s.region,
            "reference_distance": s.reference_distance,
            "contraction": s.contraction,
            "signed_contraction": s.signed_contraction,
            "strain": s.strain,
        }
        for s in report.samples
    ]


def summary_row(case_id: str, label: str, report: StrainReport) -> dict[str, Any]:
    return {
        "case_id": case_id,
        "lobe": label,
        "branches": len(report.branches),
        "skipped": report.skipped,
        "bronchus_mean": report.bronchus_mean,
        "bronchus_sd": report.bronchus_sd,
        "parenchyma_mean": report.parenchyma_mean,
        "parenchyma_sd": report.parenchyma_sd,
    }


def aggregate_row(summary: StrainSummary) -> dict[str, Any]:
    """Summary row across cases, labelled ``all``."""
    return {
        "case_id": "all",
        "lobe": "all",
        "branches": summary.n_cases,
        "skipped": 0,
        "bronchus_mean": summary.bronchus_mean,
        "bronchus_sd": summary.bronchus_sd,
        "parenchyma_mean": summary.parenchyma_mean,
        "parenchyma_sd": summary.parenchyma_sd,
    }


def comparison_row(scope: str, report: StrainReport | StrainSummary) -> dict[str, Any] | None:
    c = report.comparison
    if c is None:
        return None
    return {
        "scope": scope,
        "f_statistic": c.f_statistic,
        "p_value": c.p_value,
        "df_between": c.df_between,
        "df_within": c.df_within,
    }


def plot_rows(case_id: str, label: str, report: StrainReport) -> list[dict[str, Any]]:
    """Reference distance against contraction, one point per sample."""
    return [
        {
            "case_id": case_id,
            "lobe": label,
            "region": s.region,
            "reference_distance": s.reference_distance,
            "contraction": s.contraction,
        }
        for s in report.samples
    ]
