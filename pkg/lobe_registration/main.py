"""Command line entry point: ``phantom``, ``register``, ``analyze`` and ``evaluate``.

Exit codes: 0 on success, 1 when a case or lobe fails, 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Iterator, Sequence

from loguru import logger
from pydantic import ValidationError

from lobe_registration import __version__
from lobe_registration.analysis.decomposition import DeformationField
from lobe_registration.analysis.export import FIELD_COMPONENTS, export_field_visualization
from lobe_registration.analysis.strain import (
    StrainReport,
    aggregate_reports,
    strain_report_from_models,
)
from lobe_registration.config import STEP_NAMES, Config, as_overrides, load_config, merge_overrides
from lobe_registration.errors import ConfigurationError, LobeRegistrationError, ManifestError
from lobe_registration.geometry.model import LobeModel
from lobe_registration.io.manifest import (
    Case,
    LobePair,
    ModelPaths,
    load_case,
    model_paths,
    read_model,
    save_case,
    save_model,
    write_json,
)
from lobe_registration.io.reports import (
    COMPARISON_COLUMNS,
    METRIC_COLUMNS,
    PLOT_COLUMNS,
    SAMPLE_COLUMNS,
    SUMMARY_COLUMNS,
    TRACE_COLUMNS,
    aggregate_row,
    comparison_row,
    metric_row,
    plot_rows,
    sample_rows,
    summary_row,
    trace_rows,
    write_csv,
)
from lobe_registration.phantom.generator import (
    generate_case,
    load_phantom_spec,
    parse_phantom_spec,
    phantom_case,
)
from lobe_registration.registration.pipeline import (
    CaseRegistration,
    evaluate_registration,
    register_case,
)
from lobe_registration.utils.logger_setup import setup_logger

RUN_FILE = "registration.json"
DISPLACEMENT_COLUMNS = ["index", "kind", "x", "y", "z", "dx", "dy", "dz"]

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _csv_list(value: str) -> list[str]:
    return [x.strip() for x in value.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lobe-dmr",
        description="Deformable registration and strain analysis of lung lobe models",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="INI or JSON configuration file")
    parser.add_argument("--log-level", help="Override the configured log level")
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", help="Generate a synthetic case with ground truth")
    phantom.add_argument("--out", required=True, help="Directory of the generated case")
    phantom.add_argument("--spec", help="Phantom specification JSON")
    phantom.add_argument("--seed", type=int, help="Random seed")
    phantom.add_argument("--prune", type=float, help="Fraction of terminal branches to remove")
    phantom.add_argument("--lobes", type=_csv_list, default=["upper"], help="Comma-separated labels")
    phantom.add_argument("--case-id", help="Case identifier (default phantom-<seed>)")

    register = sub.add_parser("register", help="Register the lobes of one or more cases")
    register.add_argument("--case", action="append", required=True, help="Case manifest")
    register.add_argument("--out", required=True, help="Output directory")
    register.add_argument("--steps", type=_csv_list, help=f"Subset of {','.join(STEP_NAMES)}")
    register.add_argument(
        "--ablation",
        choices=["lsm", "shared-affine"],
        help="lsm: drop the centerline term; shared-affine: one affine for all lobes",
    )
    register.add_argument("--jobs", type=int, default=1, help="Cases registered in parallel")

    analyze = sub.add_parser("analyze", help="Strain analysis of registration runs")
    analyze.add_argument("--run", action="append", required=True, help="Registration run directory")
    analyze.add_argument("--out", required=True, help="Output directory")
    analyze.add_argument(
        "--components",
        type=_csv_list,
        default=list(FIELD_COMPONENTS),
        help=f"Vector fields to export, from {','.join(FIELD_COMPONENTS)}",
    )
    analyze.add_argument("--reference-state", choices=["deflated", "inflated"])
    analyze.add_argument("--pooling", choices=["samples", "branches"])

    evaluate = sub.add_parser("evaluate", help="Recompute accuracy metrics of registration runs")
    evaluate.add_argument("--run", action="append", required=True, help="Registration run directory")
    evaluate.add_argument("--out", required=True, help="Output directory")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    registration: dict[str, Any] = {}
    analysis: dict[str, Any] = {}
    if getattr(args, "steps", None):
        registration["steps"] = args.steps
    if getattr(args, "ablation", None) == "lsm":
        registration["alpha"] = 0.0
    if getattr(args, "reference_state", None):
        analysis["reference_state"] = args.reference_state
    if getattr(args, "pooling", None):
        analysis["pooling"] = args.pooling
    out: dict[str, Any] = {}
    if registration:
        out["registration"] = registration
    if analysis:
        out["analysis"] = analysis
    if args.log_level:
        out["logging"] = {"level": args.log_level}
    return out


def _load(config_path: str | None, *layers: dict[str, Any] | None) -> Config:
    try:
        return load_config(config_path, merge_overrides(*layers))
    except FileNotFoundError as exc:
        raise ConfigurationError(str(exc)) from exc
    except (ValidationError, ValueError) as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def cmd_phantom(args: argparse.Namespace, config: Config) -> int:
    updates: dict[str, Any] = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.prune is not None:
        updates["prune_fraction"] = args.prune
    spec = load_phantom_spec(args.spec, **updates) if args.spec else parse_phantom_spec(None, **updates)
    case_id = args.case_id or f"phantom-{spec.seed:04d}"
    case = phantom_case(case_id, generate_case(spec, args.lobes))
    path = save_case(case, args.out)
    print(path)
    return EXIT_OK


def _save_run(
    case_path: Path, case: Case, out: Path, config: Config, registration: CaseRegistration
) -> list[dict[str, Any]]:
    lobes: dict[str, Any] = {}
    metrics, traces = [], []
    for label, result in registration.results.items():
        paths = model_paths(label, "deformed")
        save_model(out, paths, result.deformed)
        displacement = result.displacement
        points = result.source.points
        n_tet = result.source.n_tet_vertices
        write_csv(
            out / label / "displacement.csv",
            DISPLACEMENT_COLUMNS,
            (
                {
                    "index": i,
                    "kind": "tet" if i < n_tet else "centerline",
                    "x": float(points[i, 0]),
                    "y": float(points[i, 1]),
                    "z": float(points[i, 2]),
                    "dx": float(displacement[i, 0]),
                    "dy": float(displacement[i, 1]),
                    "dz": float(displacement[i, 2]),
                }
                for i in range(len(points))
            ),
        )
        if result.transform is not None:
            write_json(out / label / "affine.json", [[float(x) for x in row] for row in result.transform])
        lobes[label] = {
            "deformed": paths.model_dump(),
            "steps": {
                name: {
                    "reason": step.reason,
                    "iterations": step.iterations,
                    "initial": step.initial.total,
                    "final": step.breakdown.total,
                }
                for name, step in result.steps.items()
            },
        }
        metrics.append(metric_row(case.case_id, label, result.metrics))
        traces.extend(trace_rows(label, result.trace))

    write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics)
    write_csv(out / "trace.csv", TRACE_COLUMNS, traces)
    write_json(
        out / RUN_FILE,
        {
            "case_id": case.case_id,
            "case": os.path.relpath(case_path.resolve(), out.resolve()),
            "config": config.model_dump(mode="json"),
            "lobes": lobes,
            "errors": dict(registration.errors),
        },
    )
    return metrics


def register_one(
    case_path: str, out_dir: str, config_path: str | None, cli: dict[str, Any], shared: bool
) -> tuple[list[dict[str, Any]], dict[str, str]]:
    """Register one case into ``out_dir/<case_id>``; runs in worker processes.

    Failures come back as plain messages keyed by case path or lobe.
    """
    path = Path(case_path)
    try:
        case = load_case(path)
        config = _load(config_path, as_overrides(case.config), cli)
        out = Path(out_dir) / case.case_id
        registration = register_case(
            case.pairs, config.registration, case.landmarks, shared_affine=shared
        )
        metrics = _save_run(path, case, out, config, registration)
    except (LobeRegistrationError, OSError) as exc:
        return [], {case_path: str(exc)}
    return metrics, {f"{case.case_id}/{k}": v for k, v in registration.errors.items()}


def cmd_register(args: argparse.Namespace, config: Config) -> int:
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be at least 1")
    cli = _overrides(args)
    shared = args.ablation == "shared-affine"
    jobs = [(c, args.out, args.config, cli, shared) for c in args.case]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(register_one, *zip(*jobs)))
    else:
        results = [register_one(*job) for job in jobs]

    rows = [row for metrics, _ in results for row in metrics]
    errors = {k: v for _, err in results for k, v in err.items()}
    write_csv(Path(args.out) / "metrics.csv", METRIC_COLUMNS, rows)
    for lobe, message in errors.items():
        logger.error(f"Registration of {lobe} failed: {message}")
    return EXIT_FAILURE if errors else EXIT_OK


def _read_run(run_dir: Path) -> tuple[dict[str, Any], Case]:
    run_file = run_dir / RUN_FILE
    if not run_file.is_file():
        raise ManifestError(str(run_file), "registration artifacts not found; run 'register' first")
    try:
        run = json.loads(run_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(str(run_file), exc.msg, line=exc.lineno) from exc
    for key in ("case", "lobes"):
        if key not in run:
            raise ManifestError(str(run_file), f"{key}: missing field", field=key)
    return run, load_case(run_dir / run["case"])


def _deformed_models(
    run_dir: Path, run: dict[str, Any], case: Case
) -> Iterator[tuple[str, LobePair, LobeModel]]:
    for label, entry in run["lobes"].items():
        if label not in case.lobes:
            raise ManifestError(str(run_dir / RUN_FILE), f"lobe {label!r} is not in the case", field=label)
        paths = ModelPaths.model_validate(entry["deformed"])
        yield label, case.lobes[label], read_model(run_dir, paths, label)


def cmd_analyze(args: argparse.Namespace, config: Config) -> int:
    out = Path(args.out)
    reports: list[StrainReport] = []
    samples, summaries, comparisons, plot = [], [], [], []
    failed = 0
    for run_arg in args.run:
        run_dir = Path(run_arg)
        run, case = _read_run(run_dir)
        for label, pair, deformed in _deformed_models(run_dir, run, case):
            try:
                report = strain_report_from_models(
                    pair.inflated, deformed, pair.deflated.centerline, config.analysis
                )
            except LobeRegistrationError as exc:
                logger.error(f"Strain analysis of {case.case_id}/{label} failed: {exc}")
                failed += 1
                continue
            reports.append(report)
            samples.extend(sample_rows(case.case_id, label, report))
            summaries.append(summary_row(case.case_id, label, report))
            plot.extend(plot_rows(case.case_id, label, report))
            row = comparison_row(f"{case.case_id}/{label}", report)
            if row is not None:
                comparisons.append(row)
            field = DeformationField.from_models(
                pair.inflated.surface.vertices,
                pair.inflated.centerline.positions,
                pair.inflated.hilum,
                deformed.surface.vertices,
                deformed.centerline.positions,
                deformed.hilum,
            )
            export_field_visualization(
                field,
                out / case.case_id / label,
                args.components,
                epsilon=config.analysis.hilum_epsilon,
            )

    if reports:
        summary = aggregate_reports(reports)
        summaries.append(aggregate_row(summary))
        row = comparison_row("all", summary)
        if row is not None:
            comparisons.append(row)
        logger.bind(event="report_written").info(
            f"Strain over {summary.n_cases} lobes: bronchus {summary.bronchus_mean:.3f} "
            f"+/- {summary.bronchus_sd:.3f}, parenchyma {summary.parenchyma_mean:.3f} "
            f"+/- {summary.parenchyma_sd:.3f}"
        )
    write_csv(out / "strain_samples.csv", SAMPLE_COLUMNS, samples)
    write_csv(out / "strain_summary.csv", SUMMARY_COLUMNS, summaries)
    write_csv(out / "region_comparison.csv", COMPARISON_COLUMNS, comparisons)
    write_csv(out / "strain_plot.csv", PLOT_COLUMNS, plot)
    return EXIT_FAILURE if failed or not reports else EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: Config) -> int:
    rows = []
    for run_arg in args.run:
        run_dir = Path(run_arg)
        run, case = _read_run(run_dir)
        for label, pair, deformed in _deformed_models(run_dir, run, case):
            report = evaluate_registration(pair.inflated, deformed, pair.deflated, pair.landmarks)
            rows.append(metric_row(case.case_id, label, report))
    write_csv(Path(args.out) / "metrics.csv", METRIC_COLUMNS, rows)
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "register": cmd_register,
    "analyze": cmd_analyze,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line interface and return its exit code."""
    args = build_parser().parse_args(argv)
    try:
        setup_logger(args.log_level or "INFO")
        config = _load(args.config, _overrides(args))
        setup_logger(config.logging.level, config.logging.file)
        return COMMANDS[args.command](args, config)
    except ConfigurationError as exc:
        logger.error(f"Configuration error: {exc}")
        return EXIT_USAGE
    except LobeRegistrationError as exc:
        logger.error(f"{args.command} failed: {exc}")
        return EXIT_FAILURE
    except OSError as exc:
        logger.error(f"{args.command} failed: {exc}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
