"""Damped Gauss-Newton descent with monotone acceptance.

Each iteration refreshes correspondences at the current state, solves the
damped normal equations of a quadratic model of the objective whose gradient
matches the frozen-correspondence gradient, caps the induced point motion and
backtracks until the true objective (with refreshed correspondences)
strictly decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from loguru import logger

from lobe_registration.config import RegistrationConfig
from lobe_registration.errors import DegenerateGeometryError, RegistrationError
from lobe_registration.registration.objective import (
    Correspondences,
    FrozenObjective,
    ObjectiveBreakdown,
    ObjectiveContext,
    Regularizer,
    compute_correspondences,
)

# Residuals shorter than this (mm) get a capped reweighting factor
_RESIDUAL_FLOOR = 1e-6
# Objective values at or below this are treated as an exact fit
_EXACT_FIT = 1e-15

# Returns None for an admissible state, otherwise a short reason
ValidityCheck = Callable[[np.ndarray, np.ndarray], "str | None"]


@dataclass(frozen=True, eq=False)
class ProblemPart:
    """One lobe's contribution: its context and linear point map."""

    context: ObjectiveContext
    base: np.ndarray
    basis: np.ndarray

    def points(self, theta: np.ndarray) -> np.ndarray:
        return self.base + self.basis @ theta


@dataclass(frozen=True, eq=False)
class LinearProblem:
    """Objective over parameters ``theta`` shared by one or more lobes."""

    parts: tuple[ProblemPart, ...]
    theta0: np.ndarray
    regularizer: Regularizer | None = None
    check: ValidityCheck | None = None
    abort_on_invalid: bool = False
    invalid_reason: str = "step_underflow"


@dataclass(frozen=True, slots=True)
class TraceRecord:
    """Objective after one outer iteration (the best state so far)."""

    step: str
    iteration: int
    accepted: bool
    total: float
    surface_term: float
    centerline_term: float
    regularization_term: float
    step_length: float


@dataclass(eq=False)
class OptimizationResult:
    """Final parameters and history of one optimisation run."""

    theta: np.ndarray
    breakdown: ObjectiveBreakdown
    initial: ObjectiveBreakdown
    reason: str
    iterations: int
    trace: list[TraceRecord] = field(default_factory=list)


def _combine(breakdowns: list[ObjectiveBreakdown], reg: float) -> ObjectiveBreakdown:
    return ObjectiveBreakdown(
        sum(b.surface_term for b in breakdowns),
        sum(b.centerline_term for b in breakdowns),
        reg,
        sum(b.surface_distance for b in breakdowns),
        sum(b.centerline_distance for b in breakdowns),
    )


def _evaluate(
    problem: LinearProblem, theta: np.ndarray
) -> tuple[ObjectiveBreakdown, list[FrozenObjective]]:
    """True objective at ``theta`` and the frozen objectives of each part."""
    frozen = []
    parts = []
    for part in problem.parts:
        x = part.points(theta)
        corr = compute_correspondences(x, part.context)
        f = FrozenObjective(corr, part.base, part.basis, part.context.alpha, None)
        frozen.append(f)
        parts.append(f.breakdown(theta))
    reg = problem.regularizer.value(theta) if problem.regularizer is not None else 0.0
    return _combine(parts, reg), frozen


def _normal_equations(
    frozen: FrozenObjective, theta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reweighted ``J^T W J`` and ``J^T W r`` of one part."""
    c: Correspondences = frozen.correspondences
    x = frozen.points(theta)
    res = c.residuals(x)
    norms = np.linalg.norm(res, axis=1)
    ds, dc = c.distances(x)
    lead = np.where(c.centerline, frozen.alpha * dc, ds)
    w = lead * c.coefficients / np.maximum(norms, _RESIDUAL_FLOOR)
    jac = c.operator @ frozen.basis
    jac = np.asarray(jac)
    jtw = jac.T * w[None, :]
    return jtw @ jac, jtw @ res


def optimize(
    problem: LinearProblem,
    config: RegistrationConfig,
    step: str,
    bbox_diagonal: float,
) -> OptimizationResult:
    """Minimise the objective of ``problem`` from ``problem.theta0``.

    Terminates after ``config.patience`` consecutive iterations without an
    improvement of at least ``config.improvement_tol``, after
    ``config.max_iters`` iterations, on an exact fit, or when no admissible
    step longer than ``config.min_step`` mm can be found.

    Raises:
        RegistrationError: If the start state is not finite, or a candidate
            is inadmissible and ``problem.abort_on_invalid`` is set.

    """
    theta = np.array(problem.theta0, dtype=np.float64)
    current, frozen = _evaluate(problem, theta)
    if not np.isfinite(current.total):
        raise RegistrationError(f"{step}: objective is not finite at the start state")
    initial = current
    max_move = config.max_step_fraction * bbox_diagonal
    damping_factor = 1.0
    stalls = 0
    trace: list[TraceRecord] = []
    reason = "max_iters"
    iteration = 0
    log = logger.bind(event="step_progress")

    for iteration in range(1, config.max_iters + 1):
        if current.total <= _EXACT_FIT:
            reason = "converged"
            iteration -= 1
            break

        k = theta.shape[0]
        hess = np.zeros((k, k))
        grad = np.zeros_like(theta)
        for f in frozen:
            h, g = _normal_equations(f, theta)
            hess += h
            grad += g
        if problem.regularizer is not None and problem.regularizer.weight > 0:
            hess += problem.regularizer.normal_matrix()
            grad += problem.regularizer.normal_matrix() @ theta
        scale = max(float(np.mean(np.diag(hess))), 1e-12)
        mu = config.damping * damping_factor * scale
        try:
            delta = np.linalg.solve(hess + mu * np.eye(k), -grad)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(hess + mu * np.eye(k), -grad, rcond=None)[0]

        moves = [np.linalg.norm(p.basis @ delta, axis=1).max(initial=0.0) for p in problem.parts]
        length = max(moves) if moves else 0.0
        if length > max_move:
            delta *= max_move / length
            length = max_move
        if length < config.min_step:
            reason = "converged"
            break

        accepted = False
        invalid_only = True
        trial_length = length
        for _ in range(config.max_backtracks + 1):
            if trial_length < config.min_step:
                break
            candidate = theta + delta
            problem_reason = None
            if problem.check is not None:
                for part in problem.parts:
                    problem_reason = problem.check(part.points(candidate), candidate)
                    if problem_reason:
                        break
            if problem_reason:
                if problem.abort_on_invalid:
                    raise RegistrationError(f"{step}: {problem_reason}")
                log.debug(f"{step} iteration {iteration}: rejected ({problem_reason})")
            else:
                invalid_only = False
                try:
                    trial, trial_frozen = _evaluate(problem, candidate)
                except DegenerateGeometryError as exc:
                    log.debug(f"{step} iteration {iteration}: rejected ({exc})")
                    trial = None
                if trial is not None and np.isfinite(trial.total) and trial.total < current.total:
                    improvement = current.total - trial.total
                    theta, current, frozen = candidate, trial, trial_frozen
                    accepted = True
                    break
            delta *= config.backtrack_factor
            trial_length *= config.backtrack_factor

        if accepted:
            damping_factor = max(damping_factor / 3.0, 1e-6)
            stalls = 0 if improvement >= config.improvement_tol else stalls + 1
        else:
            damping_factor *= 10.0
            stalls += 1

        trace.append(
            TraceRecord(
                step=step,
                iteration=iteration,
                accepted=accepted,
                total=current.total,
                surface_term=current.surface_term,
                centerline_term=current.centerline_term,
                regularization_term=current.regularization_term,
                step_length=trial_length if accepted else 0.0,
            )
        )
        log.debug(f"{step} iteration {iteration}: E={current.total:.6g} accepted={accepted}")

        if not accepted and trial_length < config.min_step:
            reason = problem.invalid_reason if invalid_only else "step_underflow"
            logger.warning(
                f"{step}: no admissible step above {config.min_step} mm "
                f"after iteration {iteration} ({reason})"
            )
            break
        if not accepted and invalid_only and problem.invalid_reason == "fold_over":
            reason = "fold_over"
            logger.warning(
                f"{step}: fold-over persists after {config.max_backtracks} halvings, "
                "keeping the best state"
            )
            break
        if stalls >= config.patience:
            reason = "patience"
            break
    else:
        iteration = config.max_iters

    return OptimizationResult(
        theta=theta,
        breakdown=current,
        initial=initial,
        reason=reason,
        iterations=iteration,
        trace=trace,
    )
