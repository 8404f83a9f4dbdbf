"""Outer proximal-point drivers over the log-domain plan iterate.

Three drivers share one loop skeleton: the sparsified-Newton solver, the
same loop with alternating dual sweeps as the inner solver, and a
single-subproblem mode that fixes the reference plan to all-ones and
solves one regularized problem to a gradient target.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import InnerScale, LogPlan, OtProblem, SolverConfig, validate
from .errors import NumericalFailure
from .feasibility import bregman_div, kkt_residual, round_to_feasible
from .inner_newton import NewtonStepRecord, inner_solve, plan_candidate_log
from .semidual import DualState, compute_p
from .sinkhorn import TwoDualState, gamma_update, scaled_plan_log, warm_start, zeta_update
from .trajectory import Trajectory, TrajectoryRecord


@dataclass(frozen=True)
class MuSchedule:
    """Inexactness tolerances ``max(mu0 / (k+1)^2, floor)``."""

    mu0: float = 1e-4
    floor: float = 1e-11


def mu(schedule: MuSchedule, k: int) -> float:
    """Tolerance of outer iteration ``k``."""
    return max(schedule.mu0 / (k + 1) ** 2, schedule.floor)


@dataclass
class OuterResult:
    """Final iterate, its feasible rounding, and per-iteration records."""

    final_logplan: LogPlan
    rounded_plan: np.ndarray = field(repr=False)
    objective: float = 0.0
    kkt: float = 0.0
    outer_iters: int = 0
    trajectory: Trajectory = field(default_factory=Trajectory)


def _metrics(logplan: LogPlan, gamma: np.ndarray, problem: OtProblem):
    rounded = round_to_feasible(logplan.dense(), problem.source_marginal, problem.target_marginal)
    objective = float((problem.cost * rounded.entries).sum())
    if not np.isfinite(objective):
        raise NumericalFailure(f"non-finite objective {objective!r}")
    report = kkt_residual(
        rounded.entries, gamma, problem.cost, problem.source_marginal, problem.target_marginal
    )
    return rounded, objective, report.delta_kkt


def ibsn_solve(
    problem: OtProblem,
    config: SolverConfig,
    optimal_value: float | None = None,
    observer: Callable[[NewtonStepRecord], None] | None = None,
    on_outer: Callable[[int, LogPlan, np.ndarray], None] | None = None,
    clock: Callable[[], float] | None = None,
    deadline_seconds: float | None = None,
) -> OuterResult:
    """Full solve: proximal outer loop with sparsified Newton inner solves.

    Each outer iteration warms up the duals by alternating updates, runs
    Newton steps until the inexactness test passes, accepts the scaled
    plan as the next iterate, and carries both dual vectors forward.  The
    loop stops early once the relative KKT residual of the rounded iterate
    drops below ``config.kkt_tol``.

    Parameters beyond the instance and configuration are diagnostics:
    ``optimal_value`` populates the trajectory gap column, ``observer``
    sees every accepted Newton step, ``on_outer`` sees every accepted
    outer iterate, ``clock`` overrides the monotonic timer, and
    ``deadline_seconds`` caps the wall-clock budget at outer boundaries.
    """
    validate(problem)
    now = clock if clock is not None else time.perf_counter
    eta = config.eta
    schedule = MuSchedule(config.mu0, config.mu_floor)
    m, n = problem.shape

    logplan = LogPlan(
        np.log(problem.source_marginal)[:, None] + np.log(problem.target_marginal)[None, :]
    )
    gamma_arr = np.zeros(n)
    zeta_arr = np.zeros(m)

    traj = Trajectory()
    t0 = now()
    inner_total = 0
    cg_total = 0
    outer_iters = 0
    kkt_value = np.inf

    for k in range(config.max_outer):
        mu_k = mu(schedule, k)
        gamma_state, zeta_arr = warm_start(
            logplan, problem, eta, config.warm_tol,
            gamma0=gamma_arr, zeta0=zeta_arr, generation=k,
        )

        inner_observer = observer
        if config.log_inner_kkt:
            inner_observer = _chain_inner_logger(
                observer, traj, problem, logplan, eta, now, t0,
                lambda: (inner_total, cg_total), optimal_value,
            )

        gamma_state, candidate, report = inner_solve(
            logplan, gamma_state, problem, config, mu_k, k, observer=inner_observer
        )
        # Row potential carried to the next subproblem, evaluated on the
        # current reference plan at the accepted dual.
        zeta_arr = zeta_update(
            logplan, TwoDualState(gamma=gamma_state.gamma, zeta=zeta_arr), problem, eta
        ).zeta
        gamma_arr = gamma_state.gamma
        logplan = candidate
        outer_iters = k + 1
        if on_outer is not None:
            on_outer(k, logplan, gamma_arr)

        inner_total += report.newton_iters
        cg_total += report.cg_iters_total
        rounded, objective, kkt_value = _metrics(logplan, gamma_arr, problem)
        traj.record(
            TrajectoryRecord(
                outer_k=k,
                inner_total=inner_total,
                cg_total=cg_total,
                wall_seconds=now() - t0,
                objective=objective,
                kkt=kkt_value,
                grad_norm=report.final_grad_norm,
                gap=None if optimal_value is None else abs(objective - optimal_value),
            )
        )
        if kkt_value < config.kkt_tol:
            break
        if deadline_seconds is not None and now() - t0 > deadline_seconds:
            break

    return OuterResult(
        final_logplan=logplan,
        rounded_plan=rounded.entries,
        objective=objective,
        kkt=kkt_value,
        outer_iters=outer_iters,
        trajectory=traj,
    )


def _chain_inner_logger(observer, traj, problem, logplan, eta, now, t0, totals, optimal_value):
    cg_seen = 0

    def logger(rec: NewtonStepRecord) -> None:
        nonlocal cg_seen
        if observer is not None:
            observer(rec)
        cg_seen += rec.cg_iters
        gamma_state = DualState(rec.gamma, generation=rec.outer_k)
        cache = compute_p(logplan, gamma_state, problem, eta)
        candidate = plan_candidate_log(logplan, cache, gamma_state, problem, eta)
        rounded, objective, kkt_value = _metrics(candidate, rec.gamma, problem)
        inner_base, cg_base = totals()
        traj.record(
            TrajectoryRecord(
                outer_k=rec.outer_k,
                inner_total=inner_base + rec.inner_v,
                cg_total=cg_base + cg_seen,
                wall_seconds=now() - t0,
                objective=objective,
                kkt=kkt_value,
                grad_norm=rec.grad_norm,
                gap=None if optimal_value is None else abs(objective - optimal_value),
            )
        )

    return logger


def ibsink_solve(
    problem: OtProblem,
    config: SolverConfig,
    optimal_value: float | None = None,
    on_outer: Callable[[int, LogPlan, np.ndarray], None] | None = None,
    clock: Callable[[], float] | None = None,
    deadline_seconds: float | None = None,
) -> OuterResult:
    """Same outer loop with alternating dual sweeps as the inner solver.

    The pre-check is the column-marginal error measured after a row
    update (the exact free-block gradient norm), followed by the same
    divergence test as the Newton driver.
    """
    validate(problem)
    now = clock if clock is not None else time.perf_counter
    eta = config.eta
    schedule = MuSchedule(config.mu0, config.mu_floor)
    m, n = problem.shape
    scale = float(min(m, n)) if config.inner_scale is InnerScale.MIN_DIM else 1.0

    logplan = LogPlan(
        np.log(problem.source_marginal)[:, None] + np.log(problem.target_marginal)[None, :]
    )
    state = TwoDualState(gamma=np.zeros(n), zeta=np.zeros(m))

    traj = Trajectory()
    t0 = now()
    sweep_total = 0
    outer_iters = 0
    kkt_value = np.inf

    for k in range(config.max_outer):
        mu_k = mu(schedule, k)
        candidate = None
        sweeps_this = 0
        err = np.inf
        for _ in range(config.max_inner):
            state = zeta_update(logplan, state, problem, eta)
            sweeps_this += 1
            chi_log = scaled_plan_log(logplan, state, problem, eta)
            err = float(np.linalg.norm(np.exp(chi_log).sum(axis=0) - problem.target_marginal))
            if err < mu_k:
                candidate = LogPlan(chi_log)
                rounded = round_to_feasible(
                    candidate.dense(), problem.source_marginal, problem.target_marginal
                )
                if bregman_div(rounded.entries, candidate) <= scale * mu_k:
                    break
                candidate = None
            state = gamma_update(logplan, state, problem, eta)
        if candidate is None:
            # Sweep cap reached; accept the latest row-exact scaled plan.
            state = zeta_update(logplan, state, problem, eta)
            sweeps_this += 1
            chi_log = scaled_plan_log(logplan, state, problem, eta)
            err = float(np.linalg.norm(np.exp(chi_log).sum(axis=0) - problem.target_marginal))
            candidate = LogPlan(chi_log)

        logplan = candidate
        outer_iters = k + 1
        sweep_total += sweeps_this
        if on_outer is not None:
            on_outer(k, logplan, state.gamma)

        rounded, objective, kkt_value = _metrics(logplan, state.gamma, problem)
        traj.record(
            TrajectoryRecord(
                outer_k=k,
                inner_total=sweep_total,
                cg_total=0,
                wall_seconds=now() - t0,
                objective=objective,
                kkt=kkt_value,
                grad_norm=err,
                gap=None if optimal_value is None else abs(objective - optimal_value),
            )
        )
        if kkt_value < config.kkt_tol:
            break
        if deadline_seconds is not None and now() - t0 > deadline_seconds:
            break

    return OuterResult(
        final_logplan=logplan,
        rounded_plan=rounded.entries,
        objective=objective,
        kkt=kkt_value,
        outer_iters=outer_iters,
        trajectory=traj,
    )


def eot_single_solve(
    problem: OtProblem,
    config: SolverConfig,
    clock: Callable[[], float] | None = None,
) -> OuterResult:
    """Solve one regularized problem with the all-ones reference plan.

    The reference log plan is fixed at zero, making the subproblem the
    entropic-regularization problem for the original cost; the Newton
    phase runs to the gradient-norm target ``config.kkt_tol``.
    """
    validate(problem)
    now = clock if clock is not None else time.perf_counter
    eta = config.eta
    m, n = problem.shape
    logplan = LogPlan(np.zeros((m, n)))

    t0 = now()
    gamma_state, _ = warm_start(logplan, problem, eta, config.warm_tol)
    gamma_state, candidate, report = inner_solve(
        logplan, gamma_state, problem, config, mu_k=0.0, outer_k=0,
        grad_target=config.kkt_tol,
    )
    rounded, objective, kkt_value = _metrics(candidate, gamma_state.gamma, problem)
    traj = Trajectory()
    traj.record(
        TrajectoryRecord(
            outer_k=0,
            inner_total=report.newton_iters,
            cg_total=report.cg_iters_total,
            wall_seconds=now() - t0,
            objective=objective,
            kkt=kkt_value,
            grad_norm=report.final_grad_norm,
        )
    )
    return OuterResult(
        final_logplan=candidate,
        rounded_plan=rounded.entries,
        objective=objective,
        kkt=kkt_value,
        outer_iters=1,
        trajectory=traj,
    )
