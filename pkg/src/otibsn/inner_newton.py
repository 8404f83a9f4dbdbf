"""Sparsified Newton iterations on the semi-dual objective.

Each step thresholds the row-softmax matrix at a gradient-scaled level,
solves the shifted system ``(H_rho + ||g|| I) d = -g`` by conjugate
gradients, and backtracks until the Armijo decrease holds.  The inner loop
stops once a cheap gradient pre-check passes and the divergence between
the projected and unprojected plan candidates falls below the outer
tolerance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import InnerScale, LogPlan, OtProblem, SolverConfig
from .errors import LineSearchStalled
from .feasibility import bregman_div, round_to_feasible
from .krylov import cg_solve
from .semidual import (
    DualState,
    RowSoftmaxCache,
    compute_p,
    semidual_gradient,
    semidual_value,
)
from .sparsify import SparseHessianOp, choose_anchor, sparsify_p, threshold_rho

# Backtracking beyond this many trials indicates NaN contamination or
# extreme conditioning; the finite lower bound on accepted steps makes an
# honest run terminate far earlier.
LINE_SEARCH_CAP = 200

# Below this gradient norm a Newton step cannot make progress in double
# precision; the loop reports GradFloor instead of stalling.
GRAD_HARD_FLOOR = 1e-15


class StopReason(enum.Enum):
    INEXACT_CRITERION = "inexact_criterion"
    GRAD_FLOOR = "grad_floor"
    MAX_INNER = "max_inner"


@dataclass(frozen=True)
class InnerReport:
    """Diagnostics of one inner solve."""

    newton_iters: int
    cg_iters_total: int
    final_grad_norm: float
    stop_reason: StopReason
    step_sizes: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class NewtonStepRecord:
    """Observer payload emitted after each accepted step."""

    outer_k: int
    inner_v: int
    gamma: np.ndarray = field(repr=False)
    grad_norm: float = 0.0
    step: float = 0.0
    cg_iters: int = 0
    value_before: float = 0.0
    value_after: float = 0.0
    slope: float = 0.0


def _armijo_search(
    logplan: LogPlan,
    gamma_arr: np.ndarray,
    direction: np.ndarray,
    value0: float,
    slope: float,
    problem: OtProblem,
    eta: float,
    sigma: float,
    beta: float,
    generation: int,
) -> tuple[DualState, RowSoftmaxCache, float, float]:
    t = 1.0
    for _ in range(LINE_SEARCH_CAP):
        trial = DualState(gamma_arr + t * direction, generation=generation)
        cache = compute_p(logplan, trial, problem, eta)
        value = semidual_value(cache, trial, problem, eta)
        if value <= value0 + sigma * t * slope:
            return trial, cache, value, t
        t *= beta
    raise LineSearchStalled(f"no Armijo step accepted after {LINE_SEARCH_CAP} trials")


def _step_from_cache(
    logplan: LogPlan,
    gamma: DualState,
    cache: RowSoftmaxCache,
    value: float,
    grad: np.ndarray,
    problem: OtProblem,
    eta: float,
    sigma: float,
    beta: float,
    cg_rel_tol: float,
    cg_max_iters: int | None,
) -> tuple[DualState, RowSoftmaxCache, float, float, int, float]:
    """One Newton step reusing the caller's cache; returns the trial cache too."""
    m, n = problem.shape
    grad_norm = float(np.linalg.norm(grad))
    rho = threshold_rho(eta, m, n, grad_norm)
    anchor = choose_anchor(problem.source_marginal)
    p_rho = sparsify_p(cache, rho, anchor)
    op = SparseHessianOp(p_rho=p_rho, weights=problem.source_marginal, eta=eta)
    direction, cg_iters, _ = cg_solve(op, grad_norm, -grad, cg_rel_tol, cg_max_iters)
    slope = float(grad @ direction)
    new_gamma, new_cache, new_value, t = _armijo_search(
        logplan, gamma.gamma, direction, value, slope, problem, eta, sigma, beta, gamma.generation
    )
    return new_gamma, new_cache, new_value, t, cg_iters, slope


def newton_step(
    logplan: LogPlan,
    gamma: DualState,
    problem: OtProblem,
    eta: float,
    sigma: float = 1e-4,
    beta: float = 0.8,
    cg_rel_tol: float = 1e-10,
    cg_max_iters: int | None = None,
) -> tuple[DualState, float, int]:
    """Single sparsified Newton step with Armijo backtracking.

    Returns the updated dual, the accepted step size, and the CG iteration
    count.  A zero gradient returns the input unchanged with zero CG work.
    """
    cache = compute_p(logplan, gamma, problem, eta)
    grad = semidual_gradient(cache, problem)
    if float(np.linalg.norm(grad)) == 0.0:
        return gamma, 0.0, 0
    value = semidual_value(cache, gamma, problem, eta)
    new_gamma, _, _, t, cg_iters, _ = _step_from_cache(
        logplan, gamma, cache, value, grad, problem, eta, sigma, beta, cg_rel_tol, cg_max_iters
    )
    return new_gamma, t, cg_iters


def plan_candidate_log(
    logplan: LogPlan, cache: RowSoftmaxCache, gamma: DualState, problem: OtProblem, eta: float
) -> LogPlan:
    """Scaled-plan candidate ``diag(a) P`` assembled in the log domain.

    Uses the cached row log-normalizers, so entries far below the linear
    underflow threshold keep their exact log value until the floor clamps
    them.
    """
    log_a = np.log(problem.source_marginal)
    raw = (
        log_a[:, None]
        + logplan.log_entries
        + (gamma.gamma[None, :] - problem.cost) / eta
        - cache.row_logsumexp[:, None]
    )
    return LogPlan(raw)


def inner_solve(
    logplan: LogPlan,
    gamma0: DualState,
    problem: OtProblem,
    config: SolverConfig,
    mu_k: float,
    outer_k: int,
    grad_target: float | None = None,
    recenter_every: int = 0,
    observer: Callable[[NewtonStepRecord], None] | None = None,
) -> tuple[DualState, LogPlan, InnerReport]:
    """Run Newton steps until the inexactness test or an iteration limit.

    After every accepted step the loop first applies the cheap pre-check
    ``||g|| < mu_k`` and only then evaluates the divergence between the
    projected plan candidate and the candidate itself against
    ``scale * mu_k``, where the scale is min(m, n) or 1 per configuration.
    With ``grad_target`` set, the loop instead stops as soon as the
    gradient norm reaches that target (single-subproblem mode).
    """
    m, n = problem.shape
    eta = config.eta
    scale = float(min(m, n)) if config.inner_scale is InnerScale.MIN_DIM else 1.0
    floor = GRAD_HARD_FLOOR if grad_target is None else max(grad_target, GRAD_HARD_FLOOR)

    gamma = gamma0
    cache = compute_p(logplan, gamma, problem, eta)
    grad = semidual_gradient(cache, problem)
    grad_norm = float(np.linalg.norm(grad))
    value = semidual_value(cache, gamma, problem, eta)

    step_sizes: list[float] = []
    cg_total = 0
    stop = StopReason.MAX_INNER
    candidate: LogPlan | None = None

    for v in range(1, config.max_inner + 1):
        if grad_norm <= floor:
            stop = StopReason.GRAD_FLOOR
            break
        value_before = value
        gamma, cache, value, t, cg_iters, slope = _step_from_cache(
            logplan, gamma, cache, value, grad, problem, eta,
            config.armijo_sigma, config.armijo_beta, config.cg_rel_tol, config.cg_max_iters,
        )
        step_sizes.append(t)
        cg_total += cg_iters
        grad = semidual_gradient(cache, problem)
        grad_norm = float(np.linalg.norm(grad))
        if recenter_every and v % recenter_every == 0:
            gamma = DualState(gamma.gamma - gamma.gamma.sum() / n, generation=gamma.generation)
            cache = compute_p(logplan, gamma, problem, eta)
            grad = semidual_gradient(cache, problem)
            grad_norm = float(np.linalg.norm(grad))
            value = semidual_value(cache, gamma, problem, eta)
        if observer is not None:
            observer(
                NewtonStepRecord(
                    outer_k=outer_k,
                    inner_v=v,
                    gamma=gamma.gamma.copy(),
                    grad_norm=grad_norm,
                    step=t,
                    cg_iters=cg_iters,
                    value_before=value_before,
                    value_after=value,
                    slope=slope,
                )
            )
        if grad_target is None and grad_norm < mu_k:
            candidate = plan_candidate_log(logplan, cache, gamma, problem, eta)
            rounded = round_to_feasible(
                candidate.dense(), problem.source_marginal, problem.target_marginal
            )
            if bregman_div(rounded.entries, candidate) <= scale * mu_k:
                stop = StopReason.INEXACT_CRITERION
                break
        candidate = None

    if candidate is None:
        candidate = plan_candidate_log(logplan, cache, gamma, problem, eta)
    report = InnerReport(
        newton_iters=len(step_sizes),
        cg_iters_total=cg_total,
        final_grad_norm=grad_norm,
        stop_reason=stop,
        step_sizes=step_sizes,
    )
    return gamma, candidate, report
