"""Problem representation, validation, and solver configuration.

All types are immutable after construction and safe to share across
threads; the operations here are pure functions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidCost,
    MarginalNotNormalized,
    MarginalNotPositive,
    ShapeMismatch,
)

# Log-plan entries below this value are clamped.  exp(LOG_FLOOR) underflows
# to exactly 0.0, so a floored entry behaves as the intended zero while
# divergence and ratio computations stay finite.
LOG_FLOOR = -1e6

# Tolerance on |sum(marginal) - 1| accepted by validate().
MARGINAL_SUM_TOL = 1e-12


def _as_float_array(x, ndim: int) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if arr.ndim != ndim:
        raise ShapeMismatch(f"expected {ndim}-dimensional array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class OtProblem:
    """Immutable transport instance: cost matrix and the two marginals.

    Parameters
    ----------
    cost : ndarray, shape (m, n)
        Nonnegative cost matrix.
    source_marginal : ndarray, shape (m,)
        Strictly positive weights summing to one.
    target_marginal : ndarray, shape (n,)
        Strictly positive weights summing to one.
    """

    cost: np.ndarray
    source_marginal: np.ndarray
    target_marginal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cost", _as_float_array(self.cost, 2))
        object.__setattr__(self, "source_marginal", _as_float_array(self.source_marginal, 1))
        object.__setattr__(self, "target_marginal", _as_float_array(self.target_marginal, 1))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape


class InnerScale(enum.Enum):
    """Scale factor applied to the inexactness tolerance in the inner test."""

    MIN_DIM = "min_dim"
    ONE = "one"


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters shared by all outer-loop drivers.

    Parameters
    ----------
    eta : float
        Proximal regularization strength (> 0).
    mu0 : float
        Initial inexactness tolerance of the outer schedule.
    mu_floor : float
        Lower bound on the inexactness tolerance.
    inner_scale : InnerScale
        Whether the inner divergence test is scaled by min(m, n) or not.
    warm_tol : float
        Gradient-norm target of the alternating-update warm start.
    kkt_tol : float
        Relative KKT residual at which the outer loop stops.
    max_outer, max_inner : int
        Iteration caps for the outer loop and each inner solve.
    cg_rel_tol : float
        Relative residual target of the conjugate-gradient solver.
    cg_max_iters : int or None
        CG iteration cap; None means twice the system dimension.
    armijo_sigma, armijo_beta : float
        Sufficient-decrease coefficient and backtracking ratio, in (0, 1).
    seed : int
        Seed recorded alongside generated instances.
    log_inner_kkt : bool
        Record a trajectory row after every inner iteration as well.
    """

    eta: float
    mu0: float = 1e-4
    mu_floor: float = 1e-11
    inner_scale: InnerScale = InnerScale.MIN_DIM
    warm_tol: float = 1e-3
    kkt_tol: float = 1e-11
    max_outer: int = 300
    max_inner: int = 500
    cg_rel_tol: float = 1e-10
    cg_max_iters: int | None = None
    armijo_sigma: float = 1e-4
    armijo_beta: float = 0.8
    seed: int = 0
    log_inner_kkt: bool = False

    def __post_init__(self):
        for name in ("eta", "mu0", "mu_floor", "warm_tol", "kkt_tol", "cg_rel_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("armijo_sigma", "armijo_beta"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        for name in ("max_outer", "max_inner"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class LogPlan:
    """Dense transport plan stored entrywise in the log domain.

    Entries are clamped at ``LOG_FLOOR`` on construction so that every
    stored value is finite while ``exp`` of a floored entry is exactly 0.
    """

    log_entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _as_float_array(self.log_entries, 2)
        if np.isnan(arr).any() or (arr == np.inf).any():
            raise InvalidCost("log plan contains NaN or +inf entries")
        object.__setattr__(self, "log_entries", np.maximum(arr, LOG_FLOOR))

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_entries.shape

    def dense(self) -> np.ndarray:
        """Entrywise exponential; floored entries come back as exact zeros."""
        return np.exp(self.log_entries)

    def total_mass(self) -> float:
        return float(self.dense().sum())


def normalize_cost(raw_cost) -> np.ndarray:
    """Scale a cost matrix to unit infinity norm.

    Returns ``raw_cost / max(raw_cost)``; an all-zero matrix is returned
    unchanged.  The operation is idempotent bitwise.
    """
    cost = _as_float_array(raw_cost, 2)
    if cost.size == 0:
        raise InvalidCost("cost matrix is empty")
    if np.isnan(cost).any() or np.isinf(cost).any():
        raise InvalidCost("cost matrix contains NaN or infinite entries")
    if (cost < 0).any():
        raise InvalidCost("cost matrix contains negative entries")
    peak = cost.max()
    if peak == 0.0:
        return cost.copy()
    return cost / peak


def validate(problem: OtProblem) -> None:
    """Check every instance invariant, raising on the first violation.

    Raises
    ------
    ShapeMismatch, InvalidCost, MarginalNotPositive, MarginalNotNormalized
    """
    cost, a, b = problem.cost, problem.source_marginal, problem.target_marginal
    m, n = cost.shape
    if m == 0 or n == 0:
        raise ShapeMismatch("cost matrix must be nonempty")
    if a.shape[0] != m:
        raise ShapeMismatch(f"source marginal has length {a.shape[0]}, cost has {m} rows")
    if b.shape[0] != n:
        raise ShapeMismatch(f"target marginal has length {b.shape[0]}, cost has {n} columns")
    if np.isnan(cost).any() or np.isinf(cost).any():
        raise InvalidCost("cost matrix contains NaN or infinite entries")
    if (cost < 0).any():
        raise InvalidCost("cost matrix contains negative entries")
    for name, vec in (("source", a), ("target", b)):
        if not np.isfinite(vec).all() or (vec <= 0).any():
            raise MarginalNotPositive(f"{name} marginal has nonpositive or non-finite entries")
    for name, vec in (("source", a), ("target", b)):
        drift = abs(vec.sum() - 1.0)
        if drift > MARGINAL_SUM_TOL:
            raise MarginalNotNormalized(
                f"{name} marginal sums to {vec.sum():.17g} (|drift| = {drift:.3g} > {MARGINAL_SUM_TOL:g})"
            )


def initial_plan(problem: OtProblem) -> LogPlan:
    """Product-measure start: log entries ``log a_i + log b_j``."""
    log_a = np.log(problem.source_marginal)
    log_b = np.log(problem.target_marginal)
    return LogPlan(log_a[:, None] + log_b[None, :])
