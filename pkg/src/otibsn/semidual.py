"""Semi-dual objective, row-softmax plan, gradient, and Hessian products.

Each proximal subproblem reduces, after eliminating the row potential, to
an unconstrained smooth minimization over the column dual ``gamma``.  The
kernels here evaluate that objective and its derivatives in log-stabilized
arithmetic: every exponent is shifted by its row maximum before
exponentiation, so the computations stay finite even when the exponents
reach magnitudes of 1e4 and beyond.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import LogPlan, OtProblem
from .errors import NumericalOverflow


@dataclass(frozen=True)
class DualState:
    """Inner dual variable (length n) tagged with its outer generation.

    Iterates produced by the inner solver stay in the zero-sum slice
    ``sum(gamma) == 0`` up to rounding.
    """

    gamma: np.ndarray = field(repr=False)
    generation: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "gamma", np.ascontiguousarray(np.asarray(self.gamma, dtype=np.float64))
        )


@dataclass(frozen=True)
class RowSoftmaxCache:
    """Row-stochastic matrix P and the per-row stabilized log-normalizers.

    ``p[i, j]`` is the softmax over j of ``log X_ij + (gamma_j - C_ij)/eta``
    and ``row_logsumexp[i]`` is the log of that row's normalizer, computed
    with the row maximum subtracted.
    """

    p: np.ndarray = field(repr=False)
    row_logsumexp: np.ndarray = field(repr=False)


def _row_logits(logplan: LogPlan, gamma: np.ndarray, problem: OtProblem, eta: float) -> np.ndarray:
    return logplan.log_entries + (gamma[None, :] - problem.cost) / eta


def compute_p(logplan: LogPlan, gamma: DualState, problem: OtProblem, eta: float) -> RowSoftmaxCache:
    """Evaluate the row-softmax matrix for the current plan and dual.

    Parameters
    ----------
    logplan : LogPlan
        Reference plan of the current subproblem, in the log domain.
    gamma : DualState
        Column dual variable.
    problem : OtProblem
        Instance supplying the cost matrix.
    eta : float
        Regularization strength (> 0).

    Returns
    -------
    RowSoftmaxCache
        Row-stochastic matrix and per-row log-normalizers.

    Raises
    ------
    NumericalOverflow
        If a non-finite value survives stabilization (bug signal).
    """
    logits = _row_logits(logplan, gamma.gamma, problem, eta)
    row_max = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - row_max)
    row_sum = shifted.sum(axis=1, keepdims=True)
    p = shifted / row_sum
    lse = row_max[:, 0] + np.log(row_sum[:, 0])
    if not np.isfinite(p).all() or not np.isfinite(lse).all():
        raise NumericalOverflow("row softmax produced non-finite values after stabilization")
    return RowSoftmaxCache(p=p, row_logsumexp=lse)


def semidual_value(cache: RowSoftmaxCache, gamma: DualState, problem: OtProblem, eta: float) -> float:
    """Semi-dual objective at ``gamma``, reusing the cached log-normalizers."""
    return float(
        -problem.target_marginal @ gamma.gamma
        + eta * (problem.source_marginal @ cache.row_logsumexp)
    )


def semidual_gradient(cache: RowSoftmaxCache, problem: OtProblem) -> np.ndarray:
    """Gradient ``P^T a - b``; its entries sum to zero up to rounding."""
    return cache.p.T @ problem.source_marginal - problem.target_marginal


def hessian_matvec_exact(
    cache: RowSoftmaxCache, problem: OtProblem, eta: float, v: np.ndarray
) -> np.ndarray:
    """Apply the exact Hessian ``(diag(P^T a) - P^T diag(a) P) / eta`` to v.

    The n-by-n matrix is never materialized; the product costs two dense
    mat-vecs with P.
    """
    a = problem.source_marginal
    col_weights = cache.p.T @ a
    pv = cache.p @ v
    return (col_weights * v - cache.p.T @ (a * pv)) / eta


def zeta_from_cache(cache: RowSoftmaxCache, problem: OtProblem, eta: float) -> np.ndarray:
    """Optimal row potential implied by the cached log-normalizers."""
    return eta * (np.log(problem.source_marginal) - cache.row_logsumexp)
