"""Feasibility projection, divergence, and optimality certificates.

``round_to_feasible`` maps any nonnegative matrix onto the transportation
polytope by two capped scalings plus a rank-one correction; the output
marginals match exactly up to rounding.  ``kkt_residual`` certifies a
primal-dual pair through the relative KKT residual, with the row potential
recovered by the c-transform so the dual side is feasible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import LogPlan


@dataclass(frozen=True)
class FeasiblePlan:
    """Dense nonnegative matrix with exact marginals."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", np.asarray(self.entries, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class KktReport:
    """Normalized primal, dual, and complementarity residuals."""

    delta_p: float
    delta_d: float
    delta_c: float
    delta_kkt: float
    zeta_used: np.ndarray = field(repr=False)


def round_to_feasible(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> FeasiblePlan:
    """Project a nonnegative matrix onto the transportation polytope.

    Rows are scaled down to cap each row sum at ``a_i``, then the columns
    of the row-scaled matrix are scaled down to cap each column sum at
    ``b_j``; the remaining mass deficit is restored by the rank-one update
    ``outer(e_r, e_c) / sum(e_r)``.  An input that is already feasible
    passes through bitwise.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    row_sums = x.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(row_sums > 0.0, np.minimum(a / row_sums, 1.0), 1.0)
    f = x * z[:, None]
    col_sums = f.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(col_sums > 0.0, np.minimum(b / col_sums, 1.0), 1.0)
    f = f * y[None, :]
    e_r = a - f.sum(axis=1)
    e_c = b - f.sum(axis=0)
    deficit = float(np.abs(e_r).sum())
    if deficit > 0.0:
        f = f + np.outer(e_r, e_c) / deficit
    return FeasiblePlan(f)


def bregman_div(x: np.ndarray, logy: LogPlan) -> float:
    """Divergence ``sum x (log x - log y) - sum x + sum y``.

    The second argument is read directly from its stored (floored) log
    entries, so no logarithm of a linear-scale value is ever taken; zero
    entries of ``x`` contribute nothing, and mass aligned with floored
    entries of ``logy`` yields a large but finite penalty.
    """
    x = np.asarray(x, dtype=np.float64)
    log_y = logy.log_entries
    positive = x > 0.0
    safe_x = np.where(positive, x, 1.0)
    terms = np.where(positive, x * (np.log(safe_x) - log_y), 0.0)
    return float(terms.sum() - x.sum() + np.exp(log_y).sum())


def c_transform(gamma: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Tightest row potential for a given column potential: row minima of C - gamma."""
    return (cost - np.asarray(gamma)[None, :]).min(axis=1)


def kkt_residual(
    x: np.ndarray, gamma: np.ndarray, cost: np.ndarray, a: np.ndarray, b: np.ndarray
) -> KktReport:
    """Relative KKT residual of a primal matrix and a column dual.

    The row potential is recovered by the c-transform, which makes the
    dual slack matrix nonnegative entrywise; the dual residual is then
    identically zero and the certificate reduces to primal feasibility
    plus complementarity.
    """
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    shifted = cost - gamma[None, :]
    zeta = shifted.min(axis=1)
    slack = shifted - zeta[:, None]
    cost_scale = 1.0 + float(np.linalg.norm(cost))
    delta_p = max(
        float(np.linalg.norm(x.sum(axis=1) - a)) / (1.0 + float(np.linalg.norm(a))),
        float(np.linalg.norm(x.sum(axis=0) - b)) / (1.0 + float(np.linalg.norm(b))),
        float(np.linalg.norm(np.minimum(x, 0.0))) / (1.0 + float(np.linalg.norm(x))),
    )
    delta_d = float(np.linalg.norm(np.minimum(slack, 0.0))) / cost_scale
    delta_c = abs(float((x * slack).sum())) / cost_scale
    return KktReport(
        delta_p=delta_p,
        delta_d=delta_d,
        delta_c=delta_c,
        delta_kkt=max(delta_p, delta_d, delta_c),
        zeta_used=zeta,
    )


def gap(x_rounded: FeasiblePlan, cost: np.ndarray, optimal_value: float) -> float:
    """Absolute objective gap of a feasible plan against a reference value."""
    return abs(float((cost * x_rounded.entries).sum()) - optimal_value)
