"""Conjugate gradient for the shifted Newton system.

The solver runs matrix-free on ``A = H + shift * I`` with a zero initial
iterate.  Because the operator maps the zero-sum subspace into itself and
the right-hand side lies in that subspace, every iterate stays zero-sum up
to accumulation error; no explicit deflation of the ones direction is
needed.
"""

from __future__ import annotations

import numpy as np

from .errors import InconsistentSystem, NotPositiveDefinite


def cg_solve(
    op,
    shift: float,
    rhs: np.ndarray,
    rel_tol: float = 1e-10,
    max_iters: int | None = None,
) -> tuple[np.ndarray, int, float]:
    """Solve ``(H + shift * I) x = rhs`` by conjugate gradients.

    Parameters
    ----------
    op : object with ``matvec`` or callable
        The symmetric positive semidefinite part ``H``.
    shift : float
        Nonnegative diagonal shift.
    rhs : ndarray
        Right-hand side; when ``shift == 0`` it must be orthogonal to the
        ones vector for the system to be consistent.
    rel_tol : float
        Target on ``||A x - rhs|| / ||rhs||``.
    max_iters : int or None
        Iteration cap; None means twice the dimension.

    Returns
    -------
    (solution, iters, final_residual)

    Raises
    ------
    InconsistentSystem
        ``shift == 0`` with a right-hand side that has a ones component.
    NotPositiveDefinite
        Nonpositive curvature met before convergence (bug signal).
    """
    apply_h = op.matvec if hasattr(op, "matvec") else op
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.size
    if max_iters is None:
        max_iters = 2 * n
    rhs_norm = float(np.linalg.norm(rhs))
    if shift == 0.0 and abs(rhs.sum()) > 1e-12 * max(1.0, rhs_norm):
        raise InconsistentSystem("unshifted system with right-hand side outside the range")
    x = np.zeros(n)
    if rhs_norm == 0.0:
        return x, 0, 0.0

    r = rhs.copy()
    p = rhs.copy()
    rs = float(r @ r)
    target = rel_tol * rhs_norm
    iters = 0
    for _ in range(max_iters):
        ap = apply_h(p) + shift * p
        curvature = float(p @ ap)
        if curvature <= 0.0:
            if np.sqrt(rs) <= target:
                break
            raise NotPositiveDefinite(f"p^T A p = {curvature:.3g} before convergence")
        alpha = rs / curvature
        x += alpha * p
        r -= alpha * ap
        iters += 1
        rs_next = float(r @ r)
        if np.sqrt(rs_next) <= target:
            rs = rs_next
            break
        p = r + (rs_next / rs) * p
        rs = rs_next
    return x, iters, float(np.sqrt(rs))
