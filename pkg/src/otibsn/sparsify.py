"""Thresholded row-stochastic sparsification and the sparse Hessian operator.

The row-softmax matrix P is compressed by dropping entries below a
threshold and renormalizing each surviving row, except for one protected
anchor row (the row of the heaviest source weight) which is kept dense and
unmodified.  The anchor guarantees that the resulting Hessian
approximation keeps the ones vector as its entire kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.linalg import null_space as scipy_null_space

from .errors import TestOnlyLimit
from .semidual import RowSoftmaxCache

# Densification cap for the test-only spectral helper.
_SPECTRAL_MAX_DIM = 64


def choose_anchor(a: np.ndarray) -> int:
    """Smallest index attaining ``max(a)``."""
    return int(np.argmax(a))


def threshold_rho(eta: float, m: int, n: int, grad_norm: float) -> float:
    """Adaptive sparsification threshold ``eta * grad_norm / (m * n)``."""
    return eta * grad_norm / (m * n)


@dataclass
class SparseRowStochastic:
    """Compressed-row storage of the thresholded matrix plus its anchor row.

    The m-1 non-anchor rows are stored in CSR order (original row order
    with the anchor skipped); ``anchor_row`` is the untouched dense row.
    Each stored row sums to one and every stored value is positive.
    """

    row_offsets: np.ndarray = field(repr=False)
    col_indices: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    anchor_index: int
    anchor_row: np.ndarray = field(repr=False)
    n_cols: int

    def __post_init__(self):
        n_rows = len(self.row_offsets) - 1
        self._csr = sps.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=(n_rows, self.n_cols)
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self._csr.shape[0] + 1, self.n_cols)

    def nnz(self) -> int:
        return int(self.values.size) + int(self.anchor_row.size)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Full product P_rho @ v, anchor row included (length m)."""
        out = np.empty(self.shape[0])
        off = self._csr @ v
        i = self.anchor_index
        out[:i] = off[:i]
        out[i] = self.anchor_row @ v
        out[i + 1 :] = off[i:]
        return out

    def rmatvec(self, w: np.ndarray) -> np.ndarray:
        """Full product P_rho^T @ w for a length-m vector w."""
        i = self.anchor_index
        w_off = np.concatenate((w[:i], w[i + 1 :]))
        return self._csr.T @ w_off + self.anchor_row * w[i]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        i = self.anchor_index
        off = self._csr.toarray()
        out[:i] = off[:i]
        out[i] = self.anchor_row
        out[i + 1 :] = off[i:]
        return out


def sparsify_p(cache: RowSoftmaxCache, rho: float, anchor: int) -> SparseRowStochastic:
    """Threshold P at ``rho`` and renormalize rows, keeping the anchor dense.

    For each non-anchor row, entries ``>= rho`` are kept and divided by
    their sum.  A row whose entries all fall below the threshold keeps its
    single largest entry with value 1, preserving row-stochasticity.
    """
    p = cache.p
    m, n = p.shape
    # Exact zeros (underflowed entries) carry no mass and are never stored.
    keep = (p >= rho) & (p > 0.0)
    keep[anchor, :] = False

    kept_rows = keep.any(axis=1)
    kept_rows[anchor] = True
    fallback = np.flatnonzero(~kept_rows)
    if fallback.size:
        keep[fallback, np.argmax(p[fallback], axis=1)] = True

    kept_sums = np.where(keep, p, 0.0).sum(axis=1)
    kept_sums[anchor] = 1.0

    off_rows = np.concatenate((np.arange(anchor), np.arange(anchor + 1, m)))
    keep_off = keep[off_rows]
    counts = keep_off.sum(axis=1)
    row_offsets = np.zeros(m, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    local_rows, col_indices = np.nonzero(keep_off)
    values = p[off_rows[local_rows], col_indices] / kept_sums[off_rows[local_rows]]

    return SparseRowStochastic(
        row_offsets=row_offsets,
        col_indices=col_indices.astype(np.int64),
        values=values,
        anchor_index=anchor,
        anchor_row=p[anchor].copy(),
        n_cols=n,
    )


@dataclass
class SparseHessianOp:
    """Matrix-free operator ``(diag(P_rho^T a) - P_rho^T diag(a) P_rho)/eta``.

    ``diag_cache`` holds the column weights ``P_rho^T a`` computed once at
    construction; they are reused by every CG iteration of a Newton step.
    """

    p_rho: SparseRowStochastic
    weights: np.ndarray = field(repr=False)
    eta: float
    diag_cache: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.diag_cache is None:
            self.diag_cache = self.p_rho.rmatvec(self.weights)

    @property
    def dim(self) -> int:
        return self.p_rho.n_cols

    def matvec(self, v: np.ndarray) -> np.ndarray:
        pv = self.p_rho.matvec(v)
        return (self.diag_cache * v - self.p_rho.rmatvec(self.weights * pv)) / self.eta

    def dense(self) -> np.ndarray:
        """Materialize the operator (test helper; avoid in production paths)."""
        p = self.p_rho.dense()
        w = p.T @ self.weights
        return (np.diag(w) - p.T @ (self.weights[:, None] * p)) / self.eta


def hessian_matvec_sparse(op: SparseHessianOp, v: np.ndarray) -> np.ndarray:
    """Apply the sparsified Hessian to ``v`` at cost O(nnz(P_rho) + n)."""
    return op.matvec(v)


def spectral_bounds_check(op: SparseHessianOp) -> tuple[float, float]:
    """Extreme eigenvalues of the densified operator (test-only helper).

    Returns ``(lambda_min_perp, lambda_max)``: the smallest eigenvalue of
    the restriction to the orthogonal complement of the ones vector, and
    the largest eigenvalue overall.

    Raises
    ------
    TestOnlyLimit
        If the dimension exceeds the densification cap.
    """
    n = op.dim
    if n > _SPECTRAL_MAX_DIM:
        raise TestOnlyLimit(f"dense eigendecomposition capped at n <= {_SPECTRAL_MAX_DIM}")
    h = op.dense()
    h = (h + h.T) / 2.0
    lam_max = float(np.linalg.eigvalsh(h)[-1])
    if n == 1:
        return 0.0, lam_max
    basis = scipy_null_space(np.ones((1, n)))
    restricted = basis.T @ h @ basis
    lam_min_perp = float(np.linalg.eigvalsh(restricted)[0])
    return lam_min_perp, lam_max
