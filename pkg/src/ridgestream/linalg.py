"""Dense kernels and the batched inverse-Cholesky factorizations.

Every factor returned here is upper-triangular with a positive diagonal and
satisfies ``F @ F.T == inv(R)`` for the SPD matrix ``R`` it was built from.
The two batched routines never factor (or invert) anything larger than
``batch x batch``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

__all__ = [
    "BatchConfig",
    "NotSPDError",
    "matmul",
    "symmetrize",
    "spd_inverse_chol_small",
    "upper_sqrt",
    "inv_chol",
    "phi_chol",
    "triangular_solve",
    "inverse_residual",
    "batch_slices",
]


class NotSPDError(np.linalg.LinAlgError):
    """A nonpositive pivot was met while factoring a matrix that should be SPD.

    Attributes
    ----------
    pivot_index : int
        Row/column of the failing pivot inside the factored block.
    pivot : float
        Value of the failing pivot (NaN when the input was not finite).
    batch_index : int or None
        Index of the batch being processed, filled in by the batched callers.
    """

    def __init__(self, pivot_index, pivot, batch_index=None, where=""):
        self.pivot_index = int(pivot_index)
        self.pivot = float(pivot)
        self.batch_index = batch_index
        self.where = where
        super().__init__(self._message())

    def _message(self):
        parts = [f"matrix is not positive definite: pivot {self.pivot_index} = {self.pivot:.3e}"]
        if self.batch_index is not None:
            parts.append(f"batch {self.batch_index}")
        if self.where:
            parts.append(self.where)
        return ", ".join(parts)

    def at(self, batch_index=None, where=None):
        """Return a copy tagged with the batch index / location."""
        return NotSPDError(
            self.pivot_index,
            self.pivot,
            self.batch_index if batch_index is None else batch_index,
            self.where if where is None else where,
        )


@dataclass(frozen=True)
class BatchConfig:
    """Ridge parameter and batch size shared by every learner."""

    lam: float
    batch: int

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise ValueError(f"ridge parameter must be positive, got {self.lam!r}")
        if int(self.batch) != self.batch or self.batch < 1:
            raise ValueError(f"batch size must be a positive integer, got {self.batch!r}")


def batch_slices(n, batch):
    """Consecutive slices of width ``batch``; the last one may be shorter."""
    return [slice(s, min(s + batch, n)) for s in range(0, n, batch)]


def matmul(a, b):
    """Matrix product with a fixed accumulation order.

    ``out[i, j]`` is accumulated as ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``
    with separately rounded multiplies and adds, exactly like a naive triple
    loop.  Results therefore do not depend on how many rows ``a`` has, which
    BLAS does not guarantee.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    tmp = np.empty_like(out)
    for t in range(a.shape[1]):
        np.multiply(a[:, t : t + 1], b[t : t + 1, :], out=tmp)
        out += tmp
    return out


def symmetrize(r):
    return 0.5 * (r + r.T)


def _failing_pivot(r, index):
    # Unblocked Cholesky up to the failing column, only used on the error path.
    n = index + 1
    low = np.zeros((n, n))
    for j in range(n):
        d = r[j, j] - low[j, :j] @ low[j, :j]
        if j == index or d <= 0 or not np.isfinite(d):
            return j, d
        low[j, j] = np.sqrt(d)
        low[j + 1 : n, j] = (r[j + 1 : n, j] - low[j + 1 : n, :j] @ low[j, :j]) / low[j, j]
    return index, np.nan


def _cholesky_lower(r):
    if not np.all(np.isfinite(r)):
        raise NotSPDError(0, np.nan, where="non-finite input")
    low, info = lapack.dpotrf(r, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        idx, piv = _failing_pivot(r, info - 1)
        raise NotSPDError(idx, piv)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return low


def spd_inverse_chol_small(r):
    """Upper-triangular ``G`` with ``G @ G.T == inv(r)``.

    Lower Cholesky ``r = L L^T`` followed by ``G = inv(L).T``.  Used for every
    block of at most ``batch x batch``.

    Raises
    ------
    NotSPDError
        If a nonpositive pivot is met.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {r.shape}")
    if r.shape[0] == 0:
        return np.zeros((0, 0))
    low = _cholesky_lower(symmetrize(r))
    inv_low, info = lapack.dtrtri(low, lower=1)
    if info != 0:
        raise NotSPDError(info - 1, 0.0, where="singular triangular factor")
    return np.triu(inv_low.T)


def upper_sqrt(m):
    """Upper-triangular ``V`` with positive diagonal and ``V @ V.T == m``.

    The ordinary Cholesky factorization of ``J m J`` (``J`` the exchange
    matrix) gives ``V = J L J``.
    """
    m = np.asarray(m, dtype=np.float64)
    k = m.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    flipped = np.ascontiguousarray(symmetrize(m)[::-1, ::-1])
    try:
        low = _cholesky_lower(flipped)
    except NotSPDError as err:
        raise NotSPDError(k - 1 - err.pivot_index, err.pivot, where=err.where) from None
    return np.triu(low[::-1, ::-1])


def inv_chol(r, batch):
    """Batched inverse Cholesky factor of an SPD matrix.

    Builds ``F`` one block column at a time::

        Fb Fb^T = (R_bb - Rt^T F F^T Rt)^-1
        Ft      = -F F^T Rt Fb
        F      <- [[F, Ft], [0, Fb]]

    where ``Rt`` is the block of ``r`` above the diagonal block ``R_bb``.
    Only ``batch x batch`` blocks are factored; the last block may be
    narrower when ``batch`` does not divide the order.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {r.shape}")
    k = r.shape[0]
    f = np.zeros((k, k))
    for idx, sl in enumerate(batch_slices(k, batch)):
        s, e = sl.start, sl.stop
        try:
            if s == 0:
                f[:e, :e] = spd_inverse_chol_small(r[:e, :e])
                continue
            t = f[:s, :s].T @ r[:s, s:e]
            fb = spd_inverse_chol_small(r[s:e, s:e] - t.T @ t)
        except NotSPDError as err:
            raise err.at(batch_index=idx, where="inv_chol") from None
        f[:s, s:e] = -(f[:s, :s] @ (t @ fb))
        f[s:e, s:e] = fb
    return f


def phi_chol(a, lam, batch):
    """Batched inverse Cholesky factor of ``a.T @ a + lam * I``.

    Same block recursion as :func:`inv_chol`, but the Gram blocks are formed
    from the columns of ``a`` batch by batch, so the ``k x k`` Gram matrix is
    never stored.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if not lam > 0:
        raise ValueError(f"ridge parameter must be positive, got {lam!r}")
    k = a.shape[1]
    f = np.zeros((k, k))
    for idx, sl in enumerate(batch_slices(k, batch)):
        s, e = sl.start, sl.stop
        ab = a[:, s:e]
        gram = ab.T @ ab
        gram[np.diag_indices_from(gram)] += lam
        try:
            if s == 0:
                f[:e, :e] = spd_inverse_chol_small(gram)
                continue
            t = f[:s, :s].T @ (a[:, :s].T @ ab)
            fb = spd_inverse_chol_small(gram - t.T @ t)
        except NotSPDError as err:
            raise err.at(batch_index=idx, where="phi_chol") from None
        f[:s, s:e] = -(f[:s, :s] @ (t @ fb))
        f[s:e, s:e] = fb
    return f


def triangular_solve(t, b, lower=False, trans=False):
    """Solve ``t x = b`` (or ``t.T x = b``) for triangular ``t``."""
    t = np.asarray(t, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {t.shape} vs {b.shape}")
    return solve_triangular(t, b, lower=lower, trans=1 if trans else 0)


def inverse_residual(f, r):
    """Induced infinity norm of ``F F^T r - I``."""
    k = r.shape[0]
    return float(np.linalg.norm(f @ (f.T @ r) - np.eye(k), np.inf))
