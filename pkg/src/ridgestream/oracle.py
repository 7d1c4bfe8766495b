"""Full-memory reference solutions for differential testing.

Nothing here imports :mod:`ridgestream.linalg`: the direct solve is LU with
partial pivoting on the explicitly formed normal equations, and the update
references apply each step to the whole new block at once with explicit
inverses.  Memory use is unbounded on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "OracleSolution",
    "direct_ridge",
    "oracle_initial_factor",
    "oracle_input_update_recursive",
    "oracle_input_update_sqrt",
    "oracle_node_update",
    "relative_error",
]


@dataclass(frozen=True)
class OracleSolution:
    w: np.ndarray
    residual: float  # ||(A^T A + lam I) w - A^T Y||_inf


def direct_ridge(a, y, lam):
    """``(A^T A + lam I)^-1 A^T Y`` by a dense LU solve."""
    if not lam > 0:
        raise ValueError(f"ridge parameter must be positive, got {lam!r}")
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    r = a.T @ a + lam * np.eye(a.shape[1])
    rhs = a.T @ y
    w = np.linalg.solve(r, rhs)
    return OracleSolution(w, float(np.abs(r @ w - rhs).max(initial=0.0)))


def relative_error(w, w_ref):
    """``||w - w_ref||_inf / max(1, ||w_ref||_inf)`` using the induced (row-sum) norm."""
    w = np.atleast_2d(w)
    w_ref = np.atleast_2d(w_ref)
    if w.shape != w_ref.shape:
        raise ValueError(f"shape mismatch {w.shape} vs {w_ref.shape}")
    return float(np.linalg.norm(w - w_ref, np.inf) / max(1.0, np.linalg.norm(w_ref, np.inf)))


def _upper_factor(m):
    # upper-triangular V with V V^T = m, via the reversed lower Cholesky factor
    m = 0.5 * (m + m.T)
    low = np.linalg.cholesky(m[::-1, ::-1])
    return np.triu(low[::-1, ::-1])


def oracle_initial_factor(a, lam):
    """Upper-triangular ``F`` with ``F F^T = (A^T A + lam I)^-1``."""
    a = np.asarray(a, dtype=np.float64)
    return _upper_factor(np.linalg.inv(a.T @ a + lam * np.eye(a.shape[1])))


def _small(p, k, branch):
    if branch not in ("auto", "small", "large"):
        raise ValueError(f"unknown branch {branch!r}")
    return p < k if branch == "auto" else branch == "small"


def oracle_input_update_recursive(q, w, a_p, y_p, branch="auto"):
    """Inversion-lemma update of ``(Q, W)`` by a block of ``p`` new rows.

    ``p < k``: ``B = Q A_p^T (I + A_p Q A_p^T)^-1``, ``Q -= B A_p Q``, ``W += B (Y_p - A_p W)``.
    ``p >= k``: ``Q <- (I + Q A_p^T A_p)^-1 Q``, ``W += Q A_p^T (Y_p - A_p W)``.
    """
    a_p = np.asarray(a_p, dtype=np.float64)
    y_p = np.asarray(y_p, dtype=np.float64)
    p, k = a_p.shape
    if p == 0:
        return q, w
    resid = y_p - a_p @ w
    if _small(p, k, branch):
        gain = q @ a_p.T @ np.linalg.inv(np.eye(p) + a_p @ q @ a_p.T)
        return q - gain @ a_p @ q, w + gain @ resid
    q_new = np.linalg.inv(np.eye(k) + q @ a_p.T @ a_p) @ q
    return q_new, w + q_new @ a_p.T @ resid


def oracle_input_update_sqrt(f, w, a_p, y_p, branch="auto"):
    """Square-root update of ``(F, W)`` by a block of ``p`` new rows, ``S = F^T A_p^T``.

    ``p < k``: ``V V^T = I - S (I + S^T S)^-1 S^T``, ``W += F S (I + S^T S)^-1 (Y_p - A_p W)``.
    ``p >= k``: ``V V^T = (I + S S^T)^-1``, ``W += F V V^T F^T A_p^T (Y_p - A_p W)``.
    ``F <- F V`` in both cases.
    """
    a_p = np.asarray(a_p, dtype=np.float64)
    y_p = np.asarray(y_p, dtype=np.float64)
    p, k = a_p.shape
    if p == 0:
        return f, w
    s = f.T @ a_p.T
    resid = y_p - a_p @ w
    if _small(p, k, branch):
        inner = np.linalg.inv(np.eye(p) + s.T @ s)
        v = _upper_factor(np.eye(k) - s @ inner @ s.T)
        return np.triu(f @ v), w + f @ s @ inner @ resid
    v = _upper_factor(np.linalg.inv(np.eye(k) + s @ s.T))
    f_new = np.triu(f @ v)
    return f_new, w + f_new @ f_new.T @ a_p.T @ resid


def oracle_node_update(f, w, a, y, a_q, lam):
    """Block update of ``(F, W)`` when the columns ``a_q`` are appended to ``a``."""
    a_q = np.asarray(a_q, dtype=np.float64)
    k, q = f.shape[0], a_q.shape[1]
    if q == 0:
        return f, w
    q_old = f @ f.T
    cross = a.T @ a_q
    comp = a_q.T @ a_q + lam * np.eye(q) - cross.T @ q_old @ cross
    fb = _upper_factor(np.linalg.inv(comp))
    ft = -q_old @ cross @ fb
    d = a_q.T @ y - cross.T @ w
    f_new = np.block([[f, ft], [np.zeros((q, k)), fb]])
    w_new = np.vstack([w + ft @ fb.T @ d, fb @ fb.T @ d])
    return f_new, w_new
