"""Batched low-memory learners for the ridge output weights.

* recursive learner on added inputs: keeps ``Q = (A^T A + lam I)^-1``;
* square-root learner on added inputs: keeps ``F`` with ``F F^T = Q``;
* square-root learner on added nodes: keeps ``F`` plus ``A`` and ``Y``.

Each ``*_update`` consumes exactly one batch and returns a new state; the
state passed in is never modified, so a :class:`~ridgestream.linalg.NotSPDError`
leaves the caller with the last good state.  The ``*_fit`` / ``*_add_*``
helpers split arbitrary blocks into batches of ``cfg.batch``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .linalg import (
    BatchConfig,
    NotSPDError,
    batch_slices,
    phi_chol,
    spd_inverse_chol_small,
    symmetrize,
    upper_sqrt,
)

__all__ = [
    "RecursiveInputState",
    "SqrtInputState",
    "SqrtNodeState",
    "node_add",
    "node_bootstrap",
    "node_fit",
    "node_update",
    "predict",
    "rec_add_inputs",
    "rec_bootstrap",
    "rec_fit",
    "rec_update",
    "sqrt_add_inputs",
    "sqrt_bootstrap",
    "sqrt_fit",
    "sqrt_update",
]


@dataclass(frozen=True)
class RecursiveInputState:
    q: np.ndarray  # k x k
    w: np.ndarray  # k x c
    cfg: BatchConfig
    samples: int
    batches: int = 1

    @property
    def k(self):
        return self.q.shape[0]

    @property
    def c(self):
        return self.w.shape[1]


@dataclass(frozen=True)
class SqrtInputState:
    f: np.ndarray  # k x k, upper-triangular
    w: np.ndarray
    cfg: BatchConfig
    samples: int
    batches: int = 1

    @property
    def k(self):
        return self.f.shape[0]

    @property
    def c(self):
        return self.w.shape[1]


@dataclass(frozen=True)
class SqrtNodeState:
    f: np.ndarray
    w: np.ndarray
    a: np.ndarray  # l x k, needed by every node update
    y: np.ndarray  # l x c
    cfg: BatchConfig
    batches: int = 1

    @property
    def k(self):
        return self.f.shape[0]

    @property
    def c(self):
        return self.w.shape[1]

    @property
    def samples(self):
        return self.a.shape[0]


def predict(state, a_rows):
    a_rows = np.asarray(a_rows, dtype=np.float64)
    if a_rows.ndim != 2 or a_rows.shape[1] != state.w.shape[0]:
        raise ValueError(f"expected rows with {state.w.shape[0]} columns, got shape {a_rows.shape}")
    return a_rows @ state.w


def _as_pair(a, y, k=None, c=None):
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if a.ndim != 2 or y.ndim != 2 or a.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes {a.shape} and {y.shape}")
    if k is not None and a.shape[1] != k:
        raise ValueError(f"expected {k} node columns, got {a.shape[1]}")
    if c is not None and y.shape[1] != c:
        raise ValueError(f"expected {c} label columns, got {y.shape[1]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in the batch")
    return a, y


def _ridge_gain(a_b, lam):
    """``A_b^T (A_b A_b^T + lam I)^-1`` through a ``b x b`` inverse Cholesky factor."""
    kmat = a_b @ a_b.T
    kmat[np.diag_indices_from(kmat)] += lam
    g = spd_inverse_chol_small(kmat)
    return (a_b.T @ g) @ g.T


def _tag(err, batch, where):
    return err.at(batch_index=batch, where=where)


# -- recursive learner on added inputs ---------------------------------------


def rec_bootstrap(a_b, y_b, cfg):
    """First batch, starting from ``Q_0 = I / lam`` and an empty ``W``."""
    a_b, y_b = _as_pair(a_b, y_b)
    k = a_b.shape[1]
    try:
        gain = _ridge_gain(a_b, cfg.lam)
    except NotSPDError as err:
        raise _tag(err, 0, "rec_bootstrap") from None
    q = symmetrize((np.eye(k) - gain @ a_b) / cfg.lam)
    return RecursiveInputState(q, gain @ y_b, cfg, a_b.shape[0])


def rec_update(state, a_b, y_b):
    """One batch of the inversion-lemma recursion on ``Q`` and ``W``."""
    a_b, y_b = _as_pair(a_b, y_b, state.k, state.c)
    if a_b.shape[0] == 0:
        return state
    p = a_b @ state.q  # A_b Q
    kmat = p @ a_b.T
    kmat[np.diag_indices_from(kmat)] += 1.0
    try:
        g = spd_inverse_chol_small(kmat)
    except NotSPDError as err:
        raise _tag(err, state.batches, "rec_update") from None
    gain = (p.T @ g) @ g.T  # Q A_b^T (I + A_b Q A_b^T)^-1
    q = symmetrize(state.q - gain @ p)
    w = state.w + gain @ (y_b - a_b @ state.w)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(w))):
        raise NotSPDError(0, np.nan, state.batches, "rec_update: non-finite state")
    return replace(state, q=q, w=w, samples=state.samples + a_b.shape[0], batches=state.batches + 1)


def rec_add_inputs(state, a, y):
    a, y = _as_pair(a, y, state.k, state.c)
    for sl in batch_slices(a.shape[0], state.cfg.batch):
        state = rec_update(state, a[sl], y[sl])
    return state


def rec_fit(a, y, cfg):
    a, y = _as_pair(a, y)
    first = slice(0, min(cfg.batch, a.shape[0]))
    state = rec_bootstrap(a[first], y[first], cfg)
    return rec_add_inputs(state, a[first.stop :], y[first.stop :])


# -- square-root learner on added inputs -------------------------------------


def sqrt_bootstrap(a_b, y_b, cfg, form="gram"):
    """First batch, starting from ``F_0 = I / sqrt(lam)``.

    ``F_b F_b^T = (A_b^T A_b + lam I)^-1`` and
    ``W_b = A_b^T (A_b A_b^T + lam I)^-1 Y_b``.

    ``form`` picks how ``F_b`` is computed:

    * ``"gram"`` (default): batched factorization of ``A_b^T A_b + lam I``
      (:func:`~ridgestream.linalg.phi_chol`), only ``b x b`` blocks inverted;
    * ``"projector"``: factor of ``(I - A_b^T (A_b A_b^T + lam I)^-1 A_b) / lam``.
      Same matrix in exact arithmetic, but the subtraction cancels about
      ``log10(1 / lam)`` digits, which ruins the factor for tiny ``lam``.
    """
    a_b, y_b = _as_pair(a_b, y_b)
    b, k = a_b.shape
    try:
        gain = _ridge_gain(a_b, cfg.lam)
        if form == "gram":
            f = phi_chol(a_b, cfg.lam, cfg.batch)
        elif form == "projector":
            f = upper_sqrt((np.eye(k) - gain @ a_b) / cfg.lam)
        else:
            raise ValueError(f"unknown bootstrap form {form!r}")
    except NotSPDError as err:
        raise _tag(err, 0, "sqrt_bootstrap") from None
    return SqrtInputState(f, gain @ y_b, cfg, b)


def sqrt_update(state, a_b, y_b):
    """One batch of the square-root recursion.

    With ``S = F^T A_b^T`` and ``F <- F V``:

    * ``p < k``: ``V V^T = I - S (I + S^T S)^-1 S^T`` (a ``k x k`` factorization),
      ``W += F S (I + S^T S)^-1 (Y_b - A_b W)``;
    * ``p >= k``: ``V V^T = (I + S S^T)^-1``, ``W += F' F'^T A_b^T (Y_b - A_b W)``.
    """
    a_b, y_b = _as_pair(a_b, y_b, state.k, state.c)
    p, k = a_b.shape
    if p == 0:
        return state
    f = state.f
    s = f.T @ a_b.T
    resid = y_b - a_b @ state.w
    try:
        if p < k:
            inner = s.T @ s
            inner[np.diag_indices_from(inner)] += 1.0
            g = spd_inverse_chol_small(inner)
            sg = s @ g
            v = upper_sqrt(np.eye(k) - sg @ sg.T)
            w = state.w + f @ (sg @ (g.T @ resid))
            f = np.triu(f @ v)
        else:
            outer = s @ s.T
            outer[np.diag_indices_from(outer)] += 1.0
            v = spd_inverse_chol_small(outer)
            f = np.triu(f @ v)
            w = state.w + f @ (f.T @ (a_b.T @ resid))
    except NotSPDError as err:
        raise _tag(err, state.batches, "sqrt_update") from None
    return replace(state, f=f, w=w, samples=state.samples + p, batches=state.batches + 1)


def sqrt_add_inputs(state, a, y):
    a, y = _as_pair(a, y, state.k, state.c)
    for sl in batch_slices(a.shape[0], state.cfg.batch):
        state = sqrt_update(state, a[sl], y[sl])
    return state


def sqrt_fit(a, y, cfg, form="gram"):
    a, y = _as_pair(a, y)
    first = slice(0, min(cfg.batch, a.shape[0]))
    state = sqrt_bootstrap(a[first], y[first], cfg, form)
    return sqrt_add_inputs(state, a[first.stop :], y[first.stop :])


# -- square-root learner on added nodes --------------------------------------


def node_bootstrap(a, y, cfg):
    """First block of node columns: ``F F^T = (A^T A + lam I)^-1``, ``W = F F^T A^T Y``."""
    a, y = _as_pair(a, y)
    gram = a.T @ a
    gram[np.diag_indices_from(gram)] += cfg.lam
    try:
        f = spd_inverse_chol_small(gram)
    except NotSPDError as err:
        raise _tag(err, 0, "node_bootstrap") from None
    w = f @ (f.T @ (a.T @ y))
    return SqrtNodeState(f, w, a, y, cfg)


def node_update(state, a_new):
    """Append one batch of node columns.

    ``Rt = A^T A_new``; ``Fb Fb^T = (A_new^T A_new + lam I - Rt^T F F^T Rt)^-1``;
    ``Ft = -F F^T Rt Fb``; ``F <- [[F, Ft], [0, Fb]]`` and with
    ``D = A_new^T Y - Rt^T W``: ``W <- [W + Ft Fb^T D; Fb Fb^T D]``.
    """
    a_new = np.asarray(a_new, dtype=np.float64)
    if a_new.ndim != 2 or a_new.shape[0] != state.a.shape[0]:
        raise ValueError(f"expected {state.a.shape[0]} rows, got shape {a_new.shape}")
    if not np.all(np.isfinite(a_new)):
        raise ValueError("non-finite values in the new node columns")
    k, q = state.k, a_new.shape[1]
    if q == 0:
        return state
    f = state.f
    rt = state.a.T @ a_new
    t = f.T @ rt
    comp = a_new.T @ a_new - t.T @ t
    comp[np.diag_indices_from(comp)] += state.cfg.lam
    try:
        fb = spd_inverse_chol_small(comp)
    except NotSPDError as err:
        raise _tag(err, state.batches, "node_update") from None
    ft = -(f @ (t @ fb))
    e = fb.T @ (a_new.T @ state.y - rt.T @ state.w)
    f_new = np.zeros((k + q, k + q))
    f_new[:k, :k] = f
    f_new[:k, k:] = ft
    f_new[k:, k:] = fb
    w_new = np.vstack([state.w + ft @ e, fb @ e])
    return replace(state, f=f_new, w=w_new, a=np.hstack([state.a, a_new]), batches=state.batches + 1)


def node_add(state, a_q):
    a_q = np.asarray(a_q, dtype=np.float64)
    for sl in batch_slices(a_q.shape[1], state.cfg.batch):
        state = node_update(state, a_q[:, sl])
    return state


def node_fit(a, y, cfg):
    a, y = _as_pair(a, y)
    first = slice(0, min(cfg.batch, a.shape[1]))
    state = node_bootstrap(a[:, first], y, cfg)
    return node_add(state, a[:, first.stop :])
