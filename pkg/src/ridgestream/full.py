"""Unified square-root learner handling new inputs and new nodes on one state.

Every factorization goes through the batched kernels
(:func:`~ridgestream.linalg.inv_chol`, :func:`~ridgestream.linalg.phi_chol`,
:func:`~ridgestream.linalg.upper_sqrt`), so no block larger than
``batch x batch`` is inverted, whatever the update width.

There are two layers.  ``full_fit`` / ``full_add_nodes`` / ``full_add_rows``
work on node matrices directly.  ``full_init`` / ``full_add_inputs`` /
``full_add_enhancement`` / ``full_add_feature`` generate the node columns
from raw inputs through :mod:`ridgestream.network` first.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import network
from .learners import predict
from .linalg import NotSPDError, inv_chol, phi_chol, upper_sqrt

__all__ = [
    "FullState",
    "accuracy",
    "full_add_enhancement",
    "full_add_feature",
    "full_add_inputs",
    "full_add_nodes",
    "full_add_rows",
    "full_fit",
    "full_init",
    "predict",
]

BRANCHES = ("auto", "small", "large")


@dataclass(frozen=True)
class FullState:
    f: np.ndarray  # k x k upper-triangular, F F^T = (A^T A + lam I)^-1
    w: np.ndarray  # k x c
    a: np.ndarray  # l x k
    y: np.ndarray  # l x c
    cfg: object
    params: network.NetworkParams | None = None
    x: np.ndarray | None = None  # raw inputs, kept so feature groups can be added later
    updates: int = 0

    @property
    def l(self):  # noqa: E743
        return self.a.shape[0]

    @property
    def k(self):
        return self.f.shape[0]

    @property
    def c(self):
        return self.w.shape[1]

    @property
    def n(self):
        return self.params.n if self.params is not None else 0

    @property
    def m(self):
        return self.params.m if self.params is not None else 0


def _pair(a, y):
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if a.ndim != 2 or y.ndim != 2 or a.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes {a.shape} and {y.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in the data")
    return a, y


def full_fit(a, y, cfg):
    """Initial state from a node matrix: ``F = phi_chol(A)``, ``W = F (F^T (A^T Y))``."""
    a, y = _pair(a, y)
    try:
        f = phi_chol(a, cfg.lam, cfg.batch)
    except NotSPDError as err:
        raise err.at(where=f"full_fit: {err.where}; consider a larger ridge parameter") from None
    w = f @ (f.T @ (a.T @ y))
    return FullState(f, w, a, y, cfg)


def full_add_nodes(state, a_q, params=None):
    """Append ``q`` node columns in one step; ``q`` may exceed the batch size.

    With ``T = F^T A^T Aq`` the new diagonal block is
    ``Fb = inv_chol(Aq^T Aq + lam I - T^T T)``; the off-diagonal block is
    ``Ft = -F T Fb``.
    """
    a_q = np.asarray(a_q, dtype=np.float64)
    if a_q.ndim != 2 or a_q.shape[0] != state.l:
        raise ValueError(f"expected {state.l} rows, got shape {a_q.shape}")
    if not np.all(np.isfinite(a_q)):
        raise ValueError("non-finite values in the new node columns")
    k, q = state.k, a_q.shape[1]
    if q == 0:
        return state if params is None else replace(state, params=params)
    f = state.f
    cross = state.a.T @ a_q  # k x q
    t = f.T @ cross
    comp = a_q.T @ a_q - t.T @ t
    comp[np.diag_indices_from(comp)] += state.cfg.lam
    try:
        fb = inv_chol(comp, state.cfg.batch)
    except NotSPDError as err:
        raise err.at(
            batch_index=state.updates,
            where=f"full_add_nodes/{err.where} block {err.batch_index}; consider a larger ridge parameter",
        ) from None
    ft = -(f @ (t @ fb))
    e = fb.T @ (a_q.T @ state.y - cross.T @ state.w)
    f_new = np.zeros((k + q, k + q))
    f_new[:k, :k] = f
    f_new[:k, k:] = ft
    f_new[k:, k:] = fb
    return replace(
        state,
        f=f_new,
        w=np.vstack([state.w + ft @ e, fb @ e]),
        a=np.hstack([state.a, a_q]),
        params=state.params if params is None else params,
        updates=state.updates + 1,
    )


def _rows_small(f, w, a_p, resid, batch):
    # p < k: Gamma Gamma^T = (I + S^T S)^-1, V V^T = I - S Gamma Gamma^T S^T
    s = f.T @ a_p.T
    gamma = phi_chol(s, 1.0, batch)
    sg = s @ gamma
    v = upper_sqrt(np.eye(f.shape[0]) - sg @ sg.T)
    w = w + f @ (sg @ (gamma.T @ resid))
    return np.triu(f @ v), w


def _rows_large(f, w, a_p, resid, batch):
    # p >= k: V V^T = (I + S S^T)^-1, then W += F F^T A_p^T (Y_p - A_p W) with the new F
    s = f.T @ a_p.T
    v = phi_chol(s.T, 1.0, batch)
    f = np.triu(f @ v)
    return f, w + f @ (f.T @ (a_p.T @ resid))


def full_add_rows(state, a_p, y_p, branch="auto", x_new=None):
    """Append ``p`` rows of the node matrix in one step.

    ``branch`` is ``"auto"`` (``p < k`` picks the small-batch form), or
    ``"small"`` / ``"large"`` to force one of the two forms.
    """
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
    a_p, y_p = _pair(a_p, y_p)
    if a_p.shape[1] != state.k or y_p.shape[1] != state.c:
        raise ValueError(f"expected {state.k} node and {state.c} label columns, got {a_p.shape} / {y_p.shape}")
    p = a_p.shape[0]
    if p == 0:
        return state
    small = p < state.k if branch == "auto" else branch == "small"
    resid = y_p - a_p @ state.w
    try:
        f, w = (_rows_small if small else _rows_large)(state.f, state.w, a_p, resid, state.cfg.batch)
    except NotSPDError as err:
        raise err.at(batch_index=state.updates, where=f"full_add_rows/{err.where}") from None
    x = state.x
    if x is not None:
        if x_new is None:
            raise ValueError("state tracks raw inputs; pass x_new alongside the node rows")
        x = np.vstack([x, x_new])
    return replace(
        state,
        f=f,
        w=w,
        a=np.vstack([state.a, a_p]),
        y=np.vstack([state.y, y_p]),
        x=x,
        updates=state.updates + 1,
    )


def full_init(x, y, layout, cfg, seed):
    """Build the initial network on ``x`` and fit it."""
    x = np.asarray(x, dtype=np.float64)
    a, params = network.initialize(x, layout, seed)
    state = full_fit(a, y, cfg)
    return replace(state, params=params, x=x)


def _need_params(state):
    if state.params is None:
        raise ValueError("state was built from a bare node matrix; network operations need full_init")


def full_add_inputs(state, x_new, y_new, branch="auto"):
    _need_params(state)
    x_new = np.asarray(x_new, dtype=np.float64)
    a_p = network.add_inputs(x_new, state.params)
    return full_add_rows(state, a_p, y_new, branch=branch, x_new=x_new)


def full_add_enhancement(state, count, seed):
    _need_params(state)
    a_q, params = network.add_enhancement_nodes(state.a, state.params, count, seed)
    return full_add_nodes(state, a_q, params)


def full_add_feature(state, width, cross_width, seed):
    _need_params(state)
    a_q, params = network.add_feature_nodes(state.x, state.params, width, cross_width, seed)
    return full_add_nodes(state, a_q, params)


def accuracy(scores, labels):
    """Fraction of rows whose argmax matches ``labels`` (integer or one-hot)."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.asarray(scores).argmax(axis=1) == labels))
