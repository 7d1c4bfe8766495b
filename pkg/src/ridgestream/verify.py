"""Seeded differential checks of every learner against the direct ridge solve.

Each instance is fully determined by its integer seed; the seed picks the
suite (``seed % len(SUITES)``) and every random size, batch, ridge value and
matrix.  ``run_verify`` fans instances out over a thread pool whose size is
capped by the ``RIDGESTREAM_THREADS`` environment variable.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import learners as L
from .full import full_add_nodes, full_add_rows, full_fit
from .linalg import BatchConfig, NotSPDError, batch_slices
from .network import make_rng
from .oracle import direct_ridge, relative_error

__all__ = [
    "BATCHES",
    "LAMBDAS",
    "SCOPES",
    "SUITES",
    "InstanceResult",
    "VerifyReport",
    "factor_residual",
    "q_residual",
    "run_instance",
    "run_verify",
    "tiny_lambda_stream",
    "tiny_lambda_trial",
]

SUITES = ("rec", "sqrt", "node", "full", "batch", "branch")
SCOPES = {"smoke": 18, "default": 240, "full": 1200}
LAMBDAS = (1e-4, 1e-2, 1.0, 1.0 / 128)
BATCHES = (1, 2, 3, 4, 8, 16)

W_TOL = 1e-6
SQRT_RESID_TOL = 1e-6
Q_RESID_TOL = 1e-5
BATCH_TOL = 1e-8
BRANCH_TOL = 1e-7
PERTURBATION = 1e-3


@dataclass
class InstanceResult:
    seed: int
    suite: str
    passed: bool = True
    max_w_error: float = 0.0
    max_residual: float = 0.0
    checks: int = 0
    failures: list = field(default_factory=list)

    def check(self, ok, what):
        self.checks += 1
        if not ok:
            self.passed = False
            self.failures.append(what)


@dataclass
class VerifyReport:
    scope: str
    results: list
    seconds: float

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    @property
    def failed_seeds(self):
        return [r.seed for r in self.results if not r.passed]

    def summary(self):
        lines = []
        for suite in SUITES:
            rs = [r for r in self.results if r.suite == suite]
            if not rs:
                continue
            bad = [r.seed for r in rs if not r.passed]
            lines.append(
                f"{suite:7s} {len(rs) - len(bad):4d}/{len(rs):<4d} pass  "
                f"max W err {max(r.max_w_error for r in rs):.2e}  "
                f"max residual {max(r.max_residual for r in rs):.2e}"
                + (f"  FAILED seeds {bad}" if bad else "")
            )
        verdict = "PASS" if self.passed else f"FAIL (seeds {self.failed_seeds})"
        lines.append(f"{len(self.results)} instances in {self.seconds:.2f} s: {verdict}")
        return "\n".join(lines)


def factor_residual(f, a, lam):
    """``||F F^T (A^T A + lam I) - I||_inf``."""
    r = a.T @ a + lam * np.eye(a.shape[1])
    return float(np.linalg.norm(f @ (f.T @ r) - np.eye(a.shape[1]), np.inf))


def q_residual(q, a, lam):
    r = a.T @ a + lam * np.eye(a.shape[1])
    return float(np.linalg.norm(q @ r - np.eye(a.shape[1]), np.inf))


def _draw(rng):
    l = int(rng.integers(4, 65))
    k = int(rng.integers(1, 17))
    c = int(rng.integers(1, 5))
    lam = float(rng.choice(LAMBDAS))
    batch = int(rng.choice(BATCHES))
    return l, k, c, lam, batch


def _compare(res, w, a, y, lam, what):
    err = relative_error(w, direct_ridge(a, y, lam).w)
    res.max_w_error = max(res.max_w_error, err)
    res.check(err < W_TOL, f"{what}: W error {err:.2e}")


def _resid(res, value, tol, what):
    res.max_residual = max(res.max_residual, value)
    res.check(value < tol, f"{what}: residual {value:.2e}")


def _perturbed(state, perturb):
    return replace(state, w=state.w + PERTURBATION) if perturb else state


def _input_suite(res, rng, perturb, recursive):
    l, k, c, lam, batch = _draw(rng)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    cfg = BatchConfig(lam, batch)
    boot, update = (L.rec_bootstrap, L.rec_update) if recursive else (L.sqrt_bootstrap, L.sqrt_update)
    state = None
    for i, sl in enumerate(batch_slices(l, batch)):
        state = boot(a[sl], y[sl], cfg) if state is None else update(state, a[sl], y[sl])
        if i == 0:
            state = _perturbed(state, perturb)
        seen = sl.stop
        _compare(res, state.w, a[:seen], y[:seen], lam, f"batch {i}")
        if recursive:
            _resid(res, q_residual(state.q, a[:seen], lam), Q_RESID_TOL, f"batch {i}")
        else:
            _resid(res, factor_residual(state.f, a[:seen], lam), SQRT_RESID_TOL, f"batch {i}")
            res.check(np.all(np.tril(state.f, -1) == 0.0), f"batch {i}: factor not triangular")


def _node_suite(res, rng, perturb):
    l, k, c, lam, batch = _draw(rng)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    cfg = BatchConfig(lam, batch)
    state = None
    for i, sl in enumerate(batch_slices(k, batch)):
        state = L.node_bootstrap(a[:, sl], y, cfg) if state is None else L.node_update(state, a[:, sl])
        if i == 0:
            state = _perturbed(state, perturb)
        res.check(state.k == sl.stop, f"batch {i}: k is {state.k}, expected {sl.stop}")
        _compare(res, state.w, a[:, : sl.stop], y, lam, f"batch {i}")
        _resid(res, factor_residual(state.f, a[:, : sl.stop], lam), SQRT_RESID_TOL, f"batch {i}")


def _full_suite(res, rng, perturb):
    """Random interleaving of row and column blocks of one matrix."""
    l, k, c, lam, batch = _draw(rng)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    rows, cols = int(rng.integers(1, l + 1)), int(rng.integers(1, k + 1))
    state = _perturbed(full_fit(a[:rows, :cols], y[:rows], BatchConfig(lam, batch)), perturb)
    step = 0
    while rows < l or cols < k:
        if cols == k or (rows < l and rng.random() < 0.5):
            p = int(rng.integers(1, l - rows + 1))
            state = full_add_rows(state, a[rows : rows + p, :cols], y[rows : rows + p])
            rows += p
        else:
            q = int(rng.integers(1, k - cols + 1))
            state = full_add_nodes(state, a[:rows, cols : cols + q])
            cols += q
        step += 1
        _compare(res, state.w, a[:rows, :cols], y[:rows], lam, f"step {step}")
        _resid(res, factor_residual(state.f, a[:rows, :cols], lam), SQRT_RESID_TOL, f"step {step}")
    fresh = full_fit(a, y, state.cfg)
    diff = relative_error(state.w, fresh.w)
    res.check(diff < W_TOL, f"interleaved vs fresh fit: {diff:.2e}")


def _batch_suite(res, rng, perturb):
    l, k, c, lam, _ = _draw(rng)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    split = int(rng.integers(1, k + 1))
    outs = {}
    for b in BATCHES:
        cfg = BatchConfig(lam, b)
        full = full_add_nodes(full_fit(a[:, :split], y, cfg), a[:, split:])
        outs[b] = {
            "rec": L.rec_fit(a, y, cfg).w,
            "sqrt": L.sqrt_fit(a, y, cfg).w,
            "node": L.node_fit(a, y, cfg).w,
            "full": full.w,
        }
        if perturb and b == BATCHES[-1]:
            outs[b]["sqrt"] = outs[b]["sqrt"] + PERTURBATION
    for name in outs[BATCHES[0]]:
        for b in BATCHES[1:]:
            diff = relative_error(outs[b][name], outs[BATCHES[0]][name])
            res.max_w_error = max(res.max_w_error, diff)
            res.check(diff < BATCH_TOL, f"{name} b={b} vs b={BATCHES[0]}: {diff:.2e}")
    _compare(res, outs[BATCHES[0]]["full"], a, y, lam, "final")


def _branch_suite(res, rng, perturb):
    _, _, c, lam, batch = _draw(rng)
    k = int(rng.integers(2, 17))
    l0 = int(rng.integers(1, 33))
    p = k + int(rng.integers(-1, 2))
    a, y = rng.normal(size=(l0 + p, k)), rng.normal(size=(l0 + p, c))
    base = full_fit(a[:l0], y[:l0], BatchConfig(lam, batch))
    small = full_add_rows(base, a[l0:], y[l0:], branch="small")
    large = _perturbed(full_add_rows(base, a[l0:], y[l0:], branch="large"), perturb)
    diff = relative_error(small.w, large.w)
    res.max_w_error = max(res.max_w_error, diff)
    res.check(diff < BRANCH_TOL, f"p={p}, k={k}: branches differ by {diff:.2e}")
    for name, st in (("small", small), ("large", large)):
        _compare(res, st.w, a, y, lam, f"{name} branch")
        _resid(res, factor_residual(st.f, a, lam), SQRT_RESID_TOL, f"{name} branch")


_RUNNERS = {
    "rec": lambda res, rng, perturb: _input_suite(res, rng, perturb, recursive=True),
    "sqrt": lambda res, rng, perturb: _input_suite(res, rng, perturb, recursive=False),
    "node": _node_suite,
    "full": _full_suite,
    "batch": _batch_suite,
    "branch": _branch_suite,
}


def run_instance(seed, suite=None, perturb=False):
    suite = suite or SUITES[seed % len(SUITES)]
    res = InstanceResult(seed, suite)
    try:
        _RUNNERS[suite](res, make_rng(seed, 0x5EED), perturb)
    except NotSPDError as err:
        res.check(False, f"breakdown: {err}")
    return res


def _threads():
    cap = os.environ.get("RIDGESTREAM_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, n)


def run_verify(scope="default", base_seed=0, perturb_seed=None, threads=None):
    """Run ``SCOPES[scope]`` instances with seeds ``base_seed, base_seed + 1, ...``."""
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; choose from {sorted(SCOPES)}")
    seeds = range(base_seed, base_seed + SCOPES[scope])
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads or _threads()) as pool:
        results = list(pool.map(lambda s: run_instance(s, perturb=s == perturb_seed), seeds))
    return VerifyReport(scope, results, time.perf_counter() - start)


# -- tiny ridge parameter on near-collinear data ------------------------------


def tiny_lambda_stream(seed, l=5000, k=32, rank=4, spread=1e-4):
    """Rows living close to a ``rank``-dimensional subspace of the node space.

    Returns ``(A, Y)``; the columns are nearly collinear, so ``A^T A`` has
    ``k - rank`` eigenvalues around ``l * spread^2``.
    """
    rng = make_rng(seed, 0x71)
    base = rng.normal(size=(l, rank))
    mix = rng.normal(size=(rank, k))
    a = base @ mix + spread * rng.normal(size=(l, k))
    labels = rng.integers(0, 10, size=l)
    y = np.eye(10)[labels]
    return a, y


TINY_RESID_TOL = 1e-2


def _trial_entry(broke_at, resid):
    return {
        "broke": broke_at is not None,
        "batch": broke_at,
        "residual": resid,
        "blowup": not (resid < TINY_RESID_TOL),
    }


def tiny_lambda_trial(seed, lam=1e-8, batch=16, **stream):
    """Feed one adversarial stream to the three input learners.

    Returns ``{learner: {"broke", "batch", "residual", "blowup"}}``: whether a
    nonpositive pivot stopped the stream and at which batch, the factor (or
    ``Q``) residual over the rows processed before that, and whether that
    residual reached ``TINY_RESID_TOL``.
    """
    a, y = tiny_lambda_stream(seed, **stream)
    cfg = BatchConfig(lam, batch)
    slices = batch_slices(a.shape[0], batch)
    out = {}

    def residual_of(name, state, seen):
        if name == "rec":
            return q_residual(state.q, a[:seen], lam)
        return factor_residual(state.f, a[:seen], lam)

    drivers = {
        "rec": (L.rec_bootstrap, L.rec_update),
        "sqrt": (L.sqrt_bootstrap, L.sqrt_update),
    }
    for name, (boot, update) in drivers.items():
        state, seen, broke_at = None, 0, None
        for i, sl in enumerate(slices):
            try:
                state = boot(a[sl], y[sl], cfg) if state is None else update(state, a[sl], y[sl])
            except NotSPDError:
                broke_at = i
                break
            seen = sl.stop
        resid = residual_of(name, state, seen) if state is not None else float("inf")
        out[name] = _trial_entry(broke_at, resid)

    first = slices[0]
    state, seen, broke_at = None, 0, None
    for i, sl in enumerate(slices):
        try:
            if state is None:
                state = full_fit(a[first], y[first], cfg)
            else:
                state = full_add_rows(state, a[sl], y[sl])
        except NotSPDError:
            broke_at = i
            break
        seen = sl.stop
    resid = factor_residual(state.f, a[:seen], lam) if state is not None else float("inf")
    out["full"] = _trial_entry(broke_at, resid)
    return out
