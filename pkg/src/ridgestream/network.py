"""Random feature / enhancement node generation for a broad learning network.

The expanded input matrix has one column block per node group, in the order
the groups were created.  The initial network is ``[Z_1 .. Z_n | H_1 .. H_m]``;
later enhancement groups and feature groups (with their cross-enhancement
block) are appended on the right.  All products that produce node values use
:func:`ridgestream.linalg.matmul`, so a row of ``A`` depends only on the
matching row of ``X``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import matmul

__all__ = [
    "ACTIVATIONS",
    "ActivationOverflowError",
    "EnhancementGroup",
    "FeatureGroup",
    "NetworkLayout",
    "NetworkParams",
    "add_enhancement_nodes",
    "add_feature_nodes",
    "add_inputs",
    "initialize",
    "make_rng",
    "tansig",
]


def tansig(x):
    # 2 / (1 + exp(-2x)) - 1, written as tanh to avoid exp overflow
    return np.tanh(x)


ACTIVATIONS = {
    "identity": lambda x: x,
    "tansig": tansig,
    "sigmoid": lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)),
    "relu": lambda x: np.maximum(x, 0.0),
}


class ActivationOverflowError(FloatingPointError):
    def __init__(self, kind, index):
        self.kind = kind
        self.index = index
        super().__init__(f"non-finite values in {kind} group {index}")


def make_rng(seed, *stream):
    """Philox (counter-based, 64-bit) generator keyed by ``seed`` and a stream path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class NetworkLayout:
    feature_groups: int = 10
    feature_width: int = 10
    enhancement_groups: int = 1
    enhancement_width: int = 100
    enhancement_scale: float = 0.8
    fine_tune: bool = True
    sparsity: float = 1e-3
    fine_tune_iters: int = 50
    feature_bias: bool = True
    feature_activation: str = "identity"
    enhancement_activation: str = "tansig"

    def __post_init__(self):
        for name in ("feature_groups", "feature_width", "enhancement_groups", "enhancement_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in (self.feature_activation, self.enhancement_activation):
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")

    @property
    def nodes(self):
        return self.feature_groups * self.feature_width + self.enhancement_groups * self.enhancement_width


@dataclass(frozen=True)
class FeatureGroup:
    weight: np.ndarray  # (q_in, width)
    bias: np.ndarray  # (width,)

    @property
    def width(self):
        return self.weight.shape[1]


@dataclass(frozen=True)
class EnhancementGroup:
    weight: np.ndarray  # (sum of source widths, width)
    bias: np.ndarray  # (width,)
    sources: tuple  # feature-group indices feeding this group

    @property
    def width(self):
        return self.weight.shape[1]


@dataclass(frozen=True)
class NetworkParams:
    """Frozen mapping weights.

    ``order`` lists the column blocks of ``A`` left to right as
    ``("z", i)`` / ``("h", j)`` pairs.
    """

    input_dim: int
    layout: NetworkLayout
    features: tuple = ()
    enhancements: tuple = ()
    order: tuple = ()
    seeds: tuple = field(default=())

    @property
    def n(self):
        return len(self.features)

    @property
    def m(self):
        return len(self.enhancements)

    @property
    def k(self):
        return sum(w for _, _, w in self._widths())

    def _widths(self):
        for kind, idx in self.order:
            group = self.features[idx] if kind == "z" else self.enhancements[idx]
            yield kind, idx, group.width

    def column_blocks(self):
        """``[(kind, index, slice)]`` describing where each group lives in ``A``."""
        blocks, start = [], 0
        for kind, idx, width in self._widths():
            blocks.append((kind, idx, slice(start, start + width)))
            start += width
        return blocks

    def feature_columns(self, a, sources):
        """Concatenate the feature groups ``sources`` out of an existing ``A``."""
        where = {idx: sl for kind, idx, sl in self.column_blocks() if kind == "z"}
        return np.hstack([a[:, where[i]] for i in sources]) if sources else np.zeros((a.shape[0], 0))


def _uniform(rng, shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _sparse_inverse(z0, target, sparsity, iters):
    """``argmin_W ||z0 W - target||^2 + sparsity * ||W||_1`` by a fixed number of ISTA steps."""
    lipschitz = 2.0 * np.linalg.norm(z0, 2) ** 2
    w = np.zeros((z0.shape[1], target.shape[1]))
    if lipschitz == 0.0:
        return w
    step = 1.0 / lipschitz
    gram = z0.T @ z0
    cross = z0.T @ target
    for _ in range(iters):
        w = w - step * 2.0 * (gram @ w - cross)
        w = np.sign(w) * np.maximum(np.abs(w) - sparsity * step, 0.0)
    return w


def _new_feature_group(x, layout, rng, width):
    q_in = x.shape[1]
    weight = _uniform(rng, (q_in, width))
    bias = _uniform(rng, (width,)) if layout.feature_bias else np.zeros(width)
    if layout.fine_tune and x.shape[0] > 0:
        if layout.feature_bias:
            x_aug = np.hstack([x, np.ones((x.shape[0], 1))])
            w_aug = np.vstack([weight, bias])
        else:
            x_aug, w_aug = x, weight
        z0 = x_aug @ w_aug
        tuned = _sparse_inverse(z0, x_aug, layout.sparsity, layout.fine_tune_iters).T
        weight = np.ascontiguousarray(tuned[:q_in])
        if layout.feature_bias:
            bias = np.ascontiguousarray(tuned[q_in])
    return FeatureGroup(weight, bias)


def _new_enhancement_group(rng, in_width, width, sources):
    return EnhancementGroup(_uniform(rng, (in_width, width)), _uniform(rng, (width,)), tuple(sources))


def _feature_values(x, group, params, idx):
    with np.errstate(over="ignore", invalid="ignore"):
        z = ACTIVATIONS[params.layout.feature_activation](matmul(x, group.weight) + group.bias)
    if not np.all(np.isfinite(z)):
        raise ActivationOverflowError("feature", idx)
    return z


def _enhancement_values(z_src, group, params, idx):
    with np.errstate(over="ignore", invalid="ignore"):
        pre = matmul(z_src, group.weight) * params.layout.enhancement_scale + group.bias
        h = ACTIVATIONS[params.layout.enhancement_activation](pre)
    if not np.all(np.isfinite(h)):
        raise ActivationOverflowError("enhancement", idx)
    return h


def _check_input(x, params):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected inputs with {params.input_dim} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    return x


def add_inputs(x_new, params):
    """Node matrix rows for new samples, computed with the frozen params."""
    x_new = _check_input(x_new, params)
    zs = [_feature_values(x_new, g, params, i) for i, g in enumerate(params.features)]
    cols = []
    for kind, idx in params.order:
        if kind == "z":
            cols.append(zs[idx])
        else:
            group = params.enhancements[idx]
            z_src = np.hstack([zs[i] for i in group.sources])
            cols.append(_enhancement_values(z_src, group, params, idx))
    if not cols:
        return np.zeros((x_new.shape[0], 0))
    return np.hstack(cols)


def initialize(x, layout, seed):
    """Create the initial network on ``x``.

    Returns ``(A, params)`` where ``A = [Z^n | H^m]``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d input matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    n, m = layout.feature_groups, layout.enhancement_groups
    features = tuple(
        _new_feature_group(x, layout, make_rng(seed, 0, i), layout.feature_width) for i in range(n)
    )
    enhancements = tuple(
        _new_enhancement_group(make_rng(seed, 1, j), n * layout.feature_width, layout.enhancement_width, range(n))
        for j in range(m)
    )
    order = tuple(("z", i) for i in range(n)) + tuple(("h", j) for j in range(m))
    params = NetworkParams(x.shape[1], layout, features, enhancements, order, (int(seed),))
    return add_inputs(x, params), params


def add_enhancement_nodes(a, params, count, seed):
    """New enhancement group of ``count`` nodes fed by all current feature groups.

    ``a`` is the current node matrix; the feature columns are read from it.
    Returns ``(A_q, params')``.
    """
    sources = tuple(range(params.n))
    z_all = params.feature_columns(np.asarray(a, dtype=np.float64), sources)
    group = _new_enhancement_group(make_rng(seed), z_all.shape[1], count, sources)
    new = replace(
        params,
        enhancements=params.enhancements + (group,),
        order=params.order + (("h", params.m),),
        seeds=params.seeds + (int(seed),),
    )
    return _enhancement_values(z_all, group, new, params.m), new


def add_feature_nodes(x, params, width, cross_width, seed):
    """New feature group plus its cross-enhancement block.

    ``x`` must be every input seen so far.  The cross block is only created
    when the network already has enhancement groups.  Returns
    ``(A_q, params')`` with ``A_q = [Z_{n+1} | H_ex]``.
    """
    x = _check_input(x, params)
    rng = make_rng(seed)
    group = _new_feature_group(x, params.layout, rng, width)
    fidx = params.n
    features = params.features + (group,)
    order = params.order + (("z", fidx),)
    enhancements = params.enhancements
    new = replace(params, features=features, order=order, seeds=params.seeds + (int(seed),))
    z_new = _feature_values(x, group, new, fidx)
    blocks = [z_new]
    if params.m > 0 and cross_width > 0:
        cross = _new_enhancement_group(rng, width, cross_width, (fidx,))
        enhancements = enhancements + (cross,)
        order = order + (("h", params.m),)
        new = replace(new, enhancements=enhancements, order=order)
        blocks.append(_enhancement_values(z_new, cross, new, params.m))
    return np.hstack(blocks), new
