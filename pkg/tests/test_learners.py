import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ridgestream import learners as L
from ridgestream.linalg import BatchConfig, NotSPDError
from ridgestream.oracle import direct_ridge, relative_error
from ridgestream.verify import factor_residual


def cfg(lam=1.0, b=4):
    return BatchConfig(lam, b)


def ridge(a, y, lam):
    # independent closed form via the pseudo-inverse of the stacked system
    k = a.shape[1]
    stacked = np.vstack([a, np.sqrt(lam) * np.eye(k)])
    return np.linalg.lstsq(stacked, np.vstack([y, np.zeros((k, y.shape[1]))]), rcond=None)[0]


# -- recursive learner -------------------------------------------------------------


def test_rec_bootstrap_scalar():
    s = L.rec_bootstrap([[1.0]], [[1.0]], cfg(1.0))
    assert s.q[0, 0] == pytest.approx(0.5) and s.w[0, 0] == pytest.approx(0.5)


def test_rec_bootstrap_zero_batch():
    s = L.rec_bootstrap(np.zeros((3, 4)), np.ones((3, 2)), cfg(2.0))
    assert np.array_equal(s.q, 0.5 * np.eye(4))
    assert np.array_equal(s.w, np.zeros((4, 2)))


def test_rec_bootstrap_random(rng):
    a, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    s = L.rec_bootstrap(a, y, cfg(0.7))
    assert np.abs(s.w - ridge(a, y, 0.7)).max() < 1e-10


def test_rec_zero_batch_is_noop(rng):
    a, y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    s = L.rec_bootstrap(a, y, cfg())
    t = L.rec_update(s, np.zeros((2, 3)), rng.normal(size=(2, 2)))
    assert np.array_equal(t.q, s.q) and np.array_equal(t.w, s.w)


def test_rec_merge(rng):
    a, y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    two = L.rec_update(L.rec_bootstrap(a, y, cfg()), a, y)
    one = L.rec_bootstrap(np.vstack([a, a]), np.vstack([y, y]), cfg())
    assert np.abs(two.w - one.w).max() < 1e-9


@pytest.mark.parametrize("b", [1, 2, 3, 4, 6])
def test_rec_matches_oracle(rng, b):
    a, y = rng.normal(size=(24, 4)), rng.normal(size=(24, 3))
    s = L.rec_fit(a, y, cfg(0.5, b))
    assert np.abs(s.w - ridge(a, y, 0.5)).max() < 1e-8
    assert s.samples == 24 and s.k == 4


def test_rec_symmetric_q(rng):
    a, y = rng.normal(size=(30, 5)), rng.normal(size=(30, 1))
    s = L.rec_fit(a, y, cfg(1e-2, 3))
    assert np.array_equal(s.q, s.q.T)


def test_rec_breakdown_keeps_state(rng):
    a, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 1))
    s = L.rec_bootstrap(a, y, cfg())
    bad = L.RecursiveInputState(-np.eye(3), s.w, s.cfg, s.samples, 5)
    with pytest.raises(NotSPDError) as info:
        L.rec_update(bad, np.eye(3), np.ones((3, 1)))
    assert info.value.batch_index == 5
    assert np.array_equal(bad.q, -np.eye(3))


# -- square-root learner on inputs --------------------------------------------------


def test_sqrt_bootstrap_zero_batch():
    s = L.sqrt_bootstrap(np.zeros((2, 3)), np.ones((2, 1)), cfg(4.0))
    assert np.allclose(s.f, 0.5 * np.eye(3), atol=0)
    assert np.array_equal(s.w, np.zeros((3, 1)))


def test_sqrt_bootstrap_scalar():
    s = L.sqrt_bootstrap([[1.0]], [[1.0]], cfg(1.0))
    assert (s.f @ s.f.T)[0, 0] == pytest.approx(0.5) and s.w[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("form", ["gram", "projector"])
def test_sqrt_bootstrap_random(rng, form):
    a, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    s = L.sqrt_bootstrap(a, y, cfg(0.3, 4), form=form)
    assert factor_residual(s.f, a, 0.3) < 1e-10
    assert np.abs(s.w - ridge(a, y, 0.3)).max() < 1e-10


def test_sqrt_bootstrap_short_batch_wide_network(rng):
    # b < k: only b x b inverses, factor still exact
    a, y = rng.normal(size=(3, 8)), rng.normal(size=(3, 2))
    for form in ("gram", "projector"):
        s = L.sqrt_bootstrap(a, y, cfg(0.5, 3), form=form)
        assert factor_residual(s.f, a, 0.5) < 1e-10


def test_sqrt_projector_form_loses_digits_at_tiny_lambda(rng):
    base = rng.normal(size=(16, 3))
    a = base @ rng.normal(size=(3, 24)) + 1e-4 * rng.normal(size=(16, 24))
    y = rng.normal(size=(16, 1))
    gram = L.sqrt_bootstrap(a, y, cfg(1e-8, 16), form="gram")
    proj = L.sqrt_bootstrap(a, y, cfg(1e-8, 16), form="projector")
    assert factor_residual(gram.f, a, 1e-8) < 1e-3
    assert factor_residual(proj.f, a, 1e-8) > 1e2 * factor_residual(gram.f, a, 1e-8)


def test_sqrt_zero_batch_is_noop(rng):
    a, y = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
    s = L.sqrt_bootstrap(a, y, cfg())
    t = L.sqrt_update(s, np.zeros((2, 4)), rng.normal(size=(2, 2)))
    assert np.array_equal(t.f, s.f) and np.array_equal(t.w, s.w)


def test_sqrt_merge(rng):
    a, y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    two = L.sqrt_update(L.sqrt_bootstrap(a, y, cfg()), a, y)
    one = L.sqrt_bootstrap(np.vstack([a, a]), np.vstack([y, y]), cfg(1.0, 12))
    assert np.abs(two.w - one.w).max() < 1e-9


@pytest.mark.parametrize("b", [1, 2, 3, 4])
def test_sqrt_matches_oracle(rng, b):
    a, y = rng.normal(size=(24, 4)), rng.normal(size=(24, 3))
    s = L.sqrt_fit(a, y, cfg(0.5, b))
    assert np.abs(s.w - ridge(a, y, 0.5)).max() < 1e-8
    assert np.all(np.tril(s.f, -1) == 0.0)


def test_sqrt_update_large_batch_branch(rng):
    # batches at least as tall as k use the (I + S S^T) form
    a, y = rng.normal(size=(30, 3)), rng.normal(size=(30, 2))
    s = L.sqrt_fit(a, y, cfg(0.2, 7))
    assert np.abs(s.w - ridge(a, y, 0.2)).max() < 1e-9
    assert factor_residual(s.f, a, 0.2) < 1e-10


def test_rec_and_sqrt_agree(rng):
    a, y = rng.normal(size=(40, 6)), rng.normal(size=(40, 2))
    assert np.abs(L.rec_fit(a, y, cfg(0.1, 5)).w - L.sqrt_fit(a, y, cfg(0.1, 5)).w).max() < 1e-7


# -- square-root learner on nodes ---------------------------------------------------


def test_node_bootstrap_scalar():
    s = L.node_bootstrap([[1.0], [0.0]], [[1.0], [0.0]], cfg(1.0))
    assert s.f[0, 0] == pytest.approx(1 / np.sqrt(2)) and s.w[0, 0] == pytest.approx(0.5)


def test_node_bootstrap_zero():
    s = L.node_bootstrap(np.zeros((5, 2)), np.ones((5, 1)), cfg())
    assert np.array_equal(s.w, np.zeros((2, 1)))


def test_node_bootstrap_random(rng):
    a, y = rng.normal(size=(8, 2)), rng.normal(size=(8, 3))
    s = L.node_bootstrap(a, y, cfg(0.4, 2))
    assert np.abs(s.w - ridge(a, y, 0.4)).max() < 1e-10


def test_node_update_orthogonal_columns():
    s = L.node_bootstrap([[1.0], [0.0]], [[1.0], [0.0]], cfg(1.0, 1))
    t = L.node_update(s, [[0.0], [1.0]])
    assert np.allclose(t.f, np.eye(2) / np.sqrt(2), atol=1e-15)
    assert np.allclose(t.w, [[0.5], [0.0]], atol=1e-15)


def test_node_update_duplicate_column(rng):
    a, y = rng.normal(size=(8, 1)), rng.normal(size=(8, 2))
    t = L.node_update(L.node_bootstrap(a, y, cfg(1.0, 1)), a)
    assert np.abs(t.w - ridge(np.hstack([a, a]), y, 1.0)).max() < 1e-10


@pytest.mark.parametrize("b", [1, 2])
def test_node_merge(rng, b):
    a, y = rng.normal(size=(10, 4)), rng.normal(size=(10, 2))
    grown = L.node_fit(a, y, cfg(0.5, b))
    single = L.node_bootstrap(a, y, cfg(0.5, 4))
    assert np.abs(grown.f @ grown.f.T - single.f @ single.f.T).max() < 1e-9
    assert np.abs(grown.w - single.w).max() < 1e-9


def test_node_growth_law(rng):
    a, y = rng.normal(size=(10, 7)), rng.normal(size=(10, 1))
    s = L.node_bootstrap(a[:, :3], y, cfg(1.0, 3))
    t = L.node_update(s, a[:, 3:5])
    assert (s.k, t.k) == (3, 5) and t.a.shape == (10, 5)
    u = L.node_add(t, a[:, 5:])
    assert u.k == 7 and u.samples == 10


def test_input_updates_keep_k(rng):
    a, y = rng.normal(size=(12, 5)), rng.normal(size=(12, 1))
    for s in (L.rec_fit(a, y, cfg(1.0, 5)), L.sqrt_fit(a, y, cfg(1.0, 5))):
        assert s.k == 5 and s.samples == 12


def test_shape_errors(rng):
    s = L.sqrt_fit(rng.normal(size=(6, 3)), rng.normal(size=(6, 1)), cfg())
    with pytest.raises(ValueError):
        L.sqrt_update(s, np.ones((2, 4)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        L.predict(s, np.ones((2, 4)))
    n = L.node_fit(rng.normal(size=(6, 3)), rng.normal(size=(6, 1)), cfg())
    with pytest.raises(ValueError):
        L.node_update(n, np.ones((5, 1)))


# -- properties ---------------------------------------------------------------------

instances = st.tuples(
    st.integers(0, 2**31),
    st.integers(2, 40),
    st.integers(1, 10),
    st.integers(1, 3),
    st.sampled_from([1e-4, 1e-2, 1.0, 1 / 128]),
)


@given(instances, st.integers(1, 12))
def test_oracle_equivalence(inst, b):
    seed, l, k, c, lam = inst
    rng = np.random.default_rng(seed)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    ref = direct_ridge(a, y, lam).w
    conf = BatchConfig(lam, b)
    for state in (L.rec_fit(a, y, conf), L.sqrt_fit(a, y, conf), L.node_fit(a, y, conf)):
        assert relative_error(state.w, ref) < 1e-6


@given(instances, st.integers(1, 12), st.integers(1, 12))
def test_batch_size_invariance(inst, b1, b2):
    seed, l, k, c, lam = inst
    rng = np.random.default_rng(seed)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    for fit in (L.rec_fit, L.sqrt_fit, L.node_fit):
        w1, w2 = fit(a, y, BatchConfig(lam, b1)).w, fit(a, y, BatchConfig(lam, b2)).w
        assert relative_error(w1, w2) < 1e-8


@given(instances, st.integers(1, 12))
def test_sqrt_state_consistency(inst, b):
    seed, l, k, c, lam = inst
    rng = np.random.default_rng(seed)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    conf = BatchConfig(lam, b)
    assert factor_residual(L.sqrt_fit(a, y, conf).f, a, lam) < 1e-6
    assert factor_residual(L.node_fit(a, y, conf).f, a, lam) < 1e-6


@given(instances)
def test_rec_sqrt_agreement(inst):
    seed, l, k, c, _ = inst
    rng = np.random.default_rng(seed)
    a, y = rng.normal(size=(l, k)), rng.normal(size=(l, c))
    conf = BatchConfig(1.0, 3)
    assert np.abs(L.rec_fit(a, y, conf).w - L.sqrt_fit(a, y, conf).w).max() < 1e-7
