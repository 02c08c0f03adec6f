import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ballotadv.attacks import projections as P
from oracles import best_k_subset, l1_projection_bisection, sigma_map_reference

vectors = arrays(np.float64, st.integers(1, 30), elements=st.floats(-3, 3))
budgets = st.floats(0.0, 5.0)


def test_linf_examples():
    d = np.zeros(2000)
    d[7] = 1.2
    assert P.project_linf(d, 0.5)[7] == 0.5
    inside = np.full(2000, 0.1)
    assert np.array_equal(P.project_linf(inside, 0.5), inside)


def test_linf_is_coordinatewise_nearest():
    d = np.random.default_rng(0).normal(size=2000)
    out = P.project_linf(d, 0.3)
    np.testing.assert_array_equal(out, np.where(np.abs(d) > 0.3, 0.3 * np.sign(d), d))


def test_l2_examples():
    d = np.zeros(2000)
    d[:4] = 1.0
    np.testing.assert_allclose(P.project_l2(d, 1.0), 0.5 * d, atol=1e-15)
    assert not np.any(P.project_l2(np.zeros(2000), 1.0))


def test_l2_matches_minimiser_on_slices():
    from scipy.optimize import minimize
    g = np.random.default_rng(1)
    for _ in range(20):
        v = g.normal(size=10) * 2
        eps = g.uniform(0.1, 2)
        out = P.project_l2(v, eps)
        assert np.linalg.norm(out) <= eps + 1e-12
        res = minimize(lambda z: np.sum((z - v) ** 2), np.zeros(10), method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda z: eps ** 2 - z @ z}],
                       options={"ftol": 1e-14, "maxiter": 500})
        np.testing.assert_allclose(out, res.x, atol=1e-5)


def test_l1_examples():
    d = np.zeros(2000)
    d[:2] = 0.5
    out = P.project_l1(d, 0.5)
    np.testing.assert_allclose(out[:2], 0.25, atol=1e-15)
    assert not np.any(out[2:])
    small = np.full(10, 0.01)
    assert np.array_equal(P.project_l1(small, 0.5), small)


def test_l1_matches_bisection_oracle_batched():
    g = np.random.default_rng(2)
    v = g.normal(size=(10_000, 8)) * g.uniform(0.1, 3, (10_000, 1))
    eps = g.uniform(0.05, 4, 10_000)
    out = P.project_l1(v, eps)
    ref = np.stack([l1_projection_bisection(a, e) for a, e in zip(v[:1000], eps[:1000])])
    assert np.max(np.abs(out[:1000] - ref)) <= 1e-9
    assert np.all(np.abs(out).sum(1) <= eps + 1e-9)


@settings(max_examples=300, deadline=None)
@given(vectors, st.floats(0.01, 5.0))
def test_l1_matches_oracle_property(v, eps):
    assert np.max(np.abs(P.project_l1(v, eps) - l1_projection_bisection(v, eps))) <= 1e-9


def test_topk_examples():
    np.testing.assert_array_equal(P.project_l0_topk([0.5, -0.9, 0.1], 1), [0, -0.9, 0])
    d = np.array([0.0, 0.3, 0.0, -0.2])
    assert np.array_equal(P.project_l0_topk(d, 2), d)
    assert np.array_equal(P.project_l0_topk(d, 5), d)


def test_topk_tie_goes_to_lowest_index():
    np.testing.assert_array_equal(P.project_l0_topk([0.2, -0.5, 0.5, 0.5], 2), [0, -0.5, 0.5, 0])


def test_topk_matches_exhaustive_subset_search():
    g = np.random.default_rng(3)
    for _ in range(200):
        v = g.normal(size=12)
        k = int(g.integers(1, 12))
        out = P.project_l0_topk(v, k)
        assert np.count_nonzero(out) <= k
        assert np.isclose(np.sum(out ** 2), best_k_subset(v, k), rtol=0, atol=1e-12)


def test_topk_on_full_dimension():
    d = np.random.default_rng(4).normal(size=2000)
    out = P.project_l0_topk(d, 20)
    assert np.count_nonzero(out) == 20
    assert np.min(np.abs(out[out != 0])) >= np.max(np.abs(d[out == 0]))


def test_l0_linf_examples():
    d = np.zeros(2000)
    d[:2] = 1.0
    d[2:] = 0.1
    out = P.project_l0_linf(d, 1, 0.25)
    assert np.count_nonzero(out) == 1 and out[0] == 0.25
    inside = np.zeros(2000)
    inside[[3, 9]] = [0.1, -0.2]
    assert np.array_equal(P.project_l0_linf(inside, 5, 0.3), inside)


def test_l0_linf_feasible():
    g = np.random.default_rng(5)
    for _ in range(100):
        d = g.normal(size=2000)
        k, e = int(g.integers(1, 100)), g.uniform(0, 1)
        out = P.project_l0_linf(d, k, e)
        assert np.count_nonzero(out) <= k and np.max(np.abs(out)) <= e


# ---------------------------------------------------------------- sigma map


def test_sigma_constant_image_is_zero():
    assert not np.any(P.sigma_map(np.full((40, 50), 0.37)))


def test_sigma_matches_reference():
    img = np.random.default_rng(6).uniform(size=(40, 50))
    np.testing.assert_allclose(P.sigma_map(img), sigma_map_reference(img), rtol=0, atol=1e-12)


def test_sigma_checkerboard_positive():
    rr, cc = np.mgrid[0:40, 0:50]
    board = ((rr + cc) % 2).astype(float)
    sig = P.sigma_map(board)
    assert np.all(sig > 0)
    np.testing.assert_allclose(sig, sigma_map_reference(board), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-0.2, 0.2))
def test_sigma_shift_invariant(seed, c):
    img = np.random.default_rng(seed).uniform(0.25, 0.75, (40, 50))
    np.testing.assert_allclose(P.sigma_map(img + c), P.sigma_map(img), atol=1e-12)


def test_sigma_batch_shapes():
    imgs = np.random.default_rng(7).uniform(size=(3, 2000))
    batch = P.sigma_map(imgs)
    assert batch.shape == (3, 2000)
    np.testing.assert_array_equal(batch[1], P.sigma_map(imgs[1].reshape(40, 50)).ravel())


def test_l0_sigma_examples():
    d = np.random.default_rng(8).normal(size=2000)
    assert not np.any(P.project_l0_sigma(d, np.full(2000, 0.5), 10, 3.0))
    img = np.random.default_rng(9).uniform(size=2000)
    assert not np.any(P.project_l0_sigma(d, img, 10, 0.0))


def test_l0_sigma_feasible():
    g = np.random.default_rng(10)
    for _ in range(50):
        img = g.uniform(size=2000)
        d = g.normal(size=2000)
        k, kappa = int(g.integers(1, 300)), g.uniform(0, 5)
        out = P.project_l0_sigma(d, img, k, kappa)
        assert np.count_nonzero(out) <= k
        assert np.all(np.abs(out) <= kappa * P.sigma_map(img) + 1e-12)


# ---------------------------------------------------------------- idempotence


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_all_projections_idempotent(seed):
    g = np.random.default_rng(seed)
    d = g.normal(size=2000) * g.uniform(0.01, 2)
    img = g.uniform(size=2000)
    eps, k, kappa = g.uniform(0.01, 3), int(g.integers(1, 2000)), g.uniform(0, 10)
    ops = [lambda v: P.project_linf(v, eps), lambda v: P.project_l2(v, eps),
           lambda v: P.project_l1(v, eps), lambda v: P.project_l0_topk(v, k),
           lambda v: P.project_l0_linf(v, k, eps),
           lambda v: P.project_l0_sigma(v, img, k, kappa),
           lambda v: P.project_box(v, img)]
    for op in ops:
        once = op(d)
        assert np.max(np.abs(op(once) - once)) <= 1e-12


def test_box_projection():
    x = np.array([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(P.project_box(np.array([-1.0, 0.7, 0.3]), x), [0.0, 0.5, 0.0])


def test_batched_rows_match_single_rows():
    g = np.random.default_rng(11)
    d = g.normal(size=(5, 2000))
    eps = g.uniform(0.5, 3, 5)
    batch = P.project_l1(d, eps)
    for i in range(5):
        np.testing.assert_array_equal(batch[i], P.project_l1(d[i], eps[i]))
