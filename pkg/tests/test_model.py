import itertools
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from rlcm.errors import ConfigError, DomainError
from rlcm.model import (
    ModelConfig,
    build_effect_table,
    check_monotone,
    design_matrix,
    design_vector,
    effect_count,
    eta_table,
    full_kappa,
    item_response_prob,
    measurement_param_count,
    monotonicity_lower_bound,
    pad_kappa,
    structural_param_count,
    transform_to_expanded,
    transform_to_original,
)

HRSD_M = [3] * 8 + [4] + [5] * 8


# --- oracles ------------------------------------------------------------------


def kronecker_design(alpha, K, L, order):
    """Full L^K Kronecker product of per-attribute cumulative codes, then truncated."""
    codes = [np.array([1.0] + [float(a >= l) for l in range(1, L)]) for a in alpha]
    full = reduce(np.kron, codes)
    keep = [sum(v > 0 for v in t) <= order for t in itertools.product(range(L), repeat=K)]
    return full[np.array(keep)]


def pairwise_monotone(beta_j, table, tol=1e-12):
    d = design_matrix(table.classes, table)
    eta = d @ beta_j
    for u, v in itertools.product(range(len(table.classes)), repeat=2):
        if np.all(table.classes[u] >= table.classes[v]) and eta[u] < eta[v] - tol:
            return False
    return True


def brute_lower_bound(h, beta_j, table):
    d = design_matrix(table.classes, table)
    b = np.array(beta_j, dtype=float)
    b[h] = 0.0
    best = -np.inf
    for u, v in itertools.product(range(len(table.classes)), repeat=2):
        if u == v or not np.all(table.classes[u] >= table.classes[v]):
            continue
        diff = d[u] - d[v]
        if diff[h] > 0:
            best = max(best, -(diff @ b) / diff[h])
    return best


# --- effect table ---------------------------------------------------------------


def test_effect_table_k3_l3_has_19_effects_with_published_labels():
    t = build_effect_table(3, 3, 2)
    assert t.H == 19
    for label in ("[1 2 0]", "[2 0 1]", "[2 0 2]", "[2 1 0]", "[2 2 0]"):
        assert label in t.labels
    assert t.labels[0] == "[0 0 0]"


def test_effect_table_small_cases():
    t = build_effect_table(1, 2, 1)
    assert t.H == 2 and t.effects.tolist() == [[0], [1]]
    assert build_effect_table(4, 2, 2).H == 11


@pytest.mark.parametrize("K,L", [(K, L) for K in range(1, 5) for L in range(2, 5)])
def test_effect_count_matches_enumeration(K, L):
    for order in range(1, K + 1):
        brute = sum(1 for t in itertools.product(range(L), repeat=K) if sum(v > 0 for v in t) <= order)
        assert effect_count(K, L, order) == brute == build_effect_table(K, L, order).H


def test_effect_table_deterministic_and_intercept_first():
    a, b = build_effect_table(3, 3, 2), build_effect_table(3, 3, 2)
    assert np.array_equal(a.effects, b.effects)
    assert a.effects[0].tolist() == [0, 0, 0]
    assert np.all(a.class_design[:, 0] == 1)


@pytest.mark.parametrize("order", [0, 4])
def test_effect_table_bad_order(order):
    with pytest.raises(ConfigError):
        build_effect_table(3, 2, order)


# --- design vector ---------------------------------------------------------------


def test_design_vector_examples():
    t = build_effect_table(2, 2, 2)
    assert design_vector((1, 0), t).tolist() == [1, 0, 1, 0]
    assert design_vector((0, 0), t).tolist() == [1, 0, 0, 0]
    t3 = build_effect_table(2, 3, 2)
    d = design_vector((2, 1), t3)
    expect = [float(e[0] <= 2 and e[1] <= 1) for e in t3.effects]
    assert d.tolist() == expect


@pytest.mark.parametrize("K,L", [(K, L) for K in range(1, 4) for L in range(2, 4)])
def test_design_matches_kronecker_oracle(K, L):
    for order in range(1, K + 1):
        t = build_effect_table(K, L, order)
        for alpha in t.classes:
            assert np.array_equal(design_vector(alpha, t), kronecker_design(alpha, K, L, order))


def test_design_out_of_range():
    t = build_effect_table(2, 2, 2)
    with pytest.raises(DomainError):
        design_vector((2, 0), t)
    with pytest.raises(DomainError):
        design_vector((0, -1), t)


# --- monotonicity --------------------------------------------------------------


def test_lower_bound_single_binary_attribute():
    t = build_effect_table(1, 2, 1)
    assert monotonicity_lower_bound(1, np.array([0.3, 0.0]), t) == 0.0
    assert monotonicity_lower_bound(0, np.array([0.3, 0.0]), t) == -np.inf


def test_lower_bound_with_negative_interaction():
    t = build_effect_table(2, 2, 2)
    beta = np.zeros(4)
    beta[t.index[(0, 1)]] = 1.0
    beta[t.index[(1, 1)]] = -0.5
    h = t.index[(1, 0)]
    assert monotonicity_lower_bound(h, beta, t) == pytest.approx(0.5, abs=0)
    assert brute_lower_bound(h, beta, t) == 0.5


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([(1, 3, 1), (2, 2, 2), (2, 3, 2), (3, 2, 2), (3, 3, 2), (3, 2, 3)]), st.integers(0, 10**6))
def test_lower_bound_matches_pair_enumeration(shape, seed):
    t = build_effect_table(*shape)
    beta = np.random.default_rng(seed).normal(0, 1, t.H)
    for h in range(1, t.H):
        assert monotonicity_lower_bound(h, beta, t) == pytest.approx(brute_lower_bound(h, beta, t), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([(2, 2, 2), (2, 3, 2), (3, 3, 2)]), st.integers(0, 10**6))
def test_nonnegative_main_effects_give_zero_bound(shape, seed):
    t = build_effect_table(*shape)
    beta = np.abs(np.random.default_rng(seed).normal(0, 1, t.H))
    beta[t.effect_order >= 2] = 0.0
    for h in np.nonzero(t.effect_order == 1)[0]:
        assert monotonicity_lower_bound(int(h), beta, t) == 0.0


def test_lower_bound_matrix_form():
    t = build_effect_table(2, 3, 2)
    B = np.random.default_rng(3).normal(size=(t.H, 5))
    for h in range(1, t.H):
        vec = [monotonicity_lower_bound(h, B[:, j], t) for j in range(5)]
        assert np.allclose(monotonicity_lower_bound(h, B, t), vec)


def test_check_monotone_examples():
    t = build_effect_table(1, 2, 1)
    assert check_monotone(np.zeros(2), t)
    assert not check_monotone(np.array([0.3, -0.1]), t)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from([(2, 2, 2), (2, 3, 2), (3, 2, 2), (3, 3, 2)]), st.integers(0, 10**6))
def test_incremental_bounds_yield_monotone(shape, seed):
    t = build_effect_table(*shape)
    g = np.random.default_rng(seed)
    beta = np.zeros(t.H)
    beta[0] = g.normal()
    for h in range(1, t.H):
        beta[h] = monotonicity_lower_bound(h, beta, t) + g.exponential()
    assert check_monotone(beta, t)
    assert pairwise_monotone(beta, t)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([(2, 2, 2), (2, 3, 2), (3, 2, 2)]), st.integers(0, 10**6))
def test_check_monotone_matches_pairwise_oracle(shape, seed):
    t = build_effect_table(*shape)
    beta = np.random.default_rng(seed).normal(0.3, 1, t.H)
    assert check_monotone(beta, t) == pairwise_monotone(beta, t)


# --- response probabilities ----------------------------------------------------


def test_item_response_prob_symmetric_binary():
    t = build_effect_table(2, 2, 2)
    assert item_response_prob((1, 1), np.zeros(4), full_kappa([], 2), 0, t) == 0.5


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 6))
def test_item_response_probs_sum_to_one(seed, M):
    g = np.random.default_rng(seed)
    t = build_effect_table(2, 3, 2)
    beta = g.normal(0, 3, t.H)
    kappa = full_kappa(np.cumsum(g.exponential(size=M - 2)), M)
    alpha = g.integers(0, 3, 2)
    total = sum(item_response_prob(alpha, beta, kappa, m, t) for m in range(M))
    assert abs(total - 1.0) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone_beta_gives_stochastic_ordering(seed):
    g = np.random.default_rng(seed)
    t = build_effect_table(2, 3, 2)
    beta = np.zeros(t.H)
    beta[0] = g.normal()
    for h in range(1, t.H):
        beta[h] = monotonicity_lower_bound(h, beta, t) + g.exponential(0.5)
    kappa = full_kappa([0.7, 1.5], 4)
    for u, v in itertools.product(t.classes, repeat=2):
        if np.all(u >= v):
            for m in range(3):
                pu = sum(item_response_prob(u, beta, kappa, k, t) for k in range(m + 1, 4))
                pv = sum(item_response_prob(v, beta, kappa, k, t) for k in range(m + 1, 4))
                assert pu >= pv - 1e-12


def test_eta_table_matches_item_probs_and_pads():
    t = build_effect_table(2, 2, 2)
    g = np.random.default_rng(4)
    beta = np.abs(g.normal(size=(t.H, 3)))
    kappas = [full_kappa([], 2), full_kappa([0.8], 3), full_kappa([0.5, 1.1, 2.0], 5)]
    eta = eta_table(beta, pad_kappa(kappas), t)
    assert eta.shape == (4, 3, 5)
    assert np.allclose(eta.sum(axis=2), 1.0, atol=1e-12)
    for c, a in enumerate(t.classes):
        for j, k in enumerate(kappas):
            for m in range(len(k) - 1):
                assert eta[c, j, m] == pytest.approx(item_response_prob(a, beta[:, j], k, m, t), abs=1e-15)
            assert np.all(eta[c, j, len(k) - 1:] == 0)


def test_eta_extreme_predictor_keeps_precision():
    t = build_effect_table(1, 2, 1)
    eta = eta_table(np.array([[10.0], [0.0]]), pad_kappa([full_kappa([], 2)]), t)
    assert eta[0, 0, 0] == pytest.approx(ndtr(-10.0), rel=1e-12)


# --- transformations -------------------------------------------------------------


def test_identity_transform():
    lam = np.arange(6.0).reshape(3, 2)
    gam = np.array([[-np.inf, 0, 1.0, np.inf]] * 2)
    R, l2, g2, _ = transform_to_original(np.eye(2), lam, gam)
    assert np.array_equal(R, np.eye(2)) and np.array_equal(l2, lam) and np.array_equal(g2, gam)


def test_diagonal_transform():
    lam = np.ones((3, 2))
    R, l2, _, _ = transform_to_original(np.diag([4.0, 9.0]), lam, np.zeros((2, 3)))
    assert np.array_equal(R, np.eye(2))
    assert np.allclose(l2[:, 0], 0.5) and np.allclose(l2[:, 1], 1 / 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10**6))
def test_transform_round_trip(K, seed):
    g = np.random.default_rng(seed)
    a = g.normal(size=(K, K))
    sigma = a @ a.T + 0.2 * np.eye(K)
    lam = g.normal(size=(3, K))
    gam = np.column_stack([np.full(K, -np.inf), np.zeros(K), np.abs(g.normal(size=K)) + 0.1, np.full(K, np.inf)])
    astar = g.normal(size=(7, K))
    R, l, gm, s = transform_to_original(sigma, lam, gam, astar)
    assert np.all(np.diag(R) == 1.0) and np.linalg.eigvalsh(R).min() > 0
    back = transform_to_expanded(R, np.diag(sigma), l, gm, s)
    assert np.allclose(back[0], sigma, atol=1e-10)
    assert np.allclose(back[1], lam, atol=1e-10)
    assert np.allclose(back[2][:, 1:-1], gam[:, 1:-1], atol=1e-10)
    assert np.allclose(back[3], astar, atol=1e-10)


def test_transform_rejects_non_pd():
    with pytest.raises(DomainError):
        transform_to_original(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros((1, 2)), np.zeros((2, 3)))


# --- configuration and counts ----------------------------------------------------


def test_model_config_defaults_match_published_hyperparameters():
    c = ModelConfig(N=10, J=2, M=[2, 3], K=3, L=2)
    assert (c.sigma_beta_sq, c.omega0, c.omega1, c.a, c.v0) == (2.0, 0.5, 0.5, 1e-3, 4)


@pytest.mark.parametrize(
    "kw",
    [dict(M=[2]), dict(M=[1, 2]), dict(L=1), dict(order=3), dict(K=0), dict(sigma_beta_sq=0.0), dict(burnin=20, chain_length=10)],
)
def test_model_config_validation(kw):
    base = dict(N=10, J=2, M=[2, 3], K=2, L=2)
    base.update(kw)
    with pytest.raises(ConfigError):
        ModelConfig(**base)


@pytest.mark.parametrize("K,L,expect", [(2, 2, 7), (3, 2, 12), (2, 3, 9), (4, 2, 18), (3, 3, 15)])
def test_structural_counts_match_published_table(K, L, expect):
    assert structural_param_count(K, L, 3) == expect


@pytest.mark.parametrize("K,L,formula,published", [(2, 2, 102, 104), (3, 2, 153, 155), (2, 3, 187, 189), (4, 2, 221, 223), (3, 3, 357, 359)])
def test_measurement_counts_formula_is_two_below_published(K, L, formula, published):
    H = build_effect_table(K, L, 2).H
    assert measurement_param_count(len(HRSD_M), H, HRSD_M) == formula == published - 2
