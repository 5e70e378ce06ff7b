import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlcm.distributions import RngStream
from rlcm.errors import DomainError
from rlcm.initialize import (
    InitReport,
    default_gamma,
    default_kappa,
    init_alpha,
    init_beta,
    init_defaults,
    init_lambda,
    initial_state,
    kmeans_1d,
    nmf,
)
from rlcm.model import ModelConfig, build_effect_table, check_monotone, design_matrix
from rlcm.sampler import FitData, state_violations
from rlcm.simulate import Scenario, simulate_dataset


# --- nmf -------------------------------------------------------------------------


def test_nmf_rank_one_exact():
    g = np.random.default_rng(0)
    Y = np.outer(g.random(30) + 0.1, g.random(6) + 0.1)
    W, H, trace = nmf(Y, 1, max_iters=200, tol=0.0)
    assert len(trace) <= 201
    assert np.linalg.norm(Y - W @ H) / np.linalg.norm(Y) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_nmf_objective_non_increasing(seed):
    g = np.random.default_rng(seed)
    Y = g.integers(0, 5, (40, 7)).astype(float)
    W, H, trace = nmf(Y, 3, max_iters=300, tol=0.0, rng=g)
    assert np.all(np.diff(trace) <= 1e-10)
    assert np.all(W >= 0) and np.all(H >= 0)
    assert trace[-1] == pytest.approx(np.linalg.norm(Y - W @ H))


def test_nmf_overcomplete_near_zero():
    g = np.random.default_rng(1)
    Y = g.integers(0, 4, (25, 4)).astype(float)
    W, H, trace = nmf(Y, 4, max_iters=5000, tol=0.0)
    assert trace[-1] / np.linalg.norm(Y) < 1e-2


def test_nmf_stops_at_tolerance():
    g = np.random.default_rng(2)
    Y = g.random((30, 5))
    _, _, trace = nmf(Y, 2, max_iters=10000, tol=1e-3)
    assert len(trace) < 10001
    assert (trace[-2] - trace[-1]) / trace[-2] < 1e-3


def test_nmf_zero_matrix_warns():
    with pytest.warns(RuntimeWarning):
        W, H, _ = nmf(np.zeros((5, 3)), 2)
    assert not W.any() and not H.any() and W.shape == (5, 2) and H.shape == (2, 3)


def test_nmf_rejects_negative():
    with pytest.raises(DomainError):
        nmf(-np.ones((2, 2)), 1)


# --- kmeans -----------------------------------------------------------------------


def test_kmeans_separated():
    labels, centers = kmeans_1d([0, 0, 10, 10], 2)
    assert labels.tolist() == [0, 0, 1, 1]
    assert centers.tolist() == [0, 10]


def test_kmeans_labels_follow_ascending_centers():
    labels, centers = kmeans_1d([10, 10, 0, 0, 5, 5], 3)
    assert labels.tolist() == [2, 2, 0, 0, 1, 1]


def test_kmeans_constant_column_warns():
    with pytest.warns(RuntimeWarning):
        labels, _ = kmeans_1d(np.full(6, 3.0), 2)
    assert not labels.any()


def test_kmeans_too_few_points():
    with pytest.raises(DomainError):
        kmeans_1d([1.0], 2)


def test_kmeans_gaussian_mixture_agreement():
    # Component sd 0.5: the Bayes classifier agrees ~97% (at sd 1 it is only ~79%).
    g = np.random.default_rng(3)
    comp = np.repeat([0, 1, 2], 100)
    x = g.normal(np.array([-2.0, 0.0, 2.0])[comp], 0.5)
    labels, _ = kmeans_1d(x, 3)
    assert np.mean(labels == comp) >= 0.90


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5))
def test_kmeans_label_means_ascending(seed, L):
    x = np.random.default_rng(seed).normal(size=60)
    labels, centers = kmeans_1d(x, L)
    means = [x[labels == l].mean() for l in range(L) if np.any(labels == l)]
    assert np.all(np.diff(means) > 0)
    assert np.all(np.diff(centers) > 0)


# --- beta and lambda ---------------------------------------------------------------


def test_init_beta_noiseless_recovery():
    t = build_effect_table(2, 3, 2)
    alpha = np.repeat(t.classes, 5, axis=0)
    beta = np.abs(np.random.default_rng(4).normal(size=(t.H, 3)))
    Y = design_matrix(alpha, t) @ beta
    assert np.allclose(init_beta(alpha, Y, t), beta, atol=1e-10)


def test_init_beta_zero_response():
    t = build_effect_table(2, 2, 2)
    alpha = np.repeat(t.classes, 3, axis=0)
    assert not init_beta(alpha, np.zeros((alpha.shape[0], 4)), t).any()


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([(2, 2), (2, 3), (3, 2)]))
def test_init_beta_always_monotone(seed, shape):
    g = np.random.default_rng(seed)
    t = build_effect_table(*shape, 2)
    alpha = g.integers(0, shape[1], (30, shape[0]))
    Y = g.integers(0, 4, (30, 3)).astype(float)
    beta = init_beta(alpha, Y, t)
    assert all(check_monotone(beta[:, j], t) for j in range(3))


def test_init_beta_intercept_clip_switch():
    t = build_effect_table(1, 2, 1)
    alpha = np.array([[0], [0], [1], [1]])
    Y = np.array([[-1.0], [-1.0], [0.0], [0.0]])
    assert init_beta(alpha, Y, t)[0, 0] == pytest.approx(-1.0)
    assert init_beta(alpha, Y, t, clip_intercept=True)[0, 0] == 0.0


def test_init_lambda_cases():
    g = np.random.default_rng(5)
    X = np.column_stack([np.ones(50), g.normal(size=(50, 2))])
    assert not init_lambda(X, np.zeros((50, 2))).any()
    lam = g.normal(size=(3, 2))
    assert np.allclose(init_lambda(X, X @ lam), lam, atol=1e-12)
    A = g.integers(0, 3, (50, 2)).astype(float)
    oracle = np.linalg.solve(X.T @ X, X.T @ A)
    assert np.max(np.abs(init_lambda(X, A) - oracle)) < 1e-10


# --- defaults and full initial state ----------------------------------------------


def test_defaults():
    kappa = default_kappa([2, 4])
    assert kappa[0].tolist() == [-np.inf, 0.0, np.inf, np.inf, np.inf]
    assert kappa[1].tolist() == [-np.inf, 0.0, 0.5, 1.0, np.inf]
    assert default_gamma(2, 2).tolist() == [[-np.inf, 0.0, np.inf]] * 2
    assert default_gamma(1, 4).tolist() == [[-np.inf, 0.0, 0.75, 1.5, np.inf]]
    cfg = ModelConfig(N=5, J=2, M=[2, 4], K=2, L=3)
    _, _, R, sigma, omega, delta = init_defaults(cfg)
    assert np.array_equal(R, np.eye(2)) and np.array_equal(sigma, np.eye(2))
    assert omega == 0.5 and delta.shape == (build_effect_table(2, 3, 2).H, 2) and delta.all()


def test_init_alpha_deterministic_and_reported():
    ds = simulate_dataset(Scenario(N=200, J=10, K=2, L=3), 0)
    rep = InitReport(None, None, None)
    a = init_alpha(ds.Y.astype(float), 2, 3, seed=7, report=rep)
    b = init_alpha(ds.Y.astype(float), 2, 3, seed=7)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 2
    assert len(rep.centers) == 2 and np.all(np.diff(rep.nmf_trace) <= 1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([(2, 2), (2, 3), (3, 3)]))
def test_initial_state_passes_invariants(seed, shape):
    K, L = shape
    sc = Scenario(N=60, J=6, K=K, L=L, seed=seed % 50, rho=0.25)
    ds = simulate_dataset(sc, seed)
    cfg = ModelConfig(N=60, J=6, M=sc.levels, K=K, L=L, seed=seed)
    data = FitData.build(cfg, ds.Y, ds.X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        state, report = initial_state(data, RngStream(seed, (3,)).generator(), seed=seed)
    assert state_violations(data, state) == []
    assert all(check_monotone(report.beta[:, j], data.table) for j in range(6))
