"""Starting values for the chain.

Latent states come from a rank-K nonnegative factorisation of the response
matrix followed by a one-dimensional k-means with L centres on every
projected column.  beta and lambda then come from least squares given those
states, and the remaining blocks from fixed defaults.  Y* and alpha*~ are
drawn from their truncated conditionals so the starting state sits inside
every support constraint.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from rlcm.distributions import RngStream, sample_truncated_normal
from rlcm.errors import DomainError
from rlcm.model import EffectTable, ModelConfig, build_effect_table, design_matrix, pad_kappa
from rlcm.sampler import ChainState, FitData, conditional_moments

log = logging.getLogger(__name__)


@dataclass
class InitReport:
    alpha: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    nmf_trace: list[float] = field(default_factory=list)
    centers: list[np.ndarray] = field(default_factory=list)


def nmf(Y, K: int, max_iters: int = 500, tol: float = 1e-6, rng=None):
    """Rank-K factorisation Y ~ W H with W, H >= 0 (Lee-Seung updates).

    Returns ``(W, H, trace)`` where ``trace`` holds the Frobenius error after
    initialisation and after every iteration; it is non-increasing.
    """
    Y = np.asarray(Y, dtype=float)
    if np.any(Y < 0):
        raise DomainError("nmf needs a nonnegative matrix")
    n, j = Y.shape
    if not np.any(Y):
        warnings.warn("nmf on an all-zero matrix; returning zero factors", RuntimeWarning, stacklevel=2)
        return np.zeros((n, K)), np.zeros((K, j)), [0.0]
    if rng is None:
        rng = np.random.default_rng(0)
    scale = np.sqrt(Y.mean() / K)
    W = rng.random((n, K)) * scale
    H = rng.random((K, j)) * scale
    tiny = np.finfo(float).tiny
    trace = [float(np.linalg.norm(Y - W @ H))]
    for _ in range(max_iters):
        H *= (W.T @ Y) / np.maximum(W.T @ W @ H, tiny)
        W *= (Y @ H.T) / np.maximum(W @ (H @ H.T), tiny)
        err = float(np.linalg.norm(Y - W @ H))
        prev = trace[-1]
        trace.append(err)
        if prev == 0 or (prev - err) / prev < tol:
            break
    return W, H, trace


def kmeans_1d(column, L: int, max_iters: int = 100):
    """Lloyd's algorithm on one column; returns (labels, ascending centres).

    Centres start at the L evenly spaced sample quantiles.  If the column
    has fewer than L distinct values, each distinct value gets its own label
    (lowest labels first) and a warning is issued.
    """
    x = np.asarray(column, dtype=float).ravel()
    if x.size < L:
        raise DomainError(f"kmeans_1d needs at least L={L} points, got {x.size}")
    distinct = np.unique(x)
    if distinct.size < L:
        warnings.warn(
            f"column has {distinct.size} distinct values for {L} clusters; merging",
            RuntimeWarning,
            stacklevel=2,
        )
        labels = np.searchsorted(distinct, x)
        centers = np.concatenate((distinct, np.full(L - distinct.size, np.nan)))
        return labels.astype(np.int64), centers
    centers = np.quantile(x, (np.arange(L) + 0.5) / L)
    if np.unique(centers).size < L:
        centers = distinct[np.linspace(0, distinct.size - 1, L).round().astype(int)]
    labels = np.zeros(x.size, dtype=np.int64)
    for _ in range(max_iters):
        labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        new = centers.copy()
        for l in range(L):
            members = x[labels == l]
            if members.size:
                new[l] = members.mean()
        if np.array_equal(new, centers):
            break
        centers = new
    order = np.argsort(centers, kind="stable")
    rank = np.empty(L, dtype=np.int64)
    rank[order] = np.arange(L)
    labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    return rank[labels], centers[order]


def init_alpha(Y, K: int, L: int, seed: int = 0, report: InitReport | None = None):
    """Latent states from NMF projections clustered per attribute."""
    rng = RngStream(seed, (0,)).generator()
    W, _, trace = nmf(Y, K, rng=rng)
    alpha = np.zeros((W.shape[0], K), dtype=np.int64)
    centers = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(K):
            labels, c = kmeans_1d(W[:, k], L)
            alpha[:, k] = labels
            centers.append(c)
    if report is not None:
        report.nmf_trace = trace
        report.centers = centers
    return alpha


def init_beta(alpha, Y, table: EffectTable, clip_intercept: bool = False):
    """Least-squares beta per item, negatives clipped to land in the cone.

    The intercept is left alone unless ``clip_intercept`` is set.
    """
    D = design_matrix(alpha, table)
    beta, *_ = np.linalg.lstsq(D, np.asarray(Y, dtype=float), rcond=None)
    start = 0 if clip_intercept else 1
    beta[start:] = np.maximum(beta[start:], 0.0)
    beta[np.abs(beta) < 1e-14] = 0.0
    return beta


def init_lambda(X, alpha):
    """Least-squares solution of X lambda = alpha."""
    lam, *_ = np.linalg.lstsq(np.asarray(X, float), np.asarray(alpha, float), rcond=None)
    return lam


def default_kappa(M) -> np.ndarray:
    return pad_kappa(
        [np.concatenate(([-np.inf], 0.5 * np.arange(m - 1), [np.inf])) for m in M]
    )


def default_gamma(K: int, L: int) -> np.ndarray:
    row = np.concatenate(([-np.inf], 0.75 * np.arange(L - 1), [np.inf]))
    return np.tile(row, (K, 1))


def init_defaults(config: ModelConfig):
    """(kappa, gamma, R, Sigma, omega, delta) at their fixed starting values."""
    H = build_effect_table(config.K, config.L, config.order).H
    return (
        default_kappa(config.M),
        default_gamma(config.K, config.L),
        np.eye(config.K),
        np.eye(config.K),
        0.5,
        np.ones((H, config.J), dtype=np.int8),
    )


def _draw_latents(data: FitData, state: ChainState, rng, sweeps: int = 1):
    """Refresh Y* and alpha*~ from their truncated conditionals."""
    D = design_matrix(state.alpha, data.table)
    cols = np.arange(data.J)[None, :]
    lo, hi = state.kappa[cols, data.Y], state.kappa[cols, data.Y + 1]
    state.ystar = sample_truncated_normal(D @ state.beta, 1.0, lo, hi, rng)
    for _ in range(sweeps):
        for k in range(data.K):
            mu, sd = conditional_moments(state.astar, data.X, state.lam, state.sigma, k)
            g = state.gamma[k]
            lev = state.alpha[:, k]
            state.astar[:, k] = sample_truncated_normal(mu, sd * sd, g[lev], g[lev + 1], rng)


def initial_state(data: FitData, rng: np.random.Generator, seed: int = 0):
    """ChainState for iteration 0 plus the InitReport that produced it."""
    cfg = data.config
    report = InitReport(alpha=None, beta=None, lam=None)
    Y = data.Y.astype(float)
    alpha = init_alpha(Y, cfg.K, cfg.L, seed=seed, report=report)
    beta = init_beta(alpha, Y, data.table, clip_intercept=cfg.clip_intercept)
    lam = init_lambda(data.X, alpha)
    kappa, gamma, _, sigma, omega, delta = init_defaults(cfg)
    report.alpha, report.beta, report.lam = alpha, beta, lam
    state = ChainState(
        alpha=alpha.copy(),
        astar=np.zeros((data.N, cfg.K)),
        ystar=np.zeros((data.N, data.J)),
        beta=beta.copy(),
        delta=delta,
        kappa=kappa,
        gamma=gamma,
        lam=lam.copy(),
        sigma=sigma,
        omega=omega,
        sigma_kappa=np.full(data.J, cfg.sigma_kappa),
    )
    _draw_latents(data, state, rng)
    return state, report


def state_from_values(data: FitData, *, alpha, beta, delta, kappa, lam, R, gamma,
                      omega=0.5, rng, sweeps: int = 20) -> ChainState:
    """ChainState at given original-coordinate values (Sigma = R).

    The latent Y* is drawn exactly; alpha*~ is refreshed by ``sweeps``
    coordinate passes of its truncated conditional.
    """
    state = ChainState(
        alpha=np.asarray(alpha, dtype=np.int64).copy(),
        astar=np.zeros((data.N, data.K)),
        ystar=np.zeros((data.N, data.J)),
        beta=np.asarray(beta, float).copy(),
        delta=np.asarray(delta, dtype=np.int8).copy(),
        kappa=np.asarray(kappa, float).copy(),
        gamma=np.asarray(gamma, float).copy(),
        lam=np.asarray(lam, float).copy(),
        sigma=np.asarray(R, float).copy(),
        omega=float(omega),
        sigma_kappa=np.full(data.J, data.config.sigma_kappa),
    )
    _draw_latents(data, state, rng, sweeps=sweeps)
    return state
