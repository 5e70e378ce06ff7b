"""Synthetic covariates, data-generating parameters, latent states and responses."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from rlcm.distributions import RngStream, sample_truncated_normal
from rlcm.errors import ScenarioError
from rlcm.model import EffectTable, build_effect_table, design_matrix, eta_table, pad_kappa

SIZES = (500, 1500, 3000)
SHAPES = ((15, 2, 2), (15, 2, 3), (25, 3, 2), (25, 3, 3), (45, 4, 2))
RHOS = (0.0, 0.25, 0.5)

AGE_RANGES = ((18, 35), (35, 55), (55, 76))
AGE_PROBS = (0.4, 0.4, 0.2)
SEX_PROB = 0.6

MIN_SPREAD = 0.3
PILOT_SIZE = 1000
MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class Scenario:
    N: int
    J: int
    K: int
    L: int
    rho: float = 0.0
    replications: int = 1
    seed: int = 0
    M: tuple[int, ...] | None = None  # response levels per item; 3 each if None
    order: int = 2
    interaction_prob: float = 0.3

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(self.M) if self.M is not None else (3,) * self.J

    def truth_stream(self) -> RngStream:
        # Independent of N, so scenarios differing only in N share a truth.
        return RngStream(self.seed, (1, self.J, self.K, self.L, int(round(self.rho * 1000))))

    def data_stream(self, replication: int) -> RngStream:
        return RngStream(self.seed, (2, self.N, self.J, self.K, self.L,
                                     int(round(self.rho * 1000)), replication))


def scenario_grid(replications: int = 1, seed: int = 0) -> list[Scenario]:
    """The 45 (N, J, K, L, rho) combinations of the simulation study."""
    return [
        Scenario(n, j, k, l, rho, replications, seed)
        for n, (j, k, l), rho in itertools.product(SIZES, SHAPES, RHOS)
    ]


@dataclass(eq=False)
class TruthSet:
    table: EffectTable
    M: np.ndarray
    beta: np.ndarray  # H x J
    delta: np.ndarray  # H x J
    kappa: np.ndarray  # J x (max M + 1)
    lam: np.ndarray  # D x K
    gamma: np.ndarray  # K x (L + 1)
    R: np.ndarray  # K x K
    attempts: int = 1

    @cached_property
    def eta(self) -> np.ndarray:
        return eta_table(self.beta, self.kappa, self.table)


@dataclass(eq=False)
class Dataset:
    Y: np.ndarray
    X: np.ndarray
    alpha: np.ndarray
    truth: TruthSet
    scenario: Scenario | None = field(default=None)


def gen_covariates(N: int, rng, age_ranges=AGE_RANGES, age_probs=AGE_PROBS, sex_prob=SEX_PROB):
    """Intercept, standardised integer age and a Bernoulli sex indicator."""
    bounds = np.asarray(age_ranges, dtype=float)
    cat = rng.choice(len(bounds), size=N, p=np.asarray(age_probs, float))
    lo, hi = bounds[cat, 0], bounds[cat, 1]
    mid = 0.5 * (lo + hi)
    sd = (hi - lo) / 4.0
    age = np.floor(sample_truncated_normal(mid, sd * sd, lo, np.nextafter(hi, -np.inf), rng))
    age = np.atleast_1d(age)
    spread = age.std()
    age = (age - age.mean()) / (spread if spread > 0 else 1.0)
    sex = (rng.random(N) < sex_prob).astype(float)
    return np.column_stack((np.ones(N), age, sex))


def _correlation(K: int, rho: float) -> np.ndarray:
    R = np.full((K, K), float(rho))
    np.fill_diagonal(R, 1.0)
    return R


def _draw_params(scenario: Scenario, table: EffectTable, rng, D: int):
    J, K, L = scenario.J, scenario.K, scenario.L
    H = table.H
    order = table.effect_order
    delta = np.zeros((H, J), dtype=np.int8)
    delta[order <= 1] = 1
    inter = order >= 2
    delta[inter] = rng.random((int(inter.sum()), J)) < scenario.interaction_prob
    beta = np.zeros((H, J))
    beta[0] = rng.uniform(-1.0, 0.0, J)
    main = order == 1
    beta[main] = rng.uniform(0.5, 1.5, (int(main.sum()), J))
    beta[inter] = rng.uniform(0.25, 0.75, (int(inter.sum()), J))
    beta *= delta
    kappa = pad_kappa(
        [np.concatenate(([-np.inf], np.arange(m - 1, dtype=float), [np.inf])) for m in scenario.levels]
    )
    gamma = np.tile(np.concatenate(([-np.inf], np.arange(L - 1, dtype=float), [np.inf])), (K, 1))
    lam = rng.uniform(-0.5, 0.5, (D, K))
    lam[0] = rng.uniform(0.0, 0.7, K)
    return beta, delta, kappa, lam, gamma


def gen_params(scenario: Scenario, rng, D: int = 3, max_attempts: int = MAX_ATTEMPTS) -> TruthSet:
    """Draw a TruthSet meeting the spread and class-coverage requirements.

    Every item must move P(Y_j > 0) by at least ``MIN_SPREAD`` across
    classes, and a pilot sample of ``PILOT_SIZE`` respondents must populate
    every latent class.  Raises ScenarioError after ``max_attempts``.
    """
    table = build_effect_table(scenario.K, scenario.L, scenario.order)
    R = _correlation(scenario.K, scenario.rho)
    M = np.asarray(scenario.levels, dtype=np.int64)
    failures = {"spread": 0, "coverage": 0}
    for attempt in range(1, max_attempts + 1):
        beta, delta, kappa, lam, gamma = _draw_params(scenario, table, rng, D)
        p_pos = ndtr(table.class_design @ beta)  # C x J
        if np.any(p_pos.max(axis=0) - p_pos.min(axis=0) < MIN_SPREAD):
            failures["spread"] += 1
            continue
        truth = TruthSet(table, M, beta, delta, kappa, lam, gamma, R, attempts=attempt)
        X = gen_covariates(PILOT_SIZE, rng)
        alpha = gen_alpha(X, truth, rng)
        flat = np.ravel_multi_index(alpha.T, (scenario.L,) * scenario.K)
        if np.unique(flat).size < table.classes.shape[0]:
            failures["coverage"] += 1
            continue
        return truth
    worst = max(failures, key=failures.get)
    raise ScenarioError(
        f"no admissible parameters in {max_attempts} attempts for {scenario}; "
        f"rejections: {failures} (mostly {worst})"
    )


def gen_alpha(X, truth: TruthSet, rng) -> np.ndarray:
    """alpha*_n ~ N(x_n lambda, R), binned by gamma per attribute."""
    X = np.asarray(X, dtype=float)
    K = truth.R.shape[0]
    chol = np.linalg.cholesky(truth.R)
    astar = X @ truth.lam + rng.standard_normal((X.shape[0], K)) @ chol.T
    cuts = truth.gamma[:, 1:-1]  # K x (L - 1)
    return np.sum(astar[:, :, None] > cuts[None, :, :], axis=2).astype(np.int64)


def gen_responses(alpha, truth: TruthSet, rng) -> np.ndarray:
    """Y*_nj ~ N(d_n beta_j, 1), binned by kappa_j."""
    D = design_matrix(alpha, truth.table)
    ystar = D @ truth.beta + rng.standard_normal((D.shape[0], truth.beta.shape[1]))
    cuts = truth.kappa[:, 1:-1]  # J x (max M - 1); +inf beyond each item's levels
    return np.sum(ystar[:, :, None] > cuts[None, :, :], axis=2).astype(np.int64)


def simulate_dataset(scenario: Scenario, replication: int = 0, truth: TruthSet | None = None) -> Dataset:
    """One replication: truth from the scenario stream, data from its own stream."""
    if truth is None:
        truth = gen_params(scenario, scenario.truth_stream().generator())
    rng = scenario.data_stream(replication).generator()
    X = gen_covariates(scenario.N, rng)
    alpha = gen_alpha(X, truth, rng)
    Y = gen_responses(alpha, truth, rng)
    return Dataset(Y, X, alpha, truth, scenario)
