"""Model configuration, cumulative design coding and response probabilities.

Latent states are K-tuples with entries in {0, ..., L-1}.  Effects are
K-tuples of the same form; effect ``e`` is active for state ``a`` when
``a >= e`` coordinatewise, which is the cumulative coding truncated to
effects involving at most ``order`` attributes.  Effects and latent classes
are both stored in Kronecker order (last attribute varies fastest).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from rlcm.errors import ConfigError, DomainError

# Tolerance for monotonicity checks on floating-point coefficients.
CONE_TOL = 1e-12


@dataclass
class ModelConfig:
    """Dimensions, hyperparameters and chain settings for one fit."""

    N: int
    J: int
    M: Sequence[int]
    K: int
    L: int
    D: int = 3
    order: int = 2
    sigma_beta_sq: float = 2.0
    omega0: float = 0.5
    omega1: float = 0.5
    a: float = 1e-3
    sigma_kappa: float = 0.1
    chain_length: int = 16000
    burnin: int = 6000
    seed: int = 0
    omega_counts_intercept: bool = False
    clip_intercept: bool = False
    tune_sigma_kappa: bool = True
    record_alpha_draws: bool = False

    def __post_init__(self):
        self.M = tuple(int(m) for m in self.M)
        if len(self.M) != self.J:
            raise ConfigError(f"M has {len(self.M)} entries, expected J = {self.J}")
        if any(m < 2 for m in self.M):
            raise ConfigError("every item needs M_j >= 2 response levels")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.L < 2:
            raise ConfigError("L must be >= 2")
        if not 1 <= self.order <= self.K:
            raise ConfigError(f"order must lie in [1, K={self.K}], got {self.order}")
        if self.N < 1 or self.D < 1:
            raise ConfigError("N and D must be positive")
        for name in ("sigma_beta_sq", "omega0", "omega1", "a", "sigma_kappa"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.burnin < 0 or self.chain_length < self.burnin:
            raise ConfigError("need 0 <= burnin <= chain_length")

    @property
    def v0(self) -> int:
        # Fixed: the collapsed (Sigma, lambda) update assumes v0 = K + 1.
        return self.K + 1

    @property
    def n_draws(self) -> int:
        return self.chain_length - self.burnin


def effect_count(K: int, L: int, order: int) -> int:
    return sum(comb(K, r) * (L - 1) ** r for r in range(order + 1))


def format_label(levels: Sequence[int]) -> str:
    return "[" + " ".join(str(int(v)) for v in levels) + "]"


@dataclass(frozen=True, eq=False)
class EffectTable:
    """Effects of the truncated cumulative coding for given (K, L, order)."""

    K: int
    L: int
    order: int
    effects: np.ndarray = field(repr=False)  # H x K

    @property
    def H(self) -> int:
        return self.effects.shape[0]

    @property
    def labels(self) -> list[str]:
        return [format_label(e) for e in self.effects]

    @cached_property
    def classes(self) -> np.ndarray:
        """All latent states (|A_L| x K) in Kronecker order."""
        return all_states(self.K, self.L)

    @cached_property
    def class_design(self) -> np.ndarray:
        return design_matrix(self.classes, self)

    @cached_property
    def effect_order(self) -> np.ndarray:
        return (self.effects > 0).sum(axis=1)

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(v) for v in e): h for h, e in enumerate(self.effects)}

    @cached_property
    def ordered_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Class indices (u, v) with u >= v coordinatewise and u != v."""
        s = self.classes
        ge = np.all(s[:, None, :] >= s[None, :, :], axis=2)
        np.fill_diagonal(ge, False)
        return np.nonzero(ge)

    @cached_property
    def pair_differences(self) -> list[np.ndarray]:
        """Per effect h, the rows d_u - d_v over ordered pairs u >= v with
        d_hu = 1 and d_hv = 0, intercept and column h zeroed."""
        return _pair_differences(self)


def all_states(K: int, L: int) -> np.ndarray:
    return np.array(list(itertools.product(range(L), repeat=K)), dtype=np.int64).reshape(-1, K)


def build_effect_table(K: int, L: int, order: int) -> EffectTable:
    if K < 1 or L < 2:
        raise ConfigError("need K >= 1 and L >= 2")
    if not 1 <= order <= K:
        raise ConfigError(f"order must lie in [1, K={K}], got {order}")
    states = all_states(K, L)
    keep = (states > 0).sum(axis=1) <= order
    effects = states[keep]
    effects.setflags(write=False)
    return EffectTable(K, L, order, effects)


def design_matrix(alpha, table: EffectTable) -> np.ndarray:
    """Design rows (n x H) for latent states alpha (n x K)."""
    alpha = np.atleast_2d(np.asarray(alpha))
    if alpha.shape[1] != table.K:
        raise DomainError(f"latent states need K = {table.K} columns")
    if np.any(alpha < 0) or np.any(alpha >= table.L):
        raise DomainError(f"latent levels must lie in 0..{table.L - 1}")
    return np.all(alpha[:, None, :] >= table.effects[None, :, :], axis=2).astype(float)


def design_vector(alpha_n, table: EffectTable) -> np.ndarray:
    return design_matrix(np.asarray(alpha_n).reshape(1, -1), table)[0]


def _pair_differences(table: EffectTable) -> list[np.ndarray]:
    d = table.class_design
    u_idx, v_idx = table.ordered_pairs
    diffs = d[u_idx] - d[v_idx]
    out = []
    for h in range(table.H):
        rows = (d[u_idx, h] == 1) & (d[v_idx, h] == 0)
        delta = diffs[rows].copy()
        delta[:, 0] = 0.0
        delta[:, h] = 0.0
        # Duplicate rows give the same bound; drop them to keep the max cheap.
        out.append(np.unique(delta, axis=0) if delta.size else np.zeros((0, table.H)))
    return out


def monotonicity_lower_bound(h: int, beta_j, table: EffectTable):
    """Smallest value of beta_hj keeping beta_j in the monotonicity cone.

    ``beta_j`` may be a vector (H,) or a matrix (H x J) of item columns; the
    entry in row h is ignored.  Returns -inf for the intercept.
    """
    beta_j = np.asarray(beta_j, dtype=float)
    if h == 0:
        return -np.inf if beta_j.ndim == 1 else np.full(beta_j.shape[1], -np.inf)
    delta = table.pair_differences[h]
    if delta.shape[0] == 0:
        return -np.inf if beta_j.ndim == 1 else np.full(beta_j.shape[1], -np.inf)
    values = -(delta @ beta_j)
    return values.max(axis=0) if beta_j.ndim > 1 else float(values.max())


def check_monotone(beta_j, table: EffectTable, tol: float = CONE_TOL) -> bool:
    """True iff d_u beta_j >= d_v beta_j - tol for every ordered pair u >= v."""
    beta_j = np.asarray(beta_j, dtype=float)
    return bool(monotone_items(beta_j.reshape(table.H, -1), table, tol).all())


def monotone_items(beta, table: EffectTable, tol: float = CONE_TOL) -> np.ndarray:
    """Boolean per item column of beta (H x J): is the column in the cone."""
    eta = table.class_design @ np.asarray(beta, dtype=float)  # C x J
    u, v = table.ordered_pairs
    return np.all(eta[u] - eta[v] >= -tol, axis=0)


def full_kappa(interior, M: int) -> np.ndarray:
    """Threshold vector (-inf, 0, interior..., +inf) of length M + 1."""
    interior = np.asarray(interior, dtype=float).ravel()
    if interior.size != M - 2:
        raise DomainError(f"item with {M} levels needs {M - 2} interior thresholds")
    return np.concatenate(([-np.inf, 0.0], interior, [np.inf]))


def item_response_prob(alpha_n, beta_j, kappa_j, m: int, table: EffectTable) -> float:
    """P(Y = m | alpha_n) under the cumulative probit."""
    kappa_j = np.asarray(kappa_j, dtype=float)
    if not 0 <= m <= kappa_j.size - 2:
        raise DomainError("response level out of range")
    mu = float(design_vector(alpha_n, table) @ np.asarray(beta_j, dtype=float))
    return float(_bin_prob(kappa_j[m + 1] - mu, kappa_j[m] - mu))


def _bin_prob(upper, lower):
    # Phi(upper) - Phi(lower) computed on whichever side avoids cancellation.
    upper, lower = np.broadcast_arrays(np.asarray(upper, float), np.asarray(lower, float))
    flip = (upper + lower) > 0
    return np.where(flip, ndtr(-lower) - ndtr(-upper), ndtr(upper) - ndtr(lower))


def eta_table(beta, kappa, table: EffectTable) -> np.ndarray:
    """Class-conditional response probabilities, shape (|A_L|, J, max M).

    ``kappa`` is a J x (max M + 1) array padded with +inf beyond each item's
    top threshold; probabilities of levels an item does not have are 0.
    """
    beta = np.asarray(beta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    mu = table.class_design @ beta  # C x J
    upper = kappa[None, :, 1:] - mu[:, :, None]
    lower = kappa[None, :, :-1] - mu[:, :, None]
    with np.errstate(invalid="ignore"):
        p = _bin_prob(upper, lower)
    return np.where(np.isposinf(lower), 0.0, p)


def eta_tables(beta_draws, kappa_draws, table: EffectTable) -> np.ndarray:
    """eta_table evaluated per draw: (S, |A_L|, J, max M)."""
    mu = np.einsum("ch,shj->scj", table.class_design, beta_draws)
    upper = kappa_draws[:, None, :, 1:] - mu[..., None]
    lower = kappa_draws[:, None, :, :-1] - mu[..., None]
    with np.errstate(invalid="ignore"):
        p = _bin_prob(upper, lower)
    return np.where(np.isposinf(lower), 0.0, p)


def pad_kappa(kappas: Sequence[np.ndarray]) -> np.ndarray:
    """Stack per-item full threshold vectors into a +inf padded matrix."""
    width = max(len(k) for k in kappas)
    out = np.full((len(kappas), width), np.inf)
    for j, k in enumerate(kappas):
        out[j, : len(k)] = k
    return out


def transform_to_original(sigma, lambda_t, gamma_t, astar_t=None):
    """Map expanded (Sigma, lambda~, gamma~, alpha*~) to (R, lambda, gamma, alpha*).

    With V = diag(Sigma): R = V^-1/2 Sigma V^-1/2, and lambda, gamma and
    alpha* each have column k divided by sqrt(V_kk).  ``gamma_t`` is K x (L+1).
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Sigma is not positive definite") from exc
    scale = 1.0 / np.sqrt(np.diag(sigma))
    R = sigma * scale[:, None] * scale[None, :]
    R = 0.5 * (R + R.T)  # exact symmetry, so the stored upper triangle is lossless
    np.fill_diagonal(R, 1.0)
    lam = np.asarray(lambda_t, dtype=float) * scale[None, :]
    gam = np.asarray(gamma_t, dtype=float) * scale[:, None]
    astar = None if astar_t is None else np.asarray(astar_t, dtype=float) * scale[None, :]
    return R, lam, gam, astar


def transform_to_expanded(R, V, lam, gamma, astar=None):
    """Inverse of :func:`transform_to_original` for a diagonal V (vector)."""
    root = np.sqrt(np.asarray(V, dtype=float))
    sigma = np.asarray(R, dtype=float) * root[:, None] * root[None, :]
    lam_t = np.asarray(lam, dtype=float) * root[None, :]
    gam_t = np.asarray(gamma, dtype=float) * root[:, None]
    astar_t = None if astar is None else np.asarray(astar, dtype=float) * root[None, :]
    return sigma, lam_t, gam_t, astar_t


def measurement_param_count(J: int, H: int, M: Sequence[int]) -> int:
    """J*H coefficients plus the free item thresholds."""
    return J * H + sum(int(m) - 2 for m in M)


def structural_param_count(K: int, L: int, D: int) -> int:
    """Slopes, free attribute thresholds and correlations."""
    return D * K + (L - 2) * K + K * (K - 1) // 2
