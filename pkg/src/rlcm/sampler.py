"""Metropolis-within-Gibbs sampler in the parameter-expanded coordinates.

One sweep updates, in order: (kappa_j, Y*_j) for every item, (delta_hj,
beta_hj) for every effect, (alpha_nk, alpha*~_nk) for every attribute,
the free attribute thresholds gamma~_kl, (Sigma, lambda~), and omega.
Blocks are vectorised over the coordinates that are conditionally
independent (items within an effect row, respondents within an attribute).
The identified quantities (R, lambda, gamma) are recovered after every
sweep by rescaling with V = diag(Sigma).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit, gammaln, log_ndtr

from rlcm.distributions import (
    log_interval_prob,
    sample_categorical_log,
    sample_inverse_wishart,
    sample_matrix_normal,
    sample_truncated_exponential,
    sample_truncated_normal,
)
from rlcm.errors import DataError, InvariantViolation
from rlcm.model import (
    CONE_TOL,
    EffectTable,
    ModelConfig,
    build_effect_table,
    monotone_items,
    monotonicity_lower_bound,
    transform_to_original,
)

log = logging.getLogger(__name__)

BLOCKS = ("kappa_ystar", "delta_beta", "alpha", "gamma", "sigma_lambda", "omega")
TUNE_WINDOW = 100


@dataclass
class FitData:
    """Observed data plus quantities fixed for the whole chain."""

    config: ModelConfig
    table: EffectTable
    Y: np.ndarray  # N x J, int
    X: np.ndarray  # N x D
    M: np.ndarray  # J
    xtx_ridge: np.ndarray = field(init=False, repr=False)
    xtx_ridge_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=float)
        self.M = np.asarray(self.M, dtype=np.int64)
        n, j = self.Y.shape
        if self.X.shape[0] != n:
            raise DataError(f"Y has {n} rows but X has {self.X.shape[0]}")
        if self.M.shape != (j,):
            raise DataError("M must list one level count per item")
        if np.any(self.Y < 0) or np.any(self.Y >= self.M[None, :]):
            raise DataError("responses must lie in 0..M_j-1")
        if not np.allclose(self.X[:, 0], 1.0):
            raise DataError("the first covariate column must be the intercept")
        d = self.X.shape[1]
        self.xtx_ridge = self.X.T @ self.X + np.eye(d)
        self.xtx_ridge_inv = np.linalg.inv(self.xtx_ridge)
        self.xtx_ridge_inv = 0.5 * (self.xtx_ridge_inv + self.xtx_ridge_inv.T)

    @classmethod
    def build(cls, config: ModelConfig, Y, X) -> "FitData":
        table = build_effect_table(config.K, config.L, config.order)
        return cls(config, table, Y, X, np.asarray(config.M))

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def J(self) -> int:
        return self.Y.shape[1]

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def L(self) -> int:
        return self.config.L


@dataclass
class ChainState:
    """Current values; structural quantities are in expanded coordinates."""

    alpha: np.ndarray  # N x K int
    astar: np.ndarray  # N x K, alpha*~
    ystar: np.ndarray  # N x J
    beta: np.ndarray  # H x J
    delta: np.ndarray  # H x J int8
    kappa: np.ndarray  # J x (max M + 1), +inf padded
    gamma: np.ndarray  # K x (L + 1), gamma~
    lam: np.ndarray  # D x K, lambda~
    sigma: np.ndarray  # K x K
    omega: float
    sigma_kappa: np.ndarray  # J
    accepts: np.ndarray = None
    proposals: np.ndarray = None
    iteration: int = 0

    def __post_init__(self):
        j = self.beta.shape[1]
        if self.accepts is None:
            self.accepts = np.zeros(j, dtype=np.int64)
        if self.proposals is None:
            self.proposals = np.zeros(j, dtype=np.int64)

    def copy(self) -> "ChainState":
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = value.copy() if isinstance(value, np.ndarray) else value
        return ChainState(**out)

    def original(self):
        """(R, lambda, gamma, alpha*) in the identified coordinates."""
        return transform_to_original(self.sigma, self.lam, self.gamma, self.astar)


@dataclass
class ChainOutput:
    """Post-burnin draws in original coordinates plus chain diagnostics."""

    table: EffectTable
    M: np.ndarray
    beta: np.ndarray  # S x H x J
    delta: np.ndarray  # S x H x J
    kappa: np.ndarray  # S x J x (max M + 1)
    lam: np.ndarray  # S x D x K
    R: np.ndarray  # S x K x K
    gamma: np.ndarray  # S x K x (L + 1)
    omega: np.ndarray  # S
    alpha_tally: np.ndarray  # N x K x L
    acceptance: np.ndarray  # J, post-burnin kappa acceptance rate
    sigma_kappa: np.ndarray  # J, frozen proposal sd
    alpha_draws: np.ndarray | None = None  # S x N x K
    empty_top_iterations: int = 0
    violations: int = 0

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    def alpha_mode(self) -> np.ndarray:
        return np.argmax(self.alpha_tally, axis=2)

    def alpha_probs(self) -> np.ndarray:
        total = self.alpha_tally.sum(axis=2, keepdims=True)
        with np.errstate(invalid="ignore"):
            return self.alpha_tally / np.maximum(total, 1)


def fast_design(alpha: np.ndarray, table: EffectTable) -> np.ndarray:
    return np.all(alpha[:, None, :] >= table.effects[None, :, :], axis=2).astype(float)


def _bins(kappa: np.ndarray, y: np.ndarray):
    cols = np.arange(kappa.shape[0])[None, :]
    return kappa[cols, y], kappa[cols, y + 1]


# --- kappa and Y* ----------------------------------------------------------


def kappa_log_accept_ratio(kappa, proposal, y, mu, sd):
    """Log Metropolis ratio for a joint interior-threshold proposal of one item.

    ``kappa`` and ``proposal`` are full threshold vectors (length M + 1);
    ``y`` and ``mu`` hold each respondent's response and linear predictor.
    Combines the ratio of response likelihoods (Y* integrated out) with the
    ratio of truncated-normal proposal normalisers.
    """
    kappa = np.asarray(kappa, dtype=float)
    proposal = np.asarray(proposal, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    mu = np.asarray(mu, dtype=float)
    like = np.sum(
        log_interval_prob(proposal[y] - mu, proposal[y + 1] - mu)
        - log_interval_prob(kappa[y] - mu, kappa[y + 1] - mu)
    )
    top = kappa.size - 1
    corr = 0.0
    for m in range(2, top):
        fwd = log_interval_prob((proposal[m - 1] - kappa[m]) / sd, (kappa[m + 1] - kappa[m]) / sd)
        rev = log_interval_prob((kappa[m - 1] - proposal[m]) / sd, (proposal[m + 1] - proposal[m]) / sd)
        corr += fwd - rev
    return float(like + corr)


def step_kappa_ystar(data: FitData, state: ChainState, rng, design, record=True):
    """Joint (kappa_j, Y*_j) update for every item.

    Interior thresholds are proposed sequentially, each from a normal centred
    at its current value and truncated to (new lower neighbour, old upper
    neighbour), accepted with the marginal-likelihood Metropolis ratio; Y* is
    then refreshed from its truncated normal full conditional.
    Returns the boolean acceptance vector over items.
    """
    mu = design @ state.beta
    kappa = state.kappa
    M = data.M
    free = np.nonzero(M > 2)[0]
    accepted = np.ones(data.J, dtype=bool)
    if free.size:
        sd = state.sigma_kappa[free]
        kap = kappa[free]
        prop = kap.copy()
        log_ratio = np.zeros(free.size)
        m_free = M[free]
        for m in range(2, int(m_free.max())):
            act = m_free - 1 >= m
            i = np.nonzero(act)[0]
            cur = kap[i, m]
            lo = prop[i, m - 1]
            hi = kap[i, m + 1]
            new = sample_truncated_normal(cur, sd[i] ** 2, lo, hi, rng)
            prop[i, m] = new
            log_ratio[i] += log_interval_prob((lo - cur) / sd[i], (hi - cur) / sd[i])
        for m in range(2, int(m_free.max())):
            i = np.nonzero(m_free - 1 >= m)[0]
            new = prop[i, m]
            log_ratio[i] -= log_interval_prob(
                (kap[i, m - 1] - new) / sd[i], (prop[i, m + 1] - new) / sd[i]
            )
        y = data.Y[:, free]
        mu_f = mu[:, free]
        lo_new, hi_new = _bins(prop, y)
        lo_old, hi_old = _bins(kap, y)
        with np.errstate(invalid="ignore"):
            log_ratio += np.sum(
                log_interval_prob(lo_new - mu_f, hi_new - mu_f)
                - log_interval_prob(lo_old - mu_f, hi_old - mu_f),
                axis=0,
            )
        u = np.log(rng.random(free.size))
        ok = u < log_ratio  # NaN compares false: numerically degenerate -> reject
        kappa[free[ok]] = prop[ok]
        accepted[free] = ok
        if record:
            state.accepts[free] += ok
            state.proposals[free] += 1
    lo, hi = _bins(kappa, data.Y)
    state.ystar = sample_truncated_normal(mu, 1.0, lo, hi, rng)
    return accepted


# --- delta and beta ---------------------------------------------------------


def delta_inclusion_prob(c1, c2_sq, lower, omega, sigma_beta_sq):
    """P(delta_hj = 1 | rest) with beta_hj integrated out of the slab.

    ``lower`` is the monotonicity bound L_hj.  Computed in log space.
    """
    c1, c2_sq, lower = np.broadcast_arrays(
        np.asarray(c1, float), np.asarray(c2_sq, float), np.asarray(lower, float)
    )
    sb = np.sqrt(sigma_beta_sq)
    with np.errstate(divide="ignore"):
        log_in = (
            np.log(omega)
            - log_ndtr(-lower / sb)
            + 0.5 * np.log(c2_sq / sigma_beta_sq)
            + 0.5 * c1 * c1 / c2_sq
            + log_ndtr((c1 - lower) / np.sqrt(c2_sq))
        )
        log_out = np.log1p(-omega) if omega < 1 else -np.inf
    return expit(log_in - log_out)


def step_delta_beta(data: FitData, state: ChainState, rng, design):
    """Sweep (delta_h, beta_h) over effect rows, all items at once.

    delta_hj is drawn with beta_hj collapsed; beta_hj is then 0 or a normal
    left-truncated at the monotonicity bound.  When the bound is positive,
    beta_hj = 0 would leave the cone, so inclusion is forced.  The intercept
    is always included and untruncated.
    """
    cfg = data.config
    beta = state.beta
    dtd = design.T @ design
    dty = design.T @ state.ystar
    inv_prior = 1.0 / cfg.sigma_beta_sq
    for h in range(data.table.H):
        c2_sq = 1.0 / (dtd[h, h] + inv_prior)
        s = dty[h] - dtd[h] @ beta + dtd[h, h] * beta[h]
        c1 = c2_sq * s
        if h == 0:
            beta[0] = c1 + np.sqrt(c2_sq) * rng.standard_normal(data.J)
            state.delta[0] = 1
            continue
        lower = monotonicity_lower_bound(h, beta, data.table)
        p_in = delta_inclusion_prob(c1, c2_sq, lower, state.omega, cfg.sigma_beta_sq)
        p_in = np.where(lower > CONE_TOL, 1.0, p_in)
        include = rng.random(data.J) < p_in
        draw = np.zeros(data.J)
        if include.any():
            draw[include] = sample_truncated_normal(
                c1[include], c2_sq, lower[include], np.inf, rng
            )
        beta[h] = draw
        state.delta[h] = include


# --- latent states ---------------------------------------------------------


def conditional_moments(astar, X, lam, sigma, k):
    """Mean (N) and sd of alpha*~_nk given the other attributes."""
    mean = X @ lam
    prec = cho_solve(cho_factor(sigma), np.eye(sigma.shape[0]))
    var = 1.0 / prec[k, k]
    resid = astar - mean
    others = [i for i in range(sigma.shape[0]) if i != k]
    mu = mean[:, k] - var * (resid[:, others] @ prec[others, k])
    return mu, np.sqrt(var)


def alpha_log_weights(data: FitData, state: ChainState, k: int):
    """Unnormalised log p_l for alpha_nk = l, all n (N x L) with moments."""
    mu, sd = conditional_moments(state.astar, data.X, state.lam, state.sigma, k)
    L = data.L
    out = np.empty((data.N, L))
    trial = state.alpha.copy()
    g = state.gamma[k]
    for l in range(L):
        trial[:, k] = l
        if data.J:
            resid = state.ystar - fast_design(trial, data.table) @ state.beta
            ll = -0.5 * np.einsum("nj,nj->n", resid, resid)
        else:
            ll = 0.0
        with np.errstate(invalid="ignore"):
            out[:, l] = ll + log_interval_prob((g[l] - mu) / sd, (g[l + 1] - mu) / sd)
    return out, mu, sd


def step_alpha(data: FitData, state: ChainState, rng):
    """(alpha_nk, alpha*~_nk) for every attribute, vectorised over n."""
    for k in range(data.K):
        logw, mu, sd = alpha_log_weights(data, state, k)
        dead = ~np.isfinite(logw.max(axis=1))
        if dead.any():
            g = state.gamma[k]
            for l in range(data.L):
                logw[dead, l] = log_interval_prob((g[l] - mu[dead]) / sd, (g[l + 1] - mu[dead]) / sd)
        level = sample_categorical_log(logw, rng)
        state.alpha[:, k] = level
        g = state.gamma[k]
        state.astar[:, k] = sample_truncated_normal(mu, sd * sd, g[level], g[level + 1], rng)


# --- thresholds ------------------------------------------------------------


def gamma_bounds(state: ChainState, k: int, l: int, L: int):
    """Support (lower, upper) of the full conditional of gamma~_kl."""
    col = state.astar[:, k]
    lev = state.alpha[:, k]
    below = col[lev == l - 1]
    above = col[lev == l]
    g = state.gamma[k]
    lower = max(below.max(), g[l - 1]) if below.size else g[l - 1]
    ceiling = g[l + 1] if l <= L - 2 else np.inf
    upper = min(above.min(), ceiling) if above.size else ceiling
    return lower, upper


def step_gamma(data: FitData, state: ChainState, rng):
    """Free thresholds l = 2..L-1: uniform below the top, truncated
    exponential (rate a) for l = L-1, whose upper end may be +inf."""
    L = data.L
    for k in range(data.K):
        for l in range(2, L):
            lower, upper = gamma_bounds(state, k, l, L)
            if not lower < upper:
                raise InvariantViolation(
                    f"empty support ({lower}, {upper}) for gamma[{k},{l}]", block="gamma"
                )
            if l <= L - 2:
                value = lower + rng.random() * (upper - lower)
                value = min(max(value, np.nextafter(lower, np.inf)), np.nextafter(upper, -np.inf))
            else:
                value = sample_truncated_exponential(data.config.a, lower, upper, rng)
            state.gamma[k, l] = value


# --- Sigma, lambda~ and omega ---------------------------------------------


def sigma_lambda_moments(X, astar, xtx_ridge_inv):
    """Ridge estimate L2 and scatter S of the collapsed (Sigma, lambda~) step."""
    l2 = xtx_ridge_inv @ (X.T @ astar)
    resid = astar - X @ l2
    S = resid.T @ resid + l2.T @ l2
    return l2, 0.5 * (S + S.T)


def step_sigma_lambda(data: FitData, state: ChainState, rng):
    """Sigma ~ IW(I + S, K + 1 + N), then lambda~ ~ MN(L2, (X'X + I)^-1 kron Sigma)."""
    K = data.K
    l2, S = sigma_lambda_moments(data.X, state.astar, data.xtx_ridge_inv)
    state.sigma = sample_inverse_wishart(np.eye(K) + S, K + 1 + data.N, rng)
    state.lam = sample_matrix_normal(l2, data.xtx_ridge_inv, state.sigma, rng)


def omega_posterior(delta, config: ModelConfig):
    """Beta parameters of the omega full conditional."""
    counted = delta if config.omega_counts_intercept else delta[1:]
    total = counted.size
    on = float(counted.sum())
    return on + config.omega0, total - on + config.omega1


def step_omega(data: FitData, state: ChainState, rng):
    a, b = omega_posterior(state.delta, data.config)
    state.omega = float(rng.beta(a, b))


# --- invariants and density -------------------------------------------------


def state_violations(data: FitData, state: ChainState) -> list[str]:
    """Names of support invariants the state currently breaks."""
    out = []
    lo, hi = _bins(state.kappa, data.Y)
    if not np.all((state.ystar > lo) & (state.ystar <= hi)):
        out.append("ystar outside kappa bin")
    g = state.gamma
    cols = np.arange(data.K)[None, :]
    glo, ghi = g[cols, state.alpha], g[cols, state.alpha + 1]
    if not np.all((state.astar > glo) & (state.astar <= ghi)):
        out.append("alpha* outside gamma bin")
    if not np.all(monotone_items(state.beta, data.table)):
        out.append("beta outside monotonicity cone")
    if np.any((state.delta == 0) & (state.beta != 0)):
        out.append("beta nonzero where delta = 0")
    for j, m in enumerate(data.M):
        k = state.kappa[j, : m + 1]
        if not (k[0] == -np.inf and k[1] == 0 and k[-1] == np.inf and np.all(np.diff(k) > 0)):
            out.append(f"kappa[{j}] not strictly ordered")
            break
    if not (np.all(g[:, 0] == -np.inf) and np.all(g[:, 1] == 0) and np.all(g[:, -1] == np.inf)
            and np.all(np.diff(g, axis=1) > 0)):
        out.append("gamma not strictly ordered")
    try:
        np.linalg.cholesky(state.sigma)
    except np.linalg.LinAlgError:
        out.append("Sigma not positive definite")
    if not np.allclose(state.sigma, state.sigma.T, atol=1e-12):
        out.append("Sigma not symmetric")
    if not 0 < state.omega < 1:
        out.append("omega outside (0, 1)")
    return out


def log_joint(data: FitData, state: ChainState) -> float:
    """Log density of the expanded model at the current state, up to a constant.

    Returns -inf outside the support.
    """
    if state_violations(data, state):
        return -np.inf
    cfg = data.config
    K, N = data.K, data.N
    design = fast_design(state.alpha, data.table)
    resid = state.ystar - design @ state.beta
    total = -0.5 * np.sum(resid * resid)
    # The cone normaliser of the slab depends on delta only; it is omitted.
    on = state.delta[1:] == 1
    b = state.beta[1:][on]
    total += -0.5 * np.sum(b * b) / cfg.sigma_beta_sq - 0.5 * b.size * np.log(2 * np.pi * cfg.sigma_beta_sq)
    b0 = state.beta[0]
    total += -0.5 * np.sum(b0 * b0) / cfg.sigma_beta_sq - 0.5 * b0.size * np.log(2 * np.pi * cfg.sigma_beta_sq)
    a_om, b_om = omega_posterior(state.delta, cfg)
    total += (a_om - 1) * np.log(state.omega) + (b_om - 1) * np.log1p(-state.omega)
    total += gammaln(cfg.omega0 + cfg.omega1) - gammaln(cfg.omega0) - gammaln(cfg.omega1)
    g = state.gamma
    for l in range(2, data.L):
        total += np.sum(np.log(cfg.a) - cfg.a * (g[:, l] - g[:, l - 1]))
    sign, logdet = np.linalg.slogdet(state.sigma)
    prec = np.linalg.inv(state.sigma)
    total += -0.5 * (cfg.v0 + K + 1) * logdet - 0.5 * np.trace(prec)
    r = state.astar - data.X @ state.lam
    total += -0.5 * N * logdet - 0.5 * np.sum((r @ prec) * r)
    total += -0.5 * data.X.shape[1] * logdet - 0.5 * np.sum((state.lam @ prec) * state.lam)
    return float(total)


# --- driver ------------------------------------------------------------------


def _tune(state: ChainState, window_acc, window_prop, free):
    rate = np.where(window_prop > 0, window_acc / np.maximum(window_prop, 1), 0.4)
    up = free & (rate > 0.5)
    down = free & (rate < 0.3)
    state.sigma_kappa[up] *= 1.1
    state.sigma_kappa[down] *= 0.9


def run_chain(
    data: FitData,
    state: ChainState,
    rng: np.random.Generator,
    check: str = "sweep",
    progress=None,
) -> ChainOutput:
    """Run ``chain_length`` sweeps and record draws after ``burnin``.

    ``check`` is "none", "sweep" (support invariants after every sweep) or
    "block" (after every block).  A violation raises InvariantViolation with
    the block name and iteration index.  ``state`` is updated in place.
    """
    if check not in ("none", "sweep", "block"):
        raise ValueError(f"unknown check mode {check!r}")
    cfg = data.config
    table = data.table
    S = cfg.n_draws
    H, J, K, L, D = table.H, data.J, data.K, data.L, data.X.shape[1]
    width = state.kappa.shape[1]
    out_beta = np.empty((S, H, J))
    out_delta = np.empty((S, H, J), dtype=np.int8)
    out_kappa = np.empty((S, J, width))
    out_lam = np.empty((S, D, K))
    out_R = np.empty((S, K, K))
    out_gamma = np.empty((S, K, L + 1))
    out_omega = np.empty(S)
    tally = np.zeros((data.N, K, L), dtype=np.int64)
    alpha_draws = np.empty((S, data.N, K), dtype=np.int8) if cfg.record_alpha_draws else None
    free = data.M > 2
    win_acc = np.zeros(J)
    win_prop = np.zeros(J)
    empty_top = 0
    rows = np.arange(data.N)[:, None]
    cols = np.arange(K)[None, :]

    def verify(block, it):
        bad = state_violations(data, state)
        if bad:
            raise InvariantViolation("; ".join(bad), block=block, iteration=it)

    for it in range(cfg.chain_length):
        post = it >= cfg.burnin
        state.iteration = it
        design = fast_design(state.alpha, table)
        before = state.accepts.copy(), state.proposals.copy()
        try:
            step_kappa_ystar(data, state, rng, design)
            if check == "block":
                verify("kappa_ystar", it)
            step_delta_beta(data, state, rng, design)
            if check == "block":
                verify("delta_beta", it)
            step_alpha(data, state, rng)
            if check == "block":
                verify("alpha", it)
            if np.any(np.all(state.alpha != L - 1, axis=0)):
                empty_top += 1
            step_gamma(data, state, rng)
            if check == "block":
                verify("gamma", it)
            step_sigma_lambda(data, state, rng)
            if check == "block":
                verify("sigma_lambda", it)
            step_omega(data, state, rng)
            if check != "none":
                verify("omega" if check == "block" else "sweep", it)
        except InvariantViolation as exc:
            if exc.iteration < 0:
                raise InvariantViolation(str(exc), block=exc.block, iteration=it) from exc
            raise
        win_acc += state.accepts - before[0]
        win_prop += state.proposals - before[1]
        if not post:
            # burn-in acceptance is not part of the reported rate
            state.accepts[:] = before[0]
            state.proposals[:] = before[1]
            if cfg.tune_sigma_kappa and (it + 1) % TUNE_WINDOW == 0:
                _tune(state, win_acc, win_prop, free)
                win_acc[:] = 0
                win_prop[:] = 0
        if post:
            s = it - cfg.burnin
            R, lam, gam, _ = transform_to_original(state.sigma, state.lam, state.gamma)
            out_beta[s] = state.beta
            out_delta[s] = state.delta
            out_kappa[s] = state.kappa
            out_lam[s] = lam
            out_R[s] = R
            out_gamma[s] = gam
            out_omega[s] = state.omega
            np.add.at(tally, (rows, cols, state.alpha), 1)
            if alpha_draws is not None:
                alpha_draws[s] = state.alpha
        if progress is not None:
            progress(it)

    acceptance = np.where(state.proposals > 0, state.accepts / np.maximum(state.proposals, 1), 1.0)
    return ChainOutput(
        table=table,
        M=data.M.copy(),
        beta=out_beta,
        delta=out_delta,
        kappa=out_kappa,
        lam=out_lam,
        R=out_R,
        gamma=out_gamma,
        omega=out_omega,
        alpha_tally=tally,
        acceptance=acceptance,
        sigma_kappa=state.sigma_kappa.copy(),
        alpha_draws=alpha_draws,
        empty_top_iterations=empty_top,
    )
