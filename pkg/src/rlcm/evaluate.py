"""Posterior summaries, Geweke diagnostics and parameter-recovery metrics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from rlcm.errors import DomainError
from rlcm.model import EffectTable, eta_tables
from rlcm.sampler import ChainOutput

CI_LEVEL = 0.95
ETA_CHUNK = 500


# --- Geweke -------------------------------------------------------------------


def batch_means_variance(x) -> float:
    """Spectral density at zero (long-run variance) by non-overlapping batch means.

    Uses floor(sqrt(n)) batches of equal size; a trailing remainder is dropped.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    b = int(np.floor(np.sqrt(n)))
    if b < 2:
        raise DomainError("batch means needs at least 4 draws")
    m = n // b
    means = x[: b * m].reshape(b, m).mean(axis=1)
    return float(m * means.var(ddof=1))


def geweke_z(draws, first_frac: float = 0.1, last_frac: float = 0.5) -> float:
    """Geweke z comparing the first and last segments of a chain.

    Returns NaN for a chain whose segments are both constant; use
    :func:`geweke_table` to get that flagged explicitly.
    """
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 100:
        raise DomainError(f"geweke_z needs at least 100 draws, got {x.size}")
    if not (0 < first_frac < 1 and 0 < last_frac < 1 and first_frac + last_frac <= 1):
        raise DomainError("segment fractions must be in (0, 1) and sum to at most 1")
    na = int(np.floor(first_frac * x.size))
    nb = int(np.floor(last_frac * x.size))
    a, b = x[:na], x[x.size - nb:]
    sa, sb = batch_means_variance(a), batch_means_variance(b)
    denom = sa / na + sb / nb
    if not denom > 0:
        return float("nan")
    return float((a.mean() - b.mean()) / np.sqrt(denom))


@dataclass
class GewekeRow:
    name: str
    z: float
    degenerate: bool

    @property
    def flagged(self) -> bool:
        return (not self.degenerate) and abs(self.z) > 1.96


def geweke_table(named_draws: dict[str, np.ndarray], **kw) -> list[GewekeRow]:
    rows = []
    for name, x in named_draws.items():
        z = geweke_z(x, **kw)
        rows.append(GewekeRow(name, z, bool(np.isnan(z))))
    return rows


def chain_columns(chain: ChainOutput) -> dict[str, np.ndarray]:
    """Every scalar trace of a chain keyed by a self-describing name."""
    table = chain.table
    out = {}
    H, J = chain.beta.shape[1:]
    for j in range(J):
        for h in range(H):
            out[f"beta[{j}]{table.labels[h]}"] = chain.beta[:, h, j]
    for j, m in enumerate(chain.M):
        for l in range(2, m):
            out[f"kappa[{j},{l}]"] = chain.kappa[:, j, l]
    D, K = chain.lam.shape[1:]
    for d in range(D):
        for k in range(K):
            out[f"lambda[{d},{k}]"] = chain.lam[:, d, k]
    for a, b in zip(*np.triu_indices(K, 1)):
        out[f"R[{a},{b}]"] = chain.R[:, a, b]
    for k in range(K):
        for l in range(2, chain.gamma.shape[2] - 1):
            out[f"gamma[{k},{l}]"] = chain.gamma[:, k, l]
    out["omega"] = chain.omega
    return out


# --- summaries ------------------------------------------------------------------


def _interval(x, level=CI_LEVEL):
    tail = 0.5 * (1 - level)
    return np.quantile(x, tail, axis=0), np.quantile(x, 1 - tail, axis=0)


def posterior_mean_eta(chain: ChainOutput) -> np.ndarray:
    """Posterior mean of the class-conditional response table."""
    total = None
    for start in range(0, chain.n_draws, ETA_CHUNK):
        sl = slice(start, start + ETA_CHUNK)
        part = eta_tables(chain.beta[sl], chain.kappa[sl], chain.table).sum(axis=0)
        total = part if total is None else total + part
    return total / chain.n_draws


@dataclass(eq=False)
class PosteriorSummary:
    table: EffectTable
    M: np.ndarray
    beta: np.ndarray
    beta_lo: np.ndarray
    beta_hi: np.ndarray
    delta: np.ndarray  # posterior mode
    delta_mean: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    R: np.ndarray
    R_lo: np.ndarray
    R_hi: np.ndarray
    gamma: np.ndarray
    omega: float
    eta: np.ndarray
    alpha: np.ndarray  # posterior mode per (n, k)
    alpha_probs: np.ndarray

    @property
    def beta_active(self) -> np.ndarray:
        """True where 0 lies outside the equal-tailed interval."""
        return (self.beta_lo > 0) | (self.beta_hi < 0)

    def sparsity(self) -> float:
        """Share of non-intercept beta entries whose interval covers 0."""
        return float(np.mean(~self.beta_active[1:]))


def summarize(chain: ChainOutput) -> PosteriorSummary:
    if chain.n_draws == 0:
        raise DomainError("cannot summarise a chain with no recorded draws")
    b_lo, b_hi = _interval(chain.beta)
    l_lo, l_hi = _interval(chain.lam)
    r_lo, r_hi = _interval(chain.R)
    with np.errstate(invalid="ignore"):
        kappa = chain.kappa.mean(axis=0)
        gamma = chain.gamma.mean(axis=0)
    delta_mean = chain.delta.mean(axis=0)
    return PosteriorSummary(
        table=chain.table,
        M=chain.M,
        beta=chain.beta.mean(axis=0),
        beta_lo=b_lo,
        beta_hi=b_hi,
        delta=(delta_mean > 0.5).astype(np.int8),
        delta_mean=delta_mean,
        kappa=kappa,
        lam=chain.lam.mean(axis=0),
        lam_lo=l_lo,
        lam_hi=l_hi,
        R=chain.R.mean(axis=0),
        R_lo=r_lo,
        R_hi=r_hi,
        gamma=gamma,
        omega=float(chain.omega.mean()),
        eta=posterior_mean_eta(chain),
        alpha=chain.alpha_mode(),
        alpha_probs=chain.alpha_probs(),
    )


# --- alignment ------------------------------------------------------------------


def align_attributes(alpha_est, alpha_true) -> tuple[int, ...]:
    """Permutation ``p`` with estimated column p[k] playing true attribute k.

    Chosen to maximise total agreement of the level assignments; ties go to
    the lexicographically first permutation.
    """
    alpha_est = np.asarray(alpha_est)
    alpha_true = np.asarray(alpha_true)
    K = alpha_true.shape[1]
    agree = np.array([[np.sum(alpha_est[:, e] == alpha_true[:, t]) for e in range(K)] for t in range(K)])
    best, best_score = None, -1
    for perm in itertools.permutations(range(K)):
        score = sum(agree[t, perm[t]] for t in range(K))
        if score > best_score:
            best, best_score = perm, score
    return tuple(int(p) for p in best)


def _tuple_map(tuples: np.ndarray, index: dict, perm) -> np.ndarray:
    # Row i of the aligned array comes from row out[i] of the estimate.
    out = np.empty(len(tuples), dtype=np.int64)
    for i, t in enumerate(tuples):
        src = [0] * len(perm)
        for k, p in enumerate(perm):
            src[p] = int(t[k])
        out[i] = index[tuple(src)]
    return out


def permute_attributes(s: PosteriorSummary, perm) -> PosteriorSummary:
    """Re-express a summary with its attribute columns reordered by ``perm``."""
    perm = list(perm)
    table = s.table
    eff = _tuple_map(table.effects, table.index, perm)
    cls_index = {tuple(int(v) for v in c): i for i, c in enumerate(table.classes)}
    cls = _tuple_map(table.classes, cls_index, perm)
    return PosteriorSummary(
        table=table,
        M=s.M,
        beta=s.beta[eff],
        beta_lo=s.beta_lo[eff],
        beta_hi=s.beta_hi[eff],
        delta=s.delta[eff],
        delta_mean=s.delta_mean[eff],
        kappa=s.kappa,
        lam=s.lam[:, perm],
        lam_lo=s.lam_lo[:, perm],
        lam_hi=s.lam_hi[:, perm],
        R=s.R[np.ix_(perm, perm)],
        R_lo=s.R_lo[np.ix_(perm, perm)],
        R_hi=s.R_hi[np.ix_(perm, perm)],
        gamma=s.gamma[perm],
        omega=s.omega,
        eta=s.eta[cls],
        alpha=s.alpha[:, perm],
        alpha_probs=s.alpha_probs[:, perm],
    )


# --- recovery -------------------------------------------------------------------


@dataclass
class RecoveryReport:
    mae: dict[str, float]
    splits: dict[str, float]
    delta_accuracy: float
    permutations: list[tuple[int, ...]] = field(default_factory=list)
    replications: int = 0

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "splits": self.splits,
            "delta_accuracy": self.delta_accuracy,
            "permutations": [list(p) for p in self.permutations],
            "replications": self.replications,
        }


def _nanmean(values):
    values = [v for v in values if v.size]
    if not values:
        return float("nan")
    return float(np.mean(np.concatenate([v.ravel() for v in values])))


def replication_errors(truth, summary: PosteriorSummary, alpha_true=None):
    """Absolute errors per block for one replication after alignment."""
    perm = tuple(range(summary.R.shape[0]))
    if alpha_true is not None:
        perm = align_attributes(summary.alpha, alpha_true)
        summary = permute_attributes(summary, perm)
    K, L = truth.gamma.shape[0], truth.gamma.shape[1] - 1
    iu = np.triu_indices(K, 1)
    valid = np.arange(truth.eta.shape[2])[None, :] < np.asarray(truth.M)[:, None]  # J x M
    err = {
        "gamma": np.abs(truth.gamma[:, 2:L] - summary.gamma[:, 2:L]),
        "eta": np.abs(truth.eta - summary.eta)[:, valid],
        "R": np.abs(truth.R[iu] - summary.R[iu]),
        "lambda": np.abs(truth.lam - summary.lam),
        "beta": np.abs(truth.beta - summary.beta),
        "delta": np.abs(truth.delta[1:].astype(float) - summary.delta[1:]),
    }
    true_delta = truth.delta[1:]
    beta_err = err["beta"][1:]
    splits = {
        "delta0": err["delta"][true_delta == 0],
        "delta1": err["delta"][true_delta == 1],
        "beta0": beta_err[true_delta == 0],
        "beta1": beta_err[true_delta == 1],
    }
    return err, splits, perm


def recovery_report(truth, summaries, alphas_true=None) -> RecoveryReport:
    """MAE per block averaged over replications and elements.

    ``alphas_true`` (one N x K array per replication) enables attribute
    alignment; without it columns are compared as given.  delta is scored on
    non-intercept entries, gamma on the free thresholds, R on the strict
    upper triangle.
    """
    if alphas_true is None:
        alphas_true = [None] * len(summaries)
    errs, splits, perms = [], [], []
    for s, a in zip(summaries, alphas_true):
        e, sp, p = replication_errors(truth, s, a)
        errs.append(e)
        splits.append(sp)
        perms.append(p)
    mae = {k: _nanmean([e[k] for e in errs]) for k in errs[0]}
    split = {k: _nanmean([s[k] for s in splits]) for k in splits[0]}
    return RecoveryReport(
        mae=mae,
        splits=split,
        delta_accuracy=1.0 - mae["delta"],
        permutations=perms,
        replications=len(summaries),
    )
