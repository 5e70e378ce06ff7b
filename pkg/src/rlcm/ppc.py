"""Posterior-predictive model checking and candidate ranking.

Each dataset is reduced to the vector of joint level counts over every
unordered item pair.  Distances from the observed statistic to replicated
ones are compared against distances among replicated statistics with a
one-sided Mann-Whitney U; smaller standardised U means the replicated data
resemble the observed data more closely.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from rlcm.errors import DomainError
from rlcm.evaluate import PosteriorSummary
from rlcm.model import measurement_param_count, structural_param_count
from rlcm.sampler import ChainOutput
from rlcm.simulate import TruthSet, gen_alpha, gen_responses

N_DATASETS = 1000
N_PAIRS = 2500


def statistic_length(M) -> int:
    M = np.asarray(M, dtype=np.int64)
    return int((M.sum() ** 2 - np.sum(M * M)) // 2)


def pairwise_count_statistic(Y, M) -> np.ndarray:
    """Joint level counts for every item pair (j1 < j2), levels lexicographic."""
    Y = np.asarray(Y, dtype=np.int64)
    M = np.asarray(M, dtype=np.int64)
    if Y.ndim != 2 or Y.shape[1] != M.size:
        raise DomainError("Y must be N x J with one level count per item")
    if np.any(Y < 0) or np.any(Y >= M[None, :]):
        raise DomainError("responses out of range")
    offsets = np.concatenate(([0], np.cumsum(M)))
    onehot = np.zeros((Y.shape[0], offsets[-1]))
    onehot[np.arange(Y.shape[0])[:, None], offsets[:-1][None, :] + Y] = 1.0
    co = onehot.T @ onehot
    parts = []
    J = M.size
    for a in range(J):
        for b in range(a + 1, J):
            parts.append(co[offsets[a]:offsets[a + 1], offsets[b]:offsets[b + 1]].ravel())
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.rint(np.concatenate(parts)).astype(np.int64)


def l1_distance(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DomainError("l1_distance needs equal-length vectors")
    return float(np.abs(x - y).sum())


def _draw_truth(chain: ChainOutput, s: int) -> TruthSet:
    return TruthSet(
        table=chain.table,
        M=chain.M,
        beta=chain.beta[s],
        delta=chain.delta[s],
        kappa=chain.kappa[s],
        lam=chain.lam[s],
        gamma=chain.gamma[s],
        R=chain.R[s],
    )


def draw_indices(n_draws: int, count: int, rng) -> np.ndarray:
    if n_draws == 0:
        raise DomainError("posterior predictive needs a chain with recorded draws")
    if count > n_draws:
        warnings.warn(
            f"{count} datasets requested from {n_draws} draws; thinning with replacement",
            RuntimeWarning,
            stacklevel=3,
        )
        return np.sort(rng.integers(0, n_draws, count))
    return np.linspace(0, n_draws - 1, count).round().astype(np.int64)


def posterior_predictive_draws(chain: ChainOutput, X, count: int, rng) -> list[np.ndarray]:
    """Replicated response matrices, one per evenly thinned posterior draw."""
    out = []
    for s in draw_indices(chain.n_draws, count, rng):
        truth = _draw_truth(chain, int(s))
        alpha = gen_alpha(X, truth, rng)
        out.append(gen_responses(alpha, truth, rng))
    return out


def posterior_predictive_statistics(chain: ChainOutput, X, count: int, rng) -> np.ndarray:
    """pairwise_count_statistic of each replicated dataset (count x p)."""
    rows = [pairwise_count_statistic(Y, chain.M) for Y in posterior_predictive_draws(chain, X, count, rng)]
    return np.vstack(rows)


def mann_whitney_u(a, b):
    """U = #(x > y) + #(x == y) / 2 over x in a, y in b, and its tie-corrected z."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("Mann-Whitney needs two nonempty samples")
    sb = np.sort(b)
    below = np.searchsorted(sb, a, side="left")
    upto = np.searchsorted(sb, a, side="right")
    U = float(below.sum() + 0.5 * (upto - below).sum())
    na, nb = a.size, b.size
    n = na + nb
    _, counts = np.unique(np.concatenate((a, b)), return_counts=True)
    ties = float(np.sum(counts ** 3 - counts))
    var = na * nb / 12.0 * ((n + 1) - ties / (n * (n - 1))) if n > 1 else 0.0
    z = (U - 0.5 * na * nb) / np.sqrt(var) if var > 0 else 0.0
    return U, float(z)


@dataclass
class PpcReport:
    p: int
    d_obs: np.ndarray
    d_ppred: np.ndarray
    U: float
    z: float

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "U": self.U,
            "z": self.z,
            "d_obs": self.d_obs.tolist(),
            "d_ppred": self.d_ppred.tolist(),
        }


def distinct_pairs(n: int, count: int, rng) -> np.ndarray:
    """``count`` distinct unordered index pairs (i < j) from range(n)."""
    total = n * (n - 1) // 2
    if count > total:
        raise DomainError(f"only {total} distinct pairs among {n} datasets")
    pick = np.sort(rng.choice(total, size=count, replace=False))
    i, j = np.triu_indices(n, 1)
    return np.column_stack((i[pick], j[pick]))


def ppc_report(chain: ChainOutput, X, Y_obs, rng, n_datasets: int = N_DATASETS,
               n_pairs: int = N_PAIRS) -> PpcReport:
    stats = posterior_predictive_statistics(chain, X, n_datasets, rng)
    t_obs = pairwise_count_statistic(Y_obs, chain.M)
    d_obs = np.abs(stats - t_obs[None, :]).sum(axis=1).astype(float)
    pairs = distinct_pairs(stats.shape[0], n_pairs, rng)
    d_pp = np.abs(stats[pairs[:, 0]] - stats[pairs[:, 1]]).sum(axis=1).astype(float)
    U, z = mann_whitney_u(d_obs, d_pp)
    return PpcReport(t_obs.size, d_obs, d_pp, U, z)


@dataclass
class CandidateRow:
    name: str
    K: int
    L: int
    classes: int
    measurement_params: int
    structural_params: int
    U: float
    z: float
    sparsity: float

    def as_dict(self) -> dict:
        return asdict(self)


def select_model(candidates) -> list[CandidateRow]:
    """Rank candidates by standardised U (ascending); no winner is declared.

    ``candidates`` is an iterable of (name, PosteriorSummary, PpcReport, D).
    """
    rows = []
    for name, summary, report, D in candidates:
        table = summary.table
        rows.append(
            CandidateRow(
                name=name,
                K=table.K,
                L=table.L,
                classes=table.L ** table.K,
                measurement_params=measurement_param_count(len(summary.M), table.H, summary.M),
                structural_params=structural_param_count(table.K, table.L, D),
                U=report.U,
                z=report.z,
                sparsity=summary.sparsity(),
            )
        )
    return sorted(rows, key=lambda r: r.z)
