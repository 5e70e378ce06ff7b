"""Random sampling primitives used by the Gibbs blocks.

All samplers are vectorised: scalar or array parameters broadcast against
each other and one draw is returned per broadcast element.  Randomness comes
from a :class:`numpy.random.Generator`; :class:`RngStream` is the seeded,
splittable way to obtain one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from rlcm.errors import DomainError

__all__ = [
    "RngStream",
    "log_interval_prob",
    "sample_truncated_normal",
    "sample_truncated_exponential",
    "sample_inverse_wishart",
    "sample_matrix_normal",
    "sample_categorical",
    "sample_categorical_log",
]

# Standardized bound beyond which Phi^{-1}(Phi(x)) stops being exact in
# double precision; past it draws come from exponential rejection.
TAIL_CUTOFF = 30.0


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream id) pair naming an independent random stream.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    distinct ids give statistically independent PCG64 sequences and the same
    pair always reproduces the same draws.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0:
            raise DomainError("seed must be a non-negative integer")
        if isinstance(self.stream, int):
            object.__setattr__(self, "stream", (self.stream,))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=tuple(self.stream))
        return np.random.Generator(np.random.PCG64(seq))

    def substream(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, tuple(self.stream) + tuple(int(i) for i in ids))


def _as_float(*arrays):
    return np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in arrays))


def log_interval_prob(a, b):
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    a, b = _as_float(a, b)
    # Reflect intervals lying in the upper half so both ends are lower-tail
    # probabilities, where log_ndtr keeps full relative precision.
    with np.errstate(invalid="ignore"):
        flip = (a + b) > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log1p(-np.exp(log_lo - log_hi))
    return out


def sample_truncated_normal(mean, variance, lo, hi, rng: np.random.Generator):
    """Draw from N(mean, variance) restricted to the interval (lo, hi].

    Inverse-CDF sampling is used wherever it is exact (after reflecting the
    interval into the lower tail); once the nearer bound sits more than
    ``TAIL_CUTOFF`` standard deviations out, draws come from rejection with a
    shifted, truncated exponential proposal.
    """
    mean, variance, lo, hi = _as_float(mean, variance, lo, hi)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(variance))):
        raise DomainError("truncated normal needs finite mean and variance")
    if np.any(variance <= 0):
        raise DomainError("truncated normal needs variance > 0")
    if np.any(~(lo < hi)):
        raise DomainError("truncated normal needs lo < hi")
    shape = mean.shape
    sd = np.sqrt(variance)
    a = ((lo - mean) / sd).ravel()
    b = ((hi - mean) / sd).ravel()
    with np.errstate(invalid="ignore"):
        flip = (a + b) > 0
    aa = np.where(flip, -b, a)
    bb = np.where(flip, -a, b)

    z = np.empty(a.shape)
    u = rng.random(a.shape)
    body = bb >= -TAIL_CUTOFF
    if np.any(body):
        pa = ndtr(aa[body])
        pb = ndtr(bb[body])
        z[body] = ndtri(pa + u[body] * (pb - pa))
    tail = ~body
    if np.any(tail):
        # Mirror into the positive tail (c, d) with c > TAIL_CUTOFF.
        z[tail] = -_positive_tail_normal(-bb[tail], -aa[tail], rng)
    z = np.where(flip, -z, z)
    x = (mean.ravel() + sd.ravel() * z)
    lo_f = lo.ravel()
    hi_f = hi.ravel()
    x = np.minimum(np.maximum(x, np.nextafter(lo_f, np.inf)), hi_f)
    return x.reshape(shape) if shape else float(x[0])


def _positive_tail_normal(c, d, rng):
    """Standard normal restricted to (c, d) with c large, by rejection.

    Proposal: c + Exp(rate) truncated at d, rate = (c + sqrt(c^2 + 4)) / 2;
    acceptance probability exp(-(z - rate)^2 / 2).
    """
    out = np.empty(c.shape)
    todo = np.arange(c.size)
    while todo.size:
        cc, dd = c[todo], d[todo]
        rate = 0.5 * (cc + np.sqrt(cc * cc + 4.0))
        shift = _trunc_exp_unit(rate, dd - cc, rng.random(todo.size))
        z = cc + shift
        keep = np.log(rng.random(todo.size)) < -0.5 * (z - rate) ** 2
        out[todo[keep]] = z[keep]
        todo = todo[~keep]
    return out


def _trunc_exp_unit(rate, width, u):
    # Inverse CDF of Exp(rate) on (0, width); width may be +inf.
    with np.errstate(over="ignore"):
        mass = -np.expm1(-rate * width)
    return -np.log1p(-u * mass) / rate


def sample_truncated_exponential(rate, lo, hi, rng: np.random.Generator):
    """Draw from density proportional to exp(-rate * x) on (lo, hi).

    Exact inverse-CDF sampling; ``hi`` may be ``+inf``.
    """
    rate, lo, hi = _as_float(rate, lo, hi)
    if np.any(rate <= 0) or not np.all(np.isfinite(rate)):
        raise DomainError("truncated exponential needs a finite rate > 0")
    if np.any(~(lo < hi)) or not np.all(np.isfinite(lo)):
        raise DomainError("truncated exponential needs finite lo < hi")
    shape = rate.shape
    u = rng.random(shape)
    x = lo + _trunc_exp_unit(rate, hi - lo, u)
    x = np.minimum(np.maximum(x, np.nextafter(lo, np.inf)), np.nextafter(hi, -np.inf))
    return x if shape else float(x)


def _cholesky(matrix, what):
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"{what} must be symmetric positive definite") from exc


def sample_inverse_wishart(scale, dof: float, rng: np.random.Generator):
    """Draw Sigma ~ IW(scale, dof) with E[Sigma] = scale / (dof - K - 1).

    Inverts a Wishart(scale^{-1}, dof) draw built from the Bartlett
    decomposition.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    k = scale.shape[0]
    if scale.shape != (k, k) or not np.allclose(scale, scale.T, rtol=1e-10, atol=1e-12):
        raise DomainError("inverse Wishart scale must be a symmetric square matrix")
    if not dof > k - 1:
        raise DomainError("inverse Wishart needs dof > K - 1")
    chol = _cholesky(scale, "inverse Wishart scale")
    # Bartlett factor A of a Wishart(I, dof) draw; lower triangular.
    a = np.zeros((k, k))
    a[np.diag_indices(k)] = np.sqrt(rng.chisquare(dof - np.arange(k)))
    rows, cols = np.tril_indices(k, -1)
    a[rows, cols] = rng.standard_normal(rows.size)
    # Sigma = C (A A')^{-1} C' = T T' with T = C A'^{-1}.
    t = np.linalg.solve(a, chol.T).T
    sigma = t @ t.T
    return 0.5 * (sigma + sigma.T)


def sample_matrix_normal(mean, row_cov, col_cov, rng: np.random.Generator):
    """Draw X (D x K) with vec(X') ~ N(vec(mean'), row_cov kron col_cov)."""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    row_cov = np.atleast_2d(np.asarray(row_cov, dtype=float))
    col_cov = np.atleast_2d(np.asarray(col_cov, dtype=float))
    d, k = mean.shape
    if row_cov.shape != (d, d) or col_cov.shape != (k, k):
        raise DomainError(
            f"matrix normal dimension mismatch: mean {mean.shape}, "
            f"row_cov {row_cov.shape}, col_cov {col_cov.shape}"
        )
    a = _cholesky(row_cov, "matrix normal row covariance")
    b = _cholesky(col_cov, "matrix normal column covariance")
    z = rng.standard_normal((d, k))
    return mean + a @ z @ b.T


def sample_categorical(weights, rng: np.random.Generator) -> int:
    """Draw index l with probability weights[l] / sum(weights)."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DomainError("categorical weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or not w.sum() > 0:
        raise DomainError("categorical weights must be finite, >= 0, not all zero")
    cdf = np.cumsum(w)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), w.size - 1))


def sample_categorical_log(log_weights, rng: np.random.Generator):
    """Row-wise categorical draws from unnormalised log weights (n x L)."""
    lw = np.asarray(log_weights, dtype=float)
    top = np.max(lw, axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DomainError("every row needs at least one finite log weight")
    w = np.exp(lw - top)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(lw.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, lw.shape[1] - 1)
