import numpy as np
import pytest

from rlcm.distributions import RngStream
from rlcm.initialize import state_from_values
from rlcm.model import ModelConfig
from rlcm.sampler import ChainOutput, FitData
from rlcm.simulate import Scenario, simulate_dataset


def make_problem(N=200, J=8, K=2, L=2, rho=0.0, seed=0, M=None, **model):
    """Simulated dataset plus FitData and a state sitting at the truth."""
    sc = Scenario(N=N, J=J, K=K, L=L, rho=rho, seed=seed, M=M)
    ds = simulate_dataset(sc, 0)
    cfg = ModelConfig(N=N, J=J, M=sc.levels, K=K, L=L, D=ds.X.shape[1], **model)
    data = FitData.build(cfg, ds.Y, ds.X)
    rng = RngStream(seed, (9,)).generator()
    t = ds.truth
    state = state_from_values(
        data, alpha=ds.alpha, beta=t.beta, delta=t.delta, kappa=t.kappa,
        lam=t.lam, R=t.R, gamma=t.gamma, rng=rng,
    )
    return ds, data, state, rng


@pytest.fixture
def problem():
    return make_problem()


def chain_from_truth(truth, S=5, N=10, alpha=None):
    """Degenerate ChainOutput repeating the data-generating values S times."""
    K = truth.R.shape[0]
    L = truth.gamma.shape[1] - 1
    J = truth.beta.shape[1]
    tally = np.zeros((N, K, L), dtype=np.int64)
    if alpha is not None:
        np.add.at(tally, (np.arange(N)[:, None], np.arange(K)[None, :], alpha), S)
    rep = lambda a: np.repeat(np.asarray(a)[None], S, axis=0)
    return ChainOutput(
        table=truth.table, M=np.asarray(truth.M), beta=rep(truth.beta),
        delta=rep(truth.delta).astype(np.int8), kappa=rep(truth.kappa), lam=rep(truth.lam),
        R=rep(truth.R), gamma=rep(truth.gamma), omega=np.full(S, 0.5), alpha_tally=tally,
        acceptance=np.ones(J), sigma_kappa=np.full(J, 0.1),
    )


_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
