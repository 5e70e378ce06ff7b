"""File formats: data CSVs, chain directories, truth and run-config JSON.

Numbers are written with 17 significant digits so every float re-parses to
the identical double.  Every CSV has a header row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from rlcm.errors import ConfigError, DataError
from rlcm.model import ModelConfig, build_effect_table
from rlcm.sampler import ChainOutput
from rlcm.simulate import TruthSet

SCHEMA_VERSION = 1
CHAIN_BLOCKS = ("beta", "delta", "kappa", "lambda", "R", "gamma", "omega")


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_, int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path, kind=float):
    """(header, rows) with every cell parsed by ``kind``.

    Raises DataError naming the file and 1-based line of the first bad row.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([kind(c.strip()) for c in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric or malformed value in {row!r}") from None
    return header, rows


def _int_cell(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(text)
    return int(value)


def load_responses(path, levels=None):
    """Response matrix, level counts and item names.

    Level counts default to (max observed + 1) per item.
    """
    header, rows = read_csv(path, kind=_int_cell)
    if not rows:
        raise DataError(f"{path}: no respondents")
    Y = np.asarray(rows, dtype=np.int64)
    if np.any(Y < 0):
        n, _ = np.argwhere(Y < 0)[0]
        raise DataError(f"{path}:{n + 2}: responses must be >= 0")
    if levels is None:
        M = Y.max(axis=0) + 1
        M = np.maximum(M, 2)
    else:
        M = np.asarray(levels, dtype=np.int64)
        if M.shape != (Y.shape[1],):
            raise DataError(f"{path}: {Y.shape[1]} items but {M.size} level counts configured")
        bad = np.argwhere(Y >= M[None, :])
        if bad.size:
            n, j = bad[0]
            raise DataError(f"{path}:{n + 2}: item {header[j]} value {Y[n, j]} >= M_j = {M[j]}")
    return Y, M, header


def load_covariates(path):
    """Covariate matrix with an intercept first; one is prepended if absent."""
    header, rows = read_csv(path)
    if not rows:
        raise DataError(f"{path}: no respondents")
    X = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(X)):
        n = int(np.argwhere(~np.isfinite(X))[0][0])
        raise DataError(f"{path}:{n + 2}: covariates must be finite")
    ones = [c for c in range(X.shape[1]) if np.all(X[:, c] == 1.0)]
    if not ones:
        X = np.column_stack((np.ones(X.shape[0]), X))
        header = ["intercept"] + header
    elif ones[0] != 0:
        c = ones[0]
        order = [c] + [i for i in range(X.shape[1]) if i != c]
        X = X[:, order]
        header = [header[i] for i in order]
    return X, header


def save_matrix(path, header, matrix):
    write_csv(path, header, np.asarray(matrix).tolist())


# --- chains ---------------------------------------------------------------------


def chain_headers(chain_or_table, M, D: int):
    table = getattr(chain_or_table, "table", chain_or_table)
    J = len(M)
    K, L = table.K, table.L
    return {
        "beta": [f"beta[{j}]{lab}" for j in range(J) for lab in table.labels],
        "delta": [f"delta[{j}]{lab}" for j in range(J) for lab in table.labels],
        "kappa": [f"kappa[{j},{m}]" for j in range(J) for m in range(2, int(M[j]))],
        "lambda": [f"lambda[{d},{k}]" for d in range(D) for k in range(K)],
        "R": [f"R[{a},{b}]" for a, b in zip(*np.triu_indices(K, 1))],
        "gamma": [f"gamma[{k},{l}]" for k in range(K) for l in range(2, L)],
        "omega": ["omega"],
    }


def _block_values(chain: ChainOutput):
    S = chain.n_draws
    K = chain.table.K
    L = chain.table.L
    kap = [chain.kappa[:, j, 2:m] for j, m in enumerate(chain.M)]
    iu = np.triu_indices(K, 1)
    return {
        "beta": chain.beta.transpose(0, 2, 1).reshape(S, -1),
        "delta": chain.delta.transpose(0, 2, 1).reshape(S, -1).astype(np.int64),
        "kappa": np.concatenate(kap, axis=1) if kap else np.zeros((S, 0)),
        "lambda": chain.lam.reshape(S, -1),
        "R": chain.R[:, iu[0], iu[1]],
        "gamma": chain.gamma[:, :, 2:L].reshape(S, -1),
        "omega": chain.omega.reshape(S, 1),
    }


def save_chain(directory, chain: ChainOutput) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    D = chain.lam.shape[1]
    headers = chain_headers(chain, chain.M, D)
    values = _block_values(chain)
    for block in CHAIN_BLOCKS:
        rows = values[block]
        if block == "delta":
            rows = [[s] + [int(v) for v in r] for s, r in enumerate(rows.tolist())]
        else:
            rows = [[s] + r for s, r in enumerate(rows.tolist())]
        write_csv(out / f"{block}.csv", ["draw"] + headers[block], rows)
    K, L = chain.table.K, chain.table.L
    tally = chain.alpha_tally.reshape(chain.alpha_tally.shape[0], -1)
    write_csv(
        out / "alpha_tally.csv",
        ["respondent"] + [f"alpha[{k}]={l}" for k in range(K) for l in range(L)],
        [[n] + [int(v) for v in r] for n, r in enumerate(tally.tolist())],
    )
    if chain.alpha_draws is not None:
        S, N, _ = chain.alpha_draws.shape
        write_csv(
            out / "alpha_draws.csv",
            ["draw"] + [f"alpha[{n},{k}]" for n in range(N) for k in range(K)],
            [[s] + [int(v) for v in r] for s, r in enumerate(chain.alpha_draws.reshape(S, -1).tolist())],
        )
    meta = {
        "schema_version": SCHEMA_VERSION,
        "K": K,
        "L": L,
        "order": chain.table.order,
        "D": D,
        "N": int(chain.alpha_tally.shape[0]),
        "M": [int(m) for m in chain.M],
        "n_draws": chain.n_draws,
        "acceptance": [float(a) for a in chain.acceptance],
        "sigma_kappa": [float(s) for s in chain.sigma_kappa],
        "empty_top_iterations": int(chain.empty_top_iterations),
    }
    write_json(out / "meta.json", meta)


def _body(path, expected_header):
    header, rows = read_csv(path)
    if header[1:] != expected_header:
        raise DataError(f"{path}: header does not match the chain metadata")
    arr = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return arr[:, 1:]


def load_chain(directory) -> ChainOutput:
    d = Path(directory)
    meta = read_json(d / "meta.json")
    K, L, D = meta["K"], meta["L"], meta["D"]
    M = np.asarray(meta["M"], dtype=np.int64)
    J = M.size
    table = build_effect_table(K, L, meta["order"])
    H = table.H
    S = meta["n_draws"]
    headers = chain_headers(table, M, D)
    blocks = {b: _body(d / f"{b}.csv", headers[b]) for b in CHAIN_BLOCKS}
    beta = blocks["beta"].reshape(S, J, H).transpose(0, 2, 1).copy()
    delta = blocks["delta"].reshape(S, J, H).transpose(0, 2, 1).astype(np.int8)
    width = int(M.max()) + 1
    kappa = np.full((S, J, width), np.inf)
    kappa[:, :, 0] = -np.inf
    kappa[:, :, 1] = 0.0
    col = 0
    for j, m in enumerate(M):
        kappa[:, j, 2:m] = blocks["kappa"][:, col:col + m - 2]
        col += m - 2
    lam = blocks["lambda"].reshape(S, D, K)
    R = np.tile(np.eye(K), (S, 1, 1))
    iu = np.triu_indices(K, 1)
    R[:, iu[0], iu[1]] = blocks["R"]
    R[:, iu[1], iu[0]] = blocks["R"]
    gamma = np.full((S, K, L + 1), np.inf)
    gamma[:, :, 0] = -np.inf
    gamma[:, :, 1] = 0.0
    gamma[:, :, 2:L] = blocks["gamma"].reshape(S, K, L - 2)
    _, tally_rows = read_csv(d / "alpha_tally.csv", kind=int)
    tally = np.asarray(tally_rows, dtype=np.int64)[:, 1:].reshape(-1, K, L)
    alpha_draws = None
    if (d / "alpha_draws.csv").exists():
        _, rows = read_csv(d / "alpha_draws.csv", kind=int)
        alpha_draws = np.asarray(rows, dtype=np.int8)[:, 1:].reshape(S, -1, K)
    return ChainOutput(
        table=table,
        M=M,
        beta=beta,
        delta=delta,
        kappa=kappa,
        lam=lam,
        R=R,
        gamma=gamma,
        omega=blocks["omega"][:, 0].copy(),
        alpha_tally=tally,
        acceptance=np.asarray(meta["acceptance"], dtype=float),
        sigma_kappa=np.asarray(meta["sigma_kappa"], dtype=float),
        alpha_draws=alpha_draws,
        empty_top_iterations=meta["empty_top_iterations"],
    )


# --- JSON -----------------------------------------------------------------------


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc


def truth_to_dict(truth: TruthSet) -> dict:
    K, L = truth.table.K, truth.table.L
    return {
        "schema_version": SCHEMA_VERSION,
        "K": K,
        "L": L,
        "order": truth.table.order,
        "M": [int(m) for m in truth.M],
        "beta": truth.beta.tolist(),
        "delta": truth.delta.astype(int).tolist(),
        "kappa_interior": [truth.kappa[j, 2:m].tolist() for j, m in enumerate(truth.M)],
        "lambda": truth.lam.tolist(),
        "gamma_interior": truth.gamma[:, 2:L].tolist(),
        "R": truth.R.tolist(),
    }


def truth_from_dict(d: dict) -> TruthSet:
    from rlcm.model import full_kappa, pad_kappa

    K, L = d["K"], d["L"]
    table = build_effect_table(K, L, d["order"])
    M = np.asarray(d["M"], dtype=np.int64)
    kappa = pad_kappa([full_kappa(k, int(m)) for k, m in zip(d["kappa_interior"], M)])
    gamma = np.full((K, L + 1), np.inf)
    gamma[:, 0] = -np.inf
    gamma[:, 1] = 0.0
    gamma[:, 2:L] = np.asarray(d["gamma_interior"], dtype=float).reshape(K, L - 2)
    return TruthSet(
        table=table,
        M=M,
        beta=np.asarray(d["beta"], dtype=float),
        delta=np.asarray(d["delta"], dtype=np.int8),
        kappa=kappa,
        lam=np.asarray(d["lambda"], dtype=float),
        gamma=gamma,
        R=np.asarray(d["R"], dtype=float),
    )


# --- run configuration ------------------------------------------------------------

MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"N", "J", "M"}
RUN_KEYS = {"schema_version", "model", "data", "output", "scenarios", "replications",
            "candidates", "thin", "threads", "ppc"}


def load_run_config(path) -> dict:
    """Parse and shallow-validate a run configuration file."""
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = set(cfg) - RUN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    model = cfg.get("model", {})
    bad = set(model) - MODEL_KEYS
    if bad:
        raise ConfigError(f"{path}: unknown model keys {sorted(bad)}")
    return cfg


def model_config(model: dict, N: int, J: int, M, **overrides) -> ModelConfig:
    merged = dict(model)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ModelConfig(N=N, J=J, M=list(M), **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
