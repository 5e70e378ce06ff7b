"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical abort (a sampler invariant failed).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from rlcm import io
from rlcm.distributions import RngStream
from rlcm.errors import ConfigError, DataError, DomainError, InvariantViolation, ScenarioError
from rlcm.evaluate import chain_columns, geweke_table, recovery_report, summarize
from rlcm.fit import fit_model, run_replication
from rlcm.ppc import N_DATASETS, N_PAIRS, ppc_report, select_model
from rlcm.simulate import Scenario, gen_params, simulate_dataset

log = logging.getLogger("rlcm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "RLCM_THREADS"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


# --- helpers --------------------------------------------------------------------


def _overrides(args) -> dict:
    out = {}
    for key in ("seed", "chain_length", "burnin", "K", "L", "order"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def summary_to_dict(s) -> dict:
    return {
        "K": s.table.K,
        "L": s.table.L,
        "effects": s.table.labels,
        "beta_mean": s.beta.tolist(),
        "beta_ci": [s.beta_lo.tolist(), s.beta_hi.tolist()],
        "beta_active": s.beta_active.astype(int).tolist(),
        "delta_mode": s.delta.astype(int).tolist(),
        "delta_mean": s.delta_mean.tolist(),
        "kappa_interior_mean": [s.kappa[j, 2:m].tolist() for j, m in enumerate(s.M)],
        "lambda_mean": s.lam.tolist(),
        "lambda_ci": [s.lam_lo.tolist(), s.lam_hi.tolist()],
        "R_mean": s.R.tolist(),
        "R_ci": [s.R_lo.tolist(), s.R_hi.tolist()],
        "gamma_interior_mean": s.gamma[:, 2:s.table.L].tolist(),
        "omega_mean": s.omega,
        "alpha_mode": s.alpha.tolist(),
        "sparsity": s.sparsity(),
    }


def _write_geweke(path, chain):
    rows = geweke_table(chain_columns(chain)) if chain.n_draws >= 100 else []
    io.write_csv(path, ["parameter", "z", "degenerate"],
                 [[r.name, r.z, int(r.degenerate)] for r in rows])
    return rows


# --- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    sc = Scenario(args.N, args.J, args.K, args.L, args.rho, args.replications, args.seed,
                  M=tuple(args.levels) * args.J if len(args.levels) == 1 else tuple(args.levels))
    if len(sc.levels) != sc.J:
        raise ConfigError(f"--levels needs 1 or J={sc.J} values")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = gen_params(sc, sc.truth_stream().generator())
    io.write_json(out / "truth.json", io.truth_to_dict(truth))
    io.write_json(out / "scenario.json", {
        "schema_version": io.SCHEMA_VERSION, "N": sc.N, "J": sc.J, "K": sc.K, "L": sc.L,
        "rho": sc.rho, "replications": sc.replications, "seed": sc.seed, "M": list(sc.levels),
    })
    for r in range(sc.replications):
        ds = simulate_dataset(sc, r, truth=truth)
        io.save_matrix(out / f"responses_{r}.csv", [f"item{j}" for j in range(sc.J)], ds.Y)
        io.save_matrix(out / f"covariates_{r}.csv", ["intercept", "age", "sex"], ds.X)
        io.save_matrix(out / f"alpha_{r}.csv", [f"attr{k}" for k in range(sc.K)], ds.alpha)
    print(f"wrote {sc.replications} replication(s) to {out}")
    return EXIT_OK


def _load_data(args, levels=None):
    Y, M, _ = io.load_responses(args.data, levels=levels)
    X, _ = io.load_covariates(args.covariates)
    if X.shape[0] != Y.shape[0]:
        raise DataError(f"{args.data} has {Y.shape[0]} rows but {args.covariates} has {X.shape[0]}")
    return Y, M, X


def cmd_fit(args) -> int:
    run = io.load_run_config(args.config) if args.config else {}
    model = dict(run.get("model", {}))
    Y, M, X = _load_data(args, run.get("data", {}).get("levels"))
    over = _overrides(args)
    if args.record_alpha:
        over["record_alpha_draws"] = True
    cfg = io.model_config(model, Y.shape[0], Y.shape[1], M, D=X.shape[1], **over)
    chain = fit_model(cfg, Y, X, check=args.check)
    out = Path(args.out)
    io.save_chain(out / "chain", chain)
    if chain.n_draws:
        io.write_json(out / "summary.json", summary_to_dict(summarize(chain)))
    rows = _write_geweke(out / "geweke.csv", chain)
    flagged = sum(r.flagged for r in rows)
    print(f"{chain.n_draws} draws; kappa acceptance {np.mean(chain.acceptance):.3f}; "
          f"Geweke flagged {flagged}/{len(rows)}")
    return EXIT_OK


def cmd_geweke(args) -> int:
    chain = io.load_chain(Path(args.fit) / "chain")
    out = Path(args.out) if args.out else Path(args.fit) / "geweke.csv"
    rows = _write_geweke(out, chain)
    flagged = sum(r.flagged for r in rows)
    print(f"Geweke flagged {flagged}/{len(rows)} parameters; table in {out}")
    return EXIT_OK


def _ppc_for(fit_dir, args, X, Y, stream):
    chain = io.load_chain(Path(fit_dir) / "chain")
    if chain.alpha_tally.shape[0] != Y.shape[0]:
        raise DataError(f"{fit_dir} was fitted to {chain.alpha_tally.shape[0]} respondents, data has {Y.shape[0]}")
    rng = RngStream(args.seed if args.seed is not None else 0, stream).generator()
    return chain, ppc_report(chain, X, Y, rng, n_datasets=args.datasets, n_pairs=args.pairs)


def cmd_ppc(args) -> int:
    chain_meta = io.read_json(Path(args.fit) / "chain" / "meta.json")
    Y, M, X = _load_data(args, chain_meta["M"])
    _, report = _ppc_for(args.fit, args, X, Y, (4,))
    out = Path(args.out) if args.out else Path(args.fit) / "ppc.json"
    io.write_json(out, report.as_dict())
    print(f"p = {report.p}; U = {report.U:.1f}; z = {report.z:.3f}")
    return EXIT_OK


def cmd_select(args) -> int:
    meta = io.read_json(Path(args.fit[0]) / "chain" / "meta.json")
    Y, M, X = _load_data(args, meta["M"])
    candidates = []
    for i, fit_dir in enumerate(args.fit):
        chain, report = _ppc_for(fit_dir, args, X, Y, (5, i))
        candidates.append((str(fit_dir), summarize(chain), report, X.shape[1]))
    rows = select_model(candidates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "selection.json", [r.as_dict() for r in rows])
    header = ["name", "K", "L", "classes", "measurement_params", "structural_params", "U", "z", "sparsity"]
    io.write_csv(out / "selection.csv", header, [[getattr(r, h) for h in header] for r in rows])
    for r in rows:
        print(f"{r.name}: K={r.K} L={r.L} z={r.z:.3f} sparsity={r.sparsity:.3f}")
    return EXIT_OK


TABLE1 = ["N", "J", "K", "L", "rho", "gamma", "eta", "R", "lambda", "beta", "delta"]
TABLE2 = ["N", "J", "K", "L", "rho", "delta0", "delta1", "beta0", "beta1", "delta_accuracy"]


def _recovery_rows(sc, report):
    base = [sc["N"], sc["J"], sc["K"], sc["L"], sc["rho"]]
    t1 = base + [report.mae[k] for k in ("gamma", "eta", "R", "lambda", "beta", "delta")]
    t2 = base + [report.splits[k] for k in ("delta0", "delta1", "beta0", "beta1")] + [report.delta_accuracy]
    return t1, t2


def _replicate(job):
    sc, r, model, truth = job
    return run_replication(sc, r, model, truth=truth)


def cmd_recover(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    if args.sim:
        sim = Path(args.sim)
        truth = io.truth_from_dict(io.read_json(sim / "truth.json"))
        scen = io.read_json(sim / "scenario.json")
        summaries, alphas = [], []
        for r, fit_dir in enumerate(args.fit or []):
            summaries.append(summarize(io.load_chain(Path(fit_dir) / "chain")))
            _, rows = io.read_csv(sim / f"alpha_{r}.csv", kind=int)
            alphas.append(np.asarray(rows, dtype=np.int64))
        if not summaries:
            raise UsageError("recover --sim needs at least one --fit directory")
        results.append((scen, recovery_report(truth, summaries, alphas)))
    else:
        cfg = io.load_run_config(args.config) if args.config else {"model": {}}
        model = dict(cfg.get("model", {}))
        model.update(_overrides(args))
        for key in ("K", "L", "order"):
            model.pop(key, None)
        if cfg.get("scenarios"):
            grid = cfg["scenarios"]
        elif args.N:
            grid = [{"N": args.N, "J": args.J, "K": args.K, "L": args.L, "rho": args.rho}]
        else:
            raise UsageError("recover needs --sim, a config with scenarios, or --N/--J/--K/--L")
        reps = args.replications or cfg.get("replications", 1)
        seed = model.pop("seed", 0)
        threads = args.threads or cfg.get("threads") or default_threads()
        for spec in grid:
            sc = Scenario(spec["N"], spec["J"], spec["K"], spec["L"], spec.get("rho", 0.0), reps, seed,
                          M=tuple(spec["M"]) if "M" in spec else None)
            truth = gen_params(sc, sc.truth_stream().generator())
            jobs = [(sc, r, model, truth) for r in range(reps)]
            if threads > 1:
                with ProcessPoolExecutor(max_workers=threads) as pool:
                    reps_out = list(pool.map(_replicate, jobs))
            else:
                reps_out = [_replicate(j) for j in jobs]
            report = recovery_report(truth, [x.summary for x in reps_out], [x.alpha_true for x in reps_out])
            results.append(({"N": sc.N, "J": sc.J, "K": sc.K, "L": sc.L, "rho": sc.rho}, report))
    io.write_json(out / "recovery.json", [{"scenario": s, **rep.as_dict()} for s, rep in results])
    t1, t2 = zip(*(_recovery_rows(s, rep) for s, rep in results))
    io.write_csv(out / "table1.csv", TABLE1, t1)
    io.write_csv(out / "table2.csv", TABLE2, t2)
    for s, rep in results:
        print(f"{s}: eta {rep.mae['eta']:.4f} R {rep.mae['R']:.4f} delta acc {rep.delta_accuracy:.3f}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def build_parser() -> Parser:
    p = Parser(prog="rlcm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--chain-length", dest="chain_length", type=int)
        sp.add_argument("--burnin", type=int)

    s = sub.add_parser("simulate", help="generate a scenario's datasets and truth")
    common(s)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--J", type=int, required=True)
    s.add_argument("--K", type=int, required=True)
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--replications", type=int, default=1)
    s.add_argument("--levels", type=int, nargs="+", default=[3])
    s.set_defaults(func=cmd_simulate, seed=0)

    f = sub.add_parser("fit", help="run the sampler on a dataset")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--covariates", required=True)
    f.add_argument("--K", type=int)
    f.add_argument("--L", type=int)
    f.add_argument("--order", type=int)
    f.add_argument("--check", choices=("none", "sweep", "block"), default="sweep")
    f.add_argument("--record-alpha", dest="record_alpha", action="store_true")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("recover", help="recovery tables for a scenario grid or saved fits")
    common(r)
    r.add_argument("--sim", help="directory written by simulate")
    r.add_argument("--fit", nargs="+", help="fit directories, one per replication")
    r.add_argument("--N", type=int)
    r.add_argument("--J", type=int)
    r.add_argument("--K", type=int)
    r.add_argument("--L", type=int)
    r.add_argument("--rho", type=float, default=0.0)
    r.add_argument("--replications", type=int)
    r.set_defaults(func=cmd_recover)

    for name, func, help_ in (("ppc", cmd_ppc, "posterior predictive check of one fit"),
                              ("select", cmd_select, "rank several fits of the same data")):
        c = sub.add_parser(name, help=help_)
        common(c, out_required=name == "select")
        c.add_argument("--fit", required=True, nargs="+" if name == "select" else None)
        c.add_argument("--data", required=True)
        c.add_argument("--covariates", required=True)
        c.add_argument("--datasets", type=int, default=N_DATASETS)
        c.add_argument("--pairs", type=int, default=N_PAIRS)
        c.set_defaults(func=func)

    g = sub.add_parser("geweke", help="per-parameter Geweke z table for a fit")
    common(g, out_required=False)
    g.add_argument("--fit", required=True)
    g.set_defaults(func=cmd_geweke)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("rlcm: a subcommand is required (see --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantViolation, DomainError, np.linalg.LinAlgError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
