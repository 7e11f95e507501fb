"""Command-line interface: fit, cv, bootstrap, simulate, and bench.

Exit codes: 0 ok, 2 usage or schema violation, 3 non-convergence (unless
--allow-nonconverged), 4 unreliable bootstrap distribution. All subcommands
are byte-reproducible under a fixed --seed for any --threads value.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from ._pool import run_tasks, thread_default
from .admm import AdmmConfig, admm_fit
from .baselines import EnConfig, fit_en, fit_ridge
from .bootstrap import BootstrapConfig, bootstrap, critical_windows, intervals
from .core import PenaltyConfig, Shape, with_intercept
from .dataio import (
    SchemaError,
    fit_document,
    read_dataset_csv,
    read_document,
    write_bands_csv,
    write_dataset_csv,
    write_document,
    write_scores_csv,
    write_trace_csv,
)
from .selection import SelectionResult, TuningGrid, select_cv, select_holdout, _fit_cell
from .simulate import SimConfig, estimation_error, gen_dataset
from .unimodal import DescentConfig, fit_unimodal

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NONCONVERGED = 3
EXIT_UNRELIABLE = 4

FIT_ESTIMATORS = ("uni", "concave", "en", "ridge")


def _fmt(v) -> str:
    return repr(float(v))


def _parse_floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise SchemaError(f"could not parse float list {text!r}")


def _admm_from_args(args) -> AdmmConfig:
    return AdmmConfig(
        rho=args.rho, eps1=args.eps1, eps2=args.eps2, max_iter=args.max_iter
    )


def _add_admm_flags(p, rho_default=1.0):
    p.add_argument("--rho", type=float, default=rho_default,
                   help="ADMM step size (bench default: 3/n)")
    p.add_argument("--eps1", type=float, default=1e-4, help="absolute stopping tolerance")
    p.add_argument("--eps2", type=float, default=1e-4, help="relative stopping tolerance")
    p.add_argument("--max-iter", type=int, default=20_000, help="ADMM iteration cap")


def _threads(args) -> int:
    return args.threads if args.threads is not None else thread_default()


def cmd_fit(args) -> int:
    data = read_dataset_csv(args.data)
    config = _admm_from_args(args)
    if args.estimator in ("uni", "concave"):
        if args.lambda1 is None or args.lambda2 is None:
            raise SchemaError("--lambda1 and --lambda2 are required for uni/concave")
        tuning = {"lambda1": args.lambda1, "lambda2": args.lambda2}
        if args.estimator == "uni":
            dcfg = DescentConfig(tie_seed=args.seed, admm=config)
            result = fit_unimodal(data, args.tau, args.lambda1, args.lambda2, config=dcfg)
        else:
            shape = Shape.CONCAVE if args.lambda1 > 0 else Shape.NONE
            pcfg = PenaltyConfig(args.lambda1, args.lambda2, shape)
            result = admm_fit(data, args.tau, pcfg, config=config)
    else:
        if args.lam is None:
            raise SchemaError("--lambda is required for en/ridge")
        if args.estimator == "en":
            alpha = 0.5 if args.alpha is None else args.alpha
            tuning = {"lambda": args.lam, "alpha": alpha}
            result = fit_en(data, args.tau, EnConfig(args.lam, alpha, config))
        else:
            tuning = {"lambda": args.lam, "alpha": 0.0}
            result = fit_ridge(data, args.tau, args.lam, config)
    doc = fit_document(result, args.estimator, args.tau, tuning, args.seed)
    write_document(args.out, doc)
    if args.trace:
        write_trace_csv(args.trace, result.trace)
    if not result.converged and not args.allow_nonconverged:
        print("fit did not converge (use --allow-nonconverged to accept)", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_cv(args) -> int:
    data = read_dataset_csv(args.data)
    grid = TuningGrid(_parse_floats(args.grid_l1), _parse_floats(args.grid_l2))
    config = _admm_from_args(args)
    dcfg = DescentConfig(tie_seed=args.seed, admm=config)
    if args.validation:
        validation = read_dataset_csv(args.validation)
        sel = select_holdout(
            data, validation, args.tau, grid, estimator=args.estimator,
            admm=config, descent=dcfg,
        )
    else:
        sel = select_cv(
            data, args.tau, grid, folds=args.folds, estimator=args.estimator,
            seed=args.seed, admm=config, descent=dcfg, threads=_threads(args),
        )
    tuning = {"lambda1": sel.best[0], "lambda2": sel.best[1]}
    doc = fit_document(sel.refit, args.estimator, args.tau, tuning, args.seed)
    doc["kind"] = "cv"
    doc["grid"] = {
        "lambda1_values": list(sel.lambda1_values),
        "lambda2_values": list(sel.lambda2_values),
    }
    doc["folds"] = None if args.validation else args.folds
    write_document(args.out, doc)
    if args.scores_out:
        write_scores_csv(args.scores_out, sel)
    if not sel.refit.converged and not args.allow_nonconverged:
        print("winning refit did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    data = read_dataset_csv(args.data)
    doc = read_document(args.cv_result)
    estimator = doc["estimator"]
    if estimator not in ("uni", "concave"):
        raise SchemaError(f"bootstrap supports uni/concave results, got {estimator!r}")
    tau = doc["tau"]
    l1, l2 = doc["tuning"]["lambda1"], doc["tuning"]["lambda2"]
    config = _admm_from_args(args)
    dcfg = DescentConfig(tie_seed=args.seed, admm=config)
    base_fit = _fit_cell(data, tau, l1, l2, estimator, config, dcfg, None)
    base = SelectionResult(
        best=(l1, l2),
        score_table=np.zeros((1, 1)),
        refit=base_fit,
        lambda1_values=(l1,),
        lambda2_values=(l2,),
        valid=np.ones((1, 1), dtype=bool),
        estimator=estimator,
    )
    bcfg = BootstrapConfig(
        replicates=args.replicates, level=args.level, seed=args.seed,
        reuse_tuning=not args.retune,
    )
    dist = bootstrap(
        data, tau, base, bcfg, admm=config, descent=dcfg, threads=_threads(args)
    )
    band = intervals(dist, args.level)
    report = critical_windows(band)
    write_bands_csv(args.out, base_fit, band, report)
    if not dist.reliable:
        print("more than 20% of bootstrap replicates failed to converge", file=sys.stderr)
        return EXIT_UNRELIABLE
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = SimConfig(
        n=args.n, K=args.k, T=args.t, p=args.p, model=args.model,
        error=args.error, snr=args.snr, tau=args.tau, seed=args.seed,
        coef_seed=args.coef_seed,
    )
    ds = gen_dataset(cfg)
    write_dataset_csv(args.out, ds.data)
    if args.truth_out:
        truth = ds.truth
        doc = {
            "schema_version": "1.0",
            "kind": "simulate-truth",
            "model": cfg.model,
            "error": cfg.error,
            "snr": cfg.snr,
            "tau": cfg.tau,
            "seed": args.seed,
            "coef_seed": args.coef_seed,
            "dims": {"K": cfg.K, "T": cfg.T, "p": cfg.p, "n": cfg.n},
            "beta_star": np.asarray(truth.beta_star).tolist(),
            "gamma_star": np.asarray(truth.gamma_star).tolist(),
            "sigma": truth.sigma,
            "modes": np.asarray(truth.modes).tolist(),
            "quantile_shift": truth.quantile_shift,
        }
        write_document(args.truth_out, doc)
    return EXIT_OK


def _standardized(train_data, val_data):
    # Fits run on response / std(train response); coefficients scale back
    # exactly by the check loss's positive homogeneity.
    s = float(train_data.response.std())
    if s <= 0:
        s = 1.0
    tr = with_intercept(train_data).with_response(train_data.response / s)
    va = with_intercept(val_data).with_response(val_data.response / s)
    return tr, va, s


def _bench_fit(estimator, tr, va, tau, grids, admm, seed):
    """Tune on the validation set, return the winning beta estimate."""
    if estimator in ("uni", "concave"):
        dcfg = DescentConfig(tie_seed=seed, admm=admm)
        sel = select_holdout(
            tr, va, tau, grids["shape"], estimator=estimator, admm=admm, descent=dcfg
        )
        return sel.refit.beta
    from .selection import validation_score

    best_score, best_beta, state = np.inf, None, None
    alphas = (0.0,) if estimator == "ridge" else grids["en_alphas"]
    for alpha in alphas:
        for lam in sorted(grids["en_lambdas"], reverse=True):
            fit = fit_en(tr, tau, EnConfig(lam, alpha, admm), init=state)
            state = fit.state
            score = validation_score(fit, va, tau)
            if fit.converged and score < best_score:
                best_score, best_beta = score, fit.beta
    if best_beta is None:
        raise RuntimeError(f"no converged {estimator} fit on the tuning grid")
    return best_beta


def cmd_bench(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    n_list = [int(v) for v in _parse_floats(args.n_list)]
    snr_list = list(_parse_floats(args.snr_list))
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    for e in estimators:
        if e not in FIT_ESTIMATORS:
            raise SchemaError(f"unknown estimator {e!r}")
    grids = {
        "shape": TuningGrid(_parse_floats(args.grid_l1), _parse_floats(args.grid_l2)),
        "en_lambdas": _parse_floats(args.en_lambdas),
        "en_alphas": _parse_floats(args.en_alphas),
    }
    cells = [
        (mi, ni, si, rep)
        for mi in range(len(models))
        for ni in range(len(n_list))
        for si in range(len(snr_list))
        for rep in range(args.reps)
    ]

    def one_cell(cell):
        mi, ni, si, rep = cell
        model, n, snr = models[mi], n_list[ni], snr_list[si]
        rho = args.rho if args.rho is not None else 3.0 / n
        admm = AdmmConfig(rho=rho, eps1=args.eps1, eps2=args.eps2, max_iter=args.max_iter)
        sim_tr = gen_dataset(SimConfig(
            n=n, K=args.k, T=args.t, p=args.p, model=model, error=args.error,
            snr=snr, tau=args.tau, seed=(args.seed, mi, ni, si, rep, 0),
            coef_seed=args.seed,
        ))
        sim_va = gen_dataset(SimConfig(
            n=n, K=args.k, T=args.t, p=args.p, model=model, error=args.error,
            snr=snr, tau=args.tau, seed=(args.seed, mi, ni, si, rep, 1),
            coef_seed=args.seed,
        ))
        tr, va, scale = _standardized(sim_tr.data, sim_va.data)
        beta_star = np.asarray(sim_tr.truth.beta_star)
        rows = []
        for est in estimators:
            t0 = time.monotonic()
            failure = ""
            err = ""
            try:
                beta_hat = scale * _bench_fit(est, tr, va, args.tau, grids, admm, args.seed)
                err = _fmt(estimation_error(beta_hat, beta_star))
            except Exception as exc:  # record and continue
                failure = f"{type(exc).__name__}: {exc}"
            runtime = _fmt(time.monotonic() - t0) if args.timing else ""
            rows.append([model, n, _fmt(snr), args.error, est, rep, err, runtime, failure])
        return rows

    results = run_tasks(one_cell, cells, _threads(args))
    header = ["model", "n", "snr", "error", "estimator", "rep",
              "estimation_error", "runtime_seconds", "failure"]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rows in results:
            w.writerows(rows)
    if args.summary_out:
        _write_bench_summary(args.summary_out, header, [r for rows in results for r in rows])
    return EXIT_OK


def _write_bench_summary(path, header, rows) -> None:
    groups = {}
    for r in rows:
        key = (r[0], r[1], r[2], r[3], r[4])
        if r[6] != "":
            groups.setdefault(key, []).append(float(r[6]))
        else:
            groups.setdefault(key, [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "n", "snr", "error", "estimator",
                    "mean_error", "se_error", "reps"])
        for key in groups:
            vals = groups[key]
            if vals:
                mean = float(np.mean(vals))
                se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
                w.writerow(list(key) + [_fmt(mean), _fmt(se), len(vals)])
            else:
                w.writerow(list(key) + ["", "", 0])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qdlag",
        description="Smooth, shape-constrained quantile distributed-lag regression. "
        "Exit codes: 0 ok, 2 usage/schema, 3 non-convergence, 4 unreliable inference.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("fit", help="fit one estimator at fixed tuning")
    pf.add_argument("--data", required=True)
    pf.add_argument("--tau", type=float, required=True)
    pf.add_argument("--estimator", choices=FIT_ESTIMATORS, required=True)
    pf.add_argument("--lambda1", type=float, default=None)
    pf.add_argument("--lambda2", type=float, default=None)
    pf.add_argument("--lambda", dest="lam", type=float, default=None)
    pf.add_argument("--alpha", type=float, default=None)
    pf.add_argument("--seed", type=int, default=0)
    pf.add_argument("--out", required=True)
    pf.add_argument("--trace", default=None)
    pf.add_argument("--allow-nonconverged", action="store_true")
    _add_admm_flags(pf)
    pf.set_defaults(func=cmd_fit)

    pc = sub.add_parser("cv", help="tuning selection by cross-validation or holdout")
    pc.add_argument("--data", required=True)
    pc.add_argument("--tau", type=float, required=True)
    pc.add_argument("--estimator", choices=("uni", "concave"), required=True)
    pc.add_argument("--grid-l1", required=True)
    pc.add_argument("--grid-l2", required=True)
    pc.add_argument("--folds", type=int, default=5)
    pc.add_argument("--validation", default=None)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--out", required=True)
    pc.add_argument("--scores-out", default=None)
    pc.add_argument("--threads", type=int, default=None)
    pc.add_argument("--allow-nonconverged", action="store_true")
    _add_admm_flags(pc)
    pc.set_defaults(func=cmd_cv)

    pb = sub.add_parser("bootstrap", help="wild-bootstrap confidence bands")
    pb.add_argument("--data", required=True)
    pb.add_argument("--cv-result", required=True)
    pb.add_argument("--replicates", type=int, default=200)
    pb.add_argument("--level", type=float, default=0.95)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--retune", action="store_true",
                    help="rerun cross-validation for every replicate")
    pb.add_argument("--out", required=True)
    pb.add_argument("--threads", type=int, default=None)
    _add_admm_flags(pb)
    pb.set_defaults(func=cmd_bootstrap)

    ps = sub.add_parser("simulate", help="generate a synthetic dataset")
    ps.add_argument("--model", choices=("A", "B", "C"), required=True)
    ps.add_argument("--n", type=int, default=500)
    ps.add_argument("--k", type=int, default=6)
    ps.add_argument("--t", type=int, default=30)
    ps.add_argument("--p", type=int, default=5)
    ps.add_argument("--snr", type=float, default=0.5)
    ps.add_argument("--error", choices=("normal", "t4"), default="normal")
    ps.add_argument("--tau", type=float, default=0.25)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--coef-seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.add_argument("--truth-out", default=None)
    ps.set_defaults(func=cmd_simulate)

    pn = sub.add_parser("bench", help="estimator comparison on simulated data")
    pn.add_argument("--models", default="A,C")
    pn.add_argument("--n-list", default="750")
    pn.add_argument("--snr-list", default="0.5")
    pn.add_argument("--reps", type=int, default=10)
    pn.add_argument("--estimators", default="uni,concave,ridge,en")
    pn.add_argument("--error", choices=("normal", "t4"), default="normal")
    pn.add_argument("--tau", type=float, default=0.25)
    pn.add_argument("--k", type=int, default=6)
    pn.add_argument("--t", type=int, default=30)
    pn.add_argument("--p", type=int, default=5)
    pn.add_argument("--seed", type=int, default=0)
    pn.add_argument("--grid-l1", default="0.1,10")
    pn.add_argument("--grid-l2", default="1,3,10")
    pn.add_argument("--en-lambdas", default="0.01,0.1,0.3,1")
    pn.add_argument("--en-alphas", default="0,0.5,1")
    pn.add_argument("--out", required=True)
    pn.add_argument("--summary-out", default=None)
    pn.add_argument("--timing", action="store_true",
                    help="record wall-clock runtimes (non-reproducible bytes)")
    pn.add_argument("--threads", type=int, default=None)
    _add_admm_flags(pn, rho_default=None)
    pn.set_defaults(func=cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
