"""Command-line entry point: ``gmdi <subcommand> ...``."""

from __future__ import annotations

import argparse
import configparser
import logging
from pathlib import Path
import sys

import numpy as np

from .evaluation import evaluate_run
from .experiment import parse_config, run_experiment, write_density_envelopes
from .io import (
    NA_TOKENS,
    SimulationConfig,
    derive_seed,
    generate_simulation,
    inject_mcar,
    load_csv,
    load_knots,
    load_trace,
    load_truth,
    save_csv,
    save_knots,
    save_trace,
    write_rows,
)
from .knots import select_knots
from .mixture import default_priors
from .samplers import SamplerConfig, impute, run_gmdi, run_tbmde
from .selection import CV_CONFIG, default_candidates, select_m

DEFAULTS = {
    "seed": 0, "m": 20, "burn_in": None, "draws": None, "thin": 1, "workers": 1,
    "out_dir": ".", "na_token": None, "log_columns": "", "n": 100, "r": 0.2, "replicate": 0,
    "method": "gmdi", "candidates": "", "grid_size": 401,
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file; flags given on the command line win")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--na-token", action="append", help="token marking a missing cell (repeatable)")
    p.add_argument("--log-columns", help="comma-separated columns to log-transform")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _chain(p: argparse.ArgumentParser):
    p.add_argument("--m", type=int, help="number of knots")
    p.add_argument("--burn-in", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--method", choices=("gmdi", "tbmde"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmdi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write truth.csv and observed.csv for the (X, Y) simulation")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--replicate", type=int)

    p = sub.add_parser("inject", help="mask cells of a CSV completely at random")
    _common(p)
    p.add_argument("input")
    p.add_argument("--r", type=float)

    p = sub.add_parser("cv", help="choose the number of knots by 5-fold cross-validation")
    _common(p)
    _chain(p)
    p.add_argument("data")
    p.add_argument("--candidates", help="comma-separated knot counts")

    p = sub.add_parser("fit", help="run a sampler and write trace.csv, imputed_cells.csv, knots.csv")
    _common(p)
    _chain(p)
    p.add_argument("data")

    p = sub.add_parser("impute", help="posterior mean and 95%% interval per missing cell")
    _common(p)
    p.add_argument("data")
    p.add_argument("--fit-dir", required=True)

    p = sub.add_parser("evaluate", help="MSE against truth and KS fit per variable")
    _common(p)
    p.add_argument("data")
    p.add_argument("--truth", required=True)
    p.add_argument("--fit-dir", required=True)

    p = sub.add_parser("density", help="mean marginal density with 2.5%%/97.5%% envelope per variable")
    _common(p)
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--grid-size", type=int)

    p = sub.add_parser("experiment", help="run a replicated (replicate, r, method) grid")
    _common(p)
    _chain(p)
    p.add_argument("--dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--r", help="comma-separated missing proportions")
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods")
    p.add_argument("--cv", action="store_true", default=None)
    p.add_argument("--candidates")
    return parser


def _resolve(args) -> dict:
    """Merge flags over the config file over defaults into one flat dict."""
    conf = {}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise FileNotFoundError(args.config)
        for section in cp.sections():
            for k, v in cp[section].items():
                conf[k.replace("-", "_")] = v
    out = dict(DEFAULTS)
    for k, v in conf.items():
        if k in out:
            out[k] = type(DEFAULTS[k])(v) if isinstance(DEFAULTS[k], (int, float)) and v != "" else v
    for k, v in vars(args).items():
        if v is not None:
            out[k] = v
    if isinstance(out["na_token"], str):
        out["na_token"] = [out["na_token"]]
    out["na_token"] = tuple(out["na_token"] or NA_TOKENS)
    out["log_columns"] = tuple(c.strip() for c in str(out["log_columns"] or "").split(",") if c.strip())
    return out


def _sampler(o, base=SamplerConfig()) -> SamplerConfig:
    return SamplerConfig(
        burn_in=int(o["burn_in"]) if o["burn_in"] is not None else base.burn_in,
        draws=int(o["draws"]) if o["draws"] is not None else base.draws,
        thin=int(o["thin"]),
        seed=int(o["seed"]),
    )


def _load(o, path):
    return load_csv(path, na_tokens=o["na_token"], log_columns=o["log_columns"])


def cmd_simulate(o):
    truth, observed = generate_simulation(SimulationConfig(int(o["n"]), float(o["r"]), int(o["seed"]), int(o["replicate"])))
    out = Path(o["out_dir"])
    save_csv(truth, out / "truth.csv")
    save_csv(observed, out / "observed.csv")
    print(f"wrote {out / 'truth.csv'} and {out / 'observed.csv'} ({observed.n_missing} missing cells)")


def cmd_inject(o):
    data = load_csv(o["input"], na_tokens=o["na_token"], log_columns=o["log_columns"], drop_incomplete=True)
    masked = inject_mcar(data, float(o["r"]), derive_seed(int(o["seed"]), "inject"))
    out = Path(o["out_dir"])
    save_csv(masked, out / "truth.csv", values=masked.truth)
    save_csv(masked, out / "observed.csv")
    print(f"wrote {out / 'observed.csv'} ({masked.n} rows, {masked.n_missing} missing cells)")


def cmd_cv(o):
    data = _load(o, o["data"])
    cand = [int(c) for c in str(o["candidates"]).split(",") if c.strip()] or default_candidates(data.n)
    res = select_m(data, cand, cfg=_sampler(o, CV_CONFIG), seed=int(o["seed"]), method=o["method"])
    write_rows(Path(o["out_dir"]) / "cv.csv", ["m", "fold", "ssse", "total_ssse", "chosen"], res.rows())
    if res.chosen_m is None:
        print("no feasible candidate")
        return 1
    print(f"chosen m={res.chosen_m} total_ssse={res.total(res.chosen_m)!r} "
          f"infeasible={sorted(res.infeasible) or 'none'}")
    return 0


def cmd_fit(o):
    data = _load(o, o["data"])
    m = int(o["m"])
    fit_data = data if o["method"] == "gmdi" else data.complete_cases()
    knots, report = select_knots(fit_data, m)
    for w in report.warnings:
        logging.warning(w)
    prior = default_priors(fit_data, m)
    runner = run_gmdi if o["method"] == "gmdi" else run_tbmde
    trace = runner(fit_data, knots, prior, _sampler(o))
    out = Path(o["out_dir"])
    save_trace(trace, out)
    save_knots(knots, data.columns, out / "knots.csv")
    print(f"wrote {len(trace)} draws to {out / 'trace.csv'}")


def cmd_impute(o):
    data = _load(o, o["data"])
    trace, knots = load_trace(o["fit_dir"]), load_knots(Path(o["fit_dir"]) / "knots.csv")
    imp = impute(trace, data, knots)
    write_rows(Path(o["out_dir"]) / "imputations.csv", ["row", "col", "variable", "mean", "q025", "q975"],
               ([int(r), int(c), data.columns[c], v, lo, hi]
                for (r, c), v, lo, hi in zip(imp.cells, imp.mean, imp.lower, imp.upper)))
    print(f"imputed {imp.cells.shape[0]} cells")


def cmd_evaluate(o):
    data = load_truth(o["data"], o["truth"], na_tokens=o["na_token"], log_columns=o["log_columns"])
    trace, knots = load_trace(o["fit_dir"]), load_knots(Path(o["fit_dir"]) / "knots.csv")
    report = evaluate_run(data, trace, knots)
    write_rows(Path(o["out_dir"]) / "eval.csv", ["variable", "mse", "ks_d", "ks_p", "n_obs", "n_missing"], report.rows())
    for v in report.variables:
        print(f"{v.variable}: mse={v.mse} ks_d={v.ks_d:.4f} ks_p={v.ks_p:.4f}")


def cmd_density(o):
    fit_dir = Path(o["fit_dir"])
    trace = load_trace(fit_dir)
    with open(fit_dir / "knots.csv") as fh:
        columns = fh.readline().strip().split(",")
    knots = load_knots(fit_dir / "knots.csv")
    write_density_envelopes(trace, knots, columns, o["out_dir"], int(o["grid_size"]))
    print(f"wrote density envelopes for {', '.join(columns)}")


def cmd_experiment(o, args):
    overrides = {
        "seed": args.seed, "m": args.m, "burn_in": args.burn_in, "draws": args.draws, "thin": args.thin,
        "workers": args.workers, "dataset": args.dataset, "n": args.n, "r": args.r,
        "replicates": args.replicates, "methods": args.methods, "cv": args.cv, "candidates": args.candidates,
        "log_columns": args.log_columns,
    }
    cfg = parse_config(args.config, overrides)
    failed = run_experiment(cfg, o["out_dir"])
    print(f"experiment finished with {failed} failed run(s); report in {Path(o['out_dir']) / 'report.csv'}")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    o = _resolve(args)
    np.seterr(under="ignore")
    try:
        if args.command == "experiment":
            return cmd_experiment(o, args)
        handler = globals()[f"cmd_{args.command}"]
        return handler(o) or 0
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
