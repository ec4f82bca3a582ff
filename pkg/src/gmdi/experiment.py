"""Replicated imputation experiments over a grid of (replicate, r, method)."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import configparser
from dataclasses import asdict, dataclass, field, replace
import json
import logging
from pathlib import Path
import platform
import time

import numpy as np

from . import __version__
from .data import DataMatrix
from .evaluation import baseline_mean_impute, evaluate_imputation, mean_marginal_cdf
from .io import (
    SimulationConfig,
    derive_seed,
    generate_simulation,
    inject_mcar,
    load_bundled,
    load_csv,
    save_csv,
    save_knots,
    save_trace,
    write_rows,
)
from .knots import select_knots
from .mixture import default_priors
from .samplers import SamplerConfig, impute, run_gmdi, run_tbmde
from .selection import CV_CONFIG, default_candidates, select_m

logger = logging.getLogger(__name__)

METHODS = ("gmdi", "tbmde", "mean")


@dataclass
class ExperimentConfig:
    dataset: str = "simulation"
    n: int = 100
    r_values: tuple[float, ...] = (0.1, 0.2, 0.4)
    replicates: int = 1
    methods: tuple[str, ...] = ("gmdi", "tbmde", "mean")
    seed: int = 0
    m: int = 20
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    cv: bool = False
    cv_candidates: tuple[int, ...] = ()
    cv_sampler: SamplerConfig = field(default_factory=lambda: CV_CONFIG)
    log_columns: tuple[str, ...] = ()
    workers: int = 1
    write_traces: bool = True

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        for r in self.r_values:
            if not 0 <= r < 1:
                raise ValueError(f"missing proportion {r} outside [0, 1)")


def _split(s, conv):
    return tuple(conv(v.strip()) for v in str(s).split(",") if v.strip())


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI file with ``[experiment]``, ``[sampler]`` and ``[cv]`` sections.

    ``overrides`` holds flat keys (``m``, ``burn_in``, ``seed``, ...) that win
    over the file.
    """
    cp = configparser.ConfigParser()
    if path is not None:
        if not cp.read(path):
            raise FileNotFoundError(path)
    ex = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    sm = dict(cp["sampler"]) if cp.has_section("sampler") else {}
    cv = dict(cp["cv"]) if cp.has_section("cv") else {}
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k in ("burn_in", "draws", "thin", "inner_theta_sweeps", "inner_lambda_sweeps"):
            sm[k] = v
        elif k in ("cv_burn_in", "cv_draws"):
            cv[k[3:]] = v
        elif k == "candidates":
            cv["candidates"] = v
        elif k == "cv":
            cv["enabled"] = v
        else:
            ex[k] = v
    sampler = SamplerConfig(**{k: int(v) for k, v in sm.items() if k != "m"})
    if "m" in sm:
        ex.setdefault("m", sm["m"])
    cv_sampler = replace(CV_CONFIG, **{k: int(cv[k]) for k in ("burn_in", "draws", "thin") if k in cv})
    return ExperimentConfig(
        dataset=str(ex.get("dataset", "simulation")),
        n=int(ex.get("n", 100)),
        r_values=_split(ex.get("r", "0.1,0.2,0.4"), float),
        replicates=int(ex.get("replicates", 1)),
        methods=_split(ex.get("methods", "gmdi,tbmde,mean"), str),
        seed=int(ex.get("seed", 0)),
        m=int(ex.get("m", 20)),
        sampler=sampler,
        cv=str(cv.get("enabled", "false")).lower() in ("1", "true", "yes", "on"),
        cv_candidates=_split(cv.get("candidates", ""), int),
        cv_sampler=cv_sampler,
        log_columns=_split(ex.get("log_columns", ""), str),
        workers=int(ex.get("workers", 1)),
        write_traces=str(ex.get("write_traces", "true")).lower() in ("1", "true", "yes", "on"),
    )


def _r_tag(r: float) -> str:
    return f"{r:g}"


def make_data(cfg: ExperimentConfig, replicate: int, r: float) -> DataMatrix:
    """Observed table (with truth) for one (replicate, r) cell; shared by all methods."""
    seed = derive_seed(cfg.seed, "data", replicate, float(r))
    if cfg.dataset == "simulation":
        _, observed = generate_simulation(SimulationConfig(cfg.n, r, seed, replicate))
        return observed
    if cfg.dataset in ("iris", "airquality"):
        base = load_bundled(cfg.dataset)
    else:
        base = load_csv(cfg.dataset, log_columns=cfg.log_columns, drop_incomplete=True)
    return inject_mcar(base, r, seed)


def _fit(method, data, m, sampler, seed):
    fit_data = data if method == "gmdi" else data.complete_cases()
    knots, _ = select_knots(fit_data, m)
    prior = default_priors(fit_data, m)
    runner = run_gmdi if method == "gmdi" else run_tbmde
    return knots, runner(fit_data, knots, prior, replace(sampler, seed=seed))


def run_one(cfg: ExperimentConfig, replicate: int, r: float, method: str, out_dir) -> dict:
    """Generate or mask data, optionally choose m, fit, impute and score one cell.

    Returns the tidy report rows and timing; per-run files go under
    ``out_dir/runs/<method>_r<r>_rep<replicate>``.
    """
    run_dir = Path(out_dir) / "runs" / f"{method}_r{_r_tag(r)}_rep{replicate}"
    data = make_data(cfg, replicate, r)
    t0 = time.perf_counter()
    m = cfg.m
    trace = knots = None
    if method == "mean":
        values = baseline_mean_impute(data)
        lower = upper = values
    else:
        if cfg.cv:
            cand = cfg.cv_candidates or tuple(default_candidates(data.n))
            cv_data = data if method == "gmdi" else data.complete_cases()
            res = select_m(cv_data, cand, cfg=cfg.cv_sampler, method=method,
                           seed=derive_seed(cfg.seed, "cv", replicate, float(r), method))
            if res.chosen_m is None:
                raise ValueError("no feasible knot count in CV grid")
            m = res.chosen_m
            if cfg.write_traces:
                write_rows(run_dir / "cv.csv", ["m", "fold", "ssse", "total_ssse", "chosen"], res.rows())
        knots, trace = _fit(method, data, m, cfg.sampler, derive_seed(cfg.seed, "chain", replicate, float(r), method))
        imp = impute(trace, data, knots)
        values, lower, upper = imp.mean, imp.lower, imp.upper
    elapsed = time.perf_counter() - t0
    report = evaluate_imputation(data, values, trace, knots)

    if cfg.write_traces:
        cells = data.missing_cells()
        truth = data.truth_at_missing() if cells.shape[0] else np.empty(0)
        write_rows(run_dir / "imputations.csv", ["row", "col", "variable", "mean", "q025", "q975", "truth"],
                   ([int(c[0]), int(c[1]), data.columns[c[1]], v, lo, hi, tv]
                    for c, v, lo, hi, tv in zip(cells, values, lower, upper, truth)))
        save_csv(data, run_dir / "observed.csv")
        if trace is not None:
            save_trace(trace, run_dir)
            save_knots(knots, data.columns, run_dir / "knots.csv")
            write_density_envelopes(trace, knots, data.columns, run_dir)
    rows = [[replicate, r, method, v.variable, v.mse, v.ks_d, v.ks_p] for v in report.variables]
    return {"key": (replicate, r, method), "rows": rows, "m": m, "seconds": elapsed}


def write_density_envelopes(trace, knots, columns, out_dir, grid_size: int = 401):
    for i, name in enumerate(columns):
        mm = mean_marginal_cdf(trace, knots, i)
        grid, mean, lo, hi, cdf = mm.envelope(mm.default_grid(grid_size))
        write_rows(Path(out_dir) / f"density_{name}.csv", ["x", "mean_density", "q025", "q975", "mean_cdf"],
                   zip(grid.tolist(), mean.tolist(), lo.tolist(), hi.tolist(), cdf.tolist()))


def _safe_run(args):
    cfg, replicate, r, method, out_dir = args
    try:
        return run_one(cfg, replicate, r, method, out_dir)
    except Exception as exc:  # recorded per run, never aborts the grid
        logger.exception("run %s failed", (replicate, r, method))
        return {"key": (replicate, r, method), "error": f"{type(exc).__name__}: {exc}"}


def summarize(rows):
    """Mean and SD (ddof=1) of MSE and KS p-value per (r, method, variable)."""
    groups: dict = {}
    for rep, r, method, var, mse_v, _, ksp in rows:
        g = groups.setdefault((r, method, var), ([], []))
        if mse_v is not None:
            g[0].append(mse_v)
        if ksp is not None:
            g[1].append(ksp)

    def ms(v):
        if not v:
            return None, None
        return float(np.mean(v)), (float(np.std(v, ddof=1)) if len(v) > 1 else None)

    for (r, method, var), (m_vals, p_vals) in sorted(groups.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]), kv[0][2])):
        yield (r, method, var, *ms(m_vals), *ms(p_vals), len(m_vals) or len(p_vals))


def run_experiment(cfg: ExperimentConfig, out_dir) -> int:
    """Run the whole grid and write ``report.csv``, ``summary.csv``,
    ``timings.csv``, ``failures.csv`` and ``manifest.json`` under ``out_dir``.

    Returns the number of failed runs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, rep, r, method, out_dir)
             for rep in range(cfg.replicates) for r in cfg.r_values for method in cfg.methods]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_safe_run, tasks))
    else:
        results = [_safe_run(t) for t in tasks]

    ok = [res for res in results if "error" not in res]
    failed = [res for res in results if "error" in res]
    rows = [row for res in ok for row in res["rows"]]
    write_rows(out_dir / "report.csv", ["replicate", "r", "method", "variable", "mse", "ks_d", "ks_p"], rows)
    write_rows(out_dir / "summary.csv",
               ["r", "method", "variable", "mse_mean", "mse_sd", "ks_p_mean", "ks_p_sd", "count"], summarize(rows))
    write_rows(out_dir / "timings.csv", ["replicate", "r", "method", "m", "wall_seconds"],
               ([*res["key"], res["m"], res["seconds"]] for res in ok))
    write_rows(out_dir / "failures.csv", ["replicate", "r", "method", "error"],
               ([*res["key"], res["error"]] for res in failed))
    manifest = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
        "seed_derivation": {
            "data": "SeedSequence(seed, spawn_key=(crc32('data'), replicate, round(r*1e9)))",
            "chain": "SeedSequence(seed, spawn_key=(crc32('chain'), replicate, round(r*1e9), crc32(method)))",
            "cv": "SeedSequence(seed, spawn_key=(crc32('cv'), replicate, round(r*1e9), crc32(method)))",
        },
        "versions": {"gmdi": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return len(failed)
