"""Data ingestion, simulated data, MCAR masking and CSV formats."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
import logging
from pathlib import Path
import zlib

import numpy as np

from .data import DataMatrix
from .mixture import KnotGrid
from .samplers import PosteriorTrace

logger = logging.getLogger(__name__)

NA_TOKENS = ("NA", "")
BUNDLED = {"iris": ("iris.csv", ()), "airquality": ("airquality.csv", ("Ozone", "Solar.R", "Wind", "Temp"))}


def derive_seed(master: int, *key) -> int:
    """Seed for the stream identified by ``key`` under ``master``.

    Keys may mix ints, floats and strings; floats are keyed by their value to
    1e-9 and strings by CRC32, so a stream never depends on its position in a grid.
    """
    parts = []
    for k in key:
        if isinstance(k, str):
            parts.append(zlib.crc32(k.encode()))
        elif isinstance(k, float):
            parts.append(int(round(k * 1e9)))
        else:
            parts.append(int(k))
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(parts))
    return int(ss.generate_state(1, np.uint64)[0])


def fmt(v) -> str:
    """Round-trip exact text for a float; blank for None/NaN."""
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader if row]


# -- data tables ----------------------------------------------------------

def load_csv(path, na_tokens=NA_TOKENS, log_columns=(), drop_incomplete=False) -> DataMatrix:
    """Read a header-first delimited file into a masked table.

    Cells equal to any of ``na_tokens`` (after stripping) are missing. Columns
    named in ``log_columns`` (names or 0-based indices) are log-transformed.
    Rows left with no observed value are dropped and logged.
    """
    header, rows = read_rows(path)
    header = [h.strip() for h in header]
    p = len(header)
    na = {t.strip() for t in na_tokens}
    values = np.full((len(rows), p), np.nan)
    mask = np.zeros((len(rows), p), dtype=bool)
    for t, row in enumerate(rows):
        if len(row) != p:
            raise ValueError(f"{path}: line {t + 2} has {len(row)} fields, expected {p}")
        for i, cell in enumerate(row):
            cell = cell.strip()
            if cell in na:
                continue
            try:
                values[t, i] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: unparseable value {cell!r} at line {t + 2}, column {header[i]!r}") from None
            if not np.isfinite(values[t, i]):
                raise ValueError(f"{path}: non-finite value at line {t + 2}, column {header[i]!r}")
            mask[t, i] = True
    for c in log_columns:
        i = header.index(c) if isinstance(c, str) and c in header else int(c)
        bad = np.flatnonzero(mask[:, i] & (values[:, i] <= 0))
        if bad.size:
            raise ValueError(f"{path}: cannot log nonpositive value at line {bad[0] + 2}, column {header[i]!r}")
        values[mask[:, i], i] = np.log(values[mask[:, i], i])
    data = DataMatrix(values, mask, tuple(header))
    if drop_incomplete:
        n0 = data.n
        data = data.complete_cases()
        if data.n < n0:
            logger.info("dropped %d incomplete rows", n0 - data.n)
        data = DataMatrix(data.filled(np.nan), data.mask, data.columns)
    return data.drop_empty_rows()


def save_csv(data: DataMatrix, path, values=None, na_token="NA"):
    """Write a table with missing cells as ``na_token``; ``values`` overrides the observed values."""
    vals = data.filled(np.nan) if values is None else np.asarray(values, dtype=float)
    mask = data.mask if values is None else np.ones(data.shape, bool)
    write_rows(path, data.columns,
               ([fmt(v) if ok else na_token for v, ok in zip(r, mr)] for r, mr in zip(vals, mask)))


def load_bundled(name: str) -> DataMatrix:
    """Complete cases of a bundled dataset (``iris`` or ``airquality``, the latter log-transformed)."""
    fname, logcols = BUNDLED[name]
    with resources.as_file(resources.files("gmdi.datasets") / fname) as path:
        return load_csv(path, log_columns=logcols, drop_incomplete=True)


def load_truth(observed_path, truth_path, **kwargs) -> DataMatrix:
    observed = load_csv(observed_path, **kwargs)
    truth = load_csv(truth_path, **kwargs)
    if truth.shape != observed.shape or not truth.is_complete():
        raise ValueError("truth file must be a complete table aligned with the observed file")
    return observed.with_truth(truth.filled())


# -- simulation and masking ------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    n: int = 100
    r: float = 0.2
    seed: int = 0
    replicate: int = 0

    def __post_init__(self):
        if not 0 <= self.r < 1:
            raise ValueError("missing proportion must be in [0, 1)")
        if self.n < 10:
            raise ValueError("n must be at least 10")


def regression_mean(x):
    return np.exp(x / 6.0) - x + np.log(x ** 4 + 1.0)


def generate_simulation(cfg: SimulationConfig) -> tuple[DataMatrix, DataMatrix]:
    """Draw (X, Y) pairs and mask floor(r n) of each.

    X ~ N(0, 2^2) and Y | X ~ N(exp(X/6) - X + log(X^4 + 1), (X^2 exp(-|X|))^2).
    Y is only masked in rows whose X stays observed, so no row loses both.
    Returns (complete truth, observed data with truth attached).
    """
    rng = np.random.default_rng(derive_seed(cfg.seed, cfg.replicate))
    x = rng.normal(0.0, 2.0, cfg.n)
    y = regression_mean(x) + x ** 2 * np.exp(-np.abs(x)) * rng.standard_normal(cfg.n)
    values = np.column_stack([x, y])
    k = int(np.floor(cfg.r * cfg.n))
    if k > cfg.n - k:
        raise ValueError(f"r={cfg.r} too large: cannot mask {k} Y values among {cfg.n - k} rows with X observed")
    mask = np.ones((cfg.n, 2), dtype=bool)
    x_miss = rng.choice(cfg.n, size=k, replace=False)
    mask[x_miss, 0] = False
    y_miss = rng.choice(np.flatnonzero(mask[:, 0]), size=k, replace=False)
    mask[y_miss, 1] = False
    truth = DataMatrix(values, np.ones_like(mask), ("x", "y"))
    return truth, DataMatrix(values, mask, ("x", "y"), values)


def inject_mcar(data: DataMatrix, r: float, seed: int) -> DataMatrix:
    """Independently per column, hide floor(r n) uniformly chosen cells.

    Rows left fully missing are removed. The returned table carries the
    original values as ``truth``.
    """
    if not 0 <= r < 1:
        raise ValueError("missing proportion must be in [0, 1)")
    if not data.is_complete():
        raise ValueError("inject_mcar needs a complete table")
    rng = np.random.default_rng(seed)
    k = int(np.floor(r * data.n))
    mask = np.ones(data.shape, dtype=bool)
    for i in range(data.p):
        mask[rng.choice(data.n, size=k, replace=False), i] = False
    values = data.filled()
    return DataMatrix(values, mask, data.columns, values, data.row_ids).drop_empty_rows()


# -- fitted-model files ----------------------------------------------------

def save_knots(knots: KnotGrid, columns, path):
    write_rows(path, columns, knots.knots.tolist())


def load_knots(path) -> KnotGrid:
    _, rows = read_rows(path)
    return KnotGrid(np.array(rows, dtype=float))


def save_trace(trace: PosteriorTrace, out_dir, columns=None):
    """``trace.csv`` (iter, theta_*, lambda2_*, loglik) and ``imputed_cells.csv`` (iter, row, col, value)."""
    out_dir = Path(out_dir)
    header = (["iter"] + [f"theta_{k + 1}" for k in range(trace.m)]
              + [f"lambda2_{i + 1}" for i in range(trace.p)] + ["loglik"])
    write_rows(out_dir / "trace.csv", header,
               ([it, *th, *lam, ll] for it, th, lam, ll in
                zip(trace.iterations, trace.theta.tolist(), trace.lambda2.tolist(), trace.loglik.tolist())))
    cells = trace.missing_cells
    write_rows(out_dir / "imputed_cells.csv", ["iter", "row", "col", "value"],
               ([it, int(r), int(c), float(v)]
                for it, vals in zip(trace.iterations, trace.imputed)
                for (r, c), v in zip(cells, vals)))


def load_trace(out_dir) -> PosteriorTrace:
    out_dir = Path(out_dir)
    header, rows = read_rows(out_dir / "trace.csv")
    arr = np.array(rows, dtype=float)
    m = sum(h.startswith("theta_") for h in header)
    p = sum(h.startswith("lambda2_") for h in header)
    iters = arr[:, 0].astype(int)
    theta, lambda2, loglik = arr[:, 1:1 + m], arr[:, 1 + m:1 + m + p], arr[:, -1]
    cells = np.empty((0, 2), dtype=int)
    imputed = np.empty((len(iters), 0))
    cell_file = out_dir / "imputed_cells.csv"
    if cell_file.exists():
        _, crow = read_rows(cell_file)
        if crow:
            c = np.array(crow, dtype=float)
            k = len(crow) // len(iters)
            cells = c[:k, 1:3].astype(int)
            imputed = c[:, 3].reshape(len(iters), k)
    return PosteriorTrace(theta, lambda2, loglik, iters, cells, imputed)
