"""Imputation error, marginal goodness of fit, and a column-mean baseline."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import ndtr

from .data import DataMatrix
from .mixture import KnotGrid, LOG_SQRT_2PI
from .samplers import PosteriorTrace, impute


def mse(imputed, truth, columns=None):
    """Mean squared imputation error, overall and per variable.

    ``columns`` gives each cell's variable index. Returns ``(overall, per_var)``
    where ``per_var`` maps variable index to its MSE (variables with no cells
    are absent).
    """
    imputed = np.asarray(imputed, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if imputed.shape != truth.shape:
        raise ValueError("imputed and true cell sets differ in size")
    if imputed.size == 0:
        raise ValueError("no missing cells to score")
    sq = (imputed - truth) ** 2
    per_var = {}
    if columns is not None:
        columns = np.asarray(columns, dtype=int).ravel()
        for i in np.unique(columns):
            per_var[int(i)] = float(sq[columns == i].mean())
    return float(sq.mean()), per_var


class MeanMarginal:
    """Marginal of one variable averaged over the draws of a trace.

    Calling the object evaluates the averaged CDF.
    """

    def __init__(self, trace: PosteriorTrace, knots: KnotGrid, i: int):
        if len(trace) == 0:
            raise ValueError("empty trace")
        self.theta = trace.theta
        self.lam = trace.lam[:, i]
        self.s = knots.knots[:, i]

    def _z(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., None, None] - self.s) / self.lam[:, None]  # (..., L, m)

    def per_draw_cdf(self, x):
        return np.einsum("...lm,lm->...l", ndtr(self._z(x)), self.theta)

    def per_draw_density(self, x):
        z = self._z(x)
        return np.einsum("...lm,lm->...l", np.exp(-0.5 * z * z - LOG_SQRT_2PI), self.theta) / self.lam

    def __call__(self, x):
        return np.clip(self.per_draw_cdf(x).mean(axis=-1), 0.0, 1.0)

    def density(self, x):
        return self.per_draw_density(x).mean(axis=-1)

    def default_grid(self, size: int = 401) -> np.ndarray:
        pad = 4.0 * self.lam.max()
        return np.linspace(self.s.min() - pad, self.s.max() + pad, size)

    def envelope(self, grid=None):
        """(grid, mean density, 2.5% and 97.5% per-draw quantiles, mean CDF)."""
        grid = self.default_grid() if grid is None else np.asarray(grid, dtype=float).ravel()
        dens = np.concatenate([self.per_draw_density(c) for c in np.array_split(grid, -(-grid.size // 32))])
        lo, hi = np.percentile(dens, [2.5, 97.5], axis=-1)
        return grid, dens.mean(axis=-1), lo, hi, self(grid)


def mean_marginal_cdf(trace: PosteriorTrace, knots: KnotGrid, i: int) -> MeanMarginal:
    return MeanMarginal(trace, knots, i)


def kolmogorov_sf(t: float, tol: float = 1e-12) -> float:
    """P(K > t) for the limiting Kolmogorov distribution.

    Uses the alternating series 2 sum (-1)^(k-1) exp(-2 k^2 t^2) for t >= 1 and
    the Jacobi theta form of the CDF below that, where the first series
    converges slowly. Both stop once a term drops below ``tol``.
    """
    if t <= 0:
        return 1.0
    if t >= 1.0:
        total, k = 0.0, 1
        while True:
            term = math.exp(-2.0 * k * k * t * t)
            total += term if k % 2 else -term
            if term < tol:
                break
            k += 1
        return min(1.0, max(0.0, 2.0 * total))
    total, k = 0.0, 1
    c = math.pi ** 2 / (8.0 * t * t)
    while True:
        term = math.exp(-((2 * k - 1) ** 2) * c)
        total += term
        if term < tol:
            break
        k += 1
    return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / t * total))


def ks_test(sample, cdf) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if n < 1:
        raise ValueError("empty sample")
    f = np.asarray(cdf(x), dtype=float)
    j = np.arange(1, n + 1)
    d = float(max(np.max(j / n - f), np.max(f - (j - 1) / n), 0.0))
    return d, kolmogorov_sf(math.sqrt(n) * d)


def baseline_mean_impute(data: DataMatrix) -> np.ndarray:
    """Fill each missing cell with its column's observed mean; values in ``missing_cells()`` order."""
    cells = data.missing_cells()
    if not cells.shape[0]:
        return np.empty(0)
    means = np.full(data.p, np.nan)
    for i in np.unique(cells[:, 1]):
        col = data.observed_column(i)
        if col.size == 0:
            raise ValueError(f"column {data.columns[i]!r} has no observed values")
        means[i] = col.mean()
    return means[cells[:, 1]]


@dataclass
class VariableReport:
    variable: str
    mse: float | None
    ks_d: float | None
    ks_p: float | None
    n_obs: int
    n_missing: int


@dataclass
class EvalReport:
    variables: list[VariableReport]
    overall_mse: float | None

    def rows(self):
        for v in self.variables:
            yield v.variable, v.mse, v.ks_d, v.ks_p, v.n_obs, v.n_missing


def evaluate_imputation(data: DataMatrix, values, trace: PosteriorTrace | None = None,
                        knots: KnotGrid | None = None) -> EvalReport:
    """Per-variable MSE of ``values`` (in ``missing_cells()`` order) and, given a
    trace, KS fit of each variable's observed values to its mean marginal."""
    cells = data.missing_cells()
    overall, per_var = (None, {})
    if cells.shape[0]:
        overall, per_var = mse(values, data.truth_at_missing(), cells[:, 1])
    out = []
    for i, name in enumerate(data.columns):
        obs = data.observed_column(i)
        d = p = None
        if trace is not None:
            d, p = ks_test(obs, mean_marginal_cdf(trace, knots, i))
        out.append(VariableReport(name, per_var.get(i), d, p, obs.size, int((~data.mask[:, i]).sum())))
    return EvalReport(out, overall)


def evaluate_run(data: DataMatrix, trace: PosteriorTrace, knots: KnotGrid) -> EvalReport:
    """Score posterior-mean imputations against ``data.truth`` and KS-test each
    variable's observed values against the trace's mean marginal CDF."""
    return evaluate_imputation(data, impute(trace, data, knots).mean, trace, knots)
