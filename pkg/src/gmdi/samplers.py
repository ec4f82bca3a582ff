"""Gibbs samplers for the knot mixture, with and without missing data.

Random numbers are drawn in a fixed order so that a seeded chain is exactly
reproducible. Per outer iteration:

1. (GMDI only) one uniform per incomplete row, rows ascending, then one
   standard normal per missing cell in row-major order.
2. ``inner_theta_sweeps`` times: n uniforms for the assignments, then m gamma
   draws for the weights.
3. ``inner_lambda_sweeps`` times: n uniforms for the assignments, then p gamma
   draws for the squared bandwidths.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from .data import DataMatrix
from .mixture import (
    FarObservationError,
    KnotGrid,
    MixtureParams,
    PriorSpec,
    log_kernels,
    log_responsibilities,
    logsumexp_rows,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    burn_in: int = 500
    draws: int = 2000
    thin: int = 1
    inner_theta_sweeps: int = 1
    inner_lambda_sweeps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0 or self.draws < 1 or self.thin < 1:
            raise ValueError("need burn_in >= 0, draws >= 1, thin >= 1")
        if self.inner_theta_sweeps < 1 or self.inner_lambda_sweeps < 1:
            raise ValueError("inner sweeps must be >= 1")

    @property
    def total_iterations(self) -> int:
        return self.burn_in + self.draws * self.thin


@dataclass(eq=False)
class PosteriorTrace:
    """Retained draws of a chain.

    ``theta`` is ``(L, m)``, ``lambda2`` is ``(L, p)``, ``loglik`` holds the
    observed-data log likelihood at each draw and ``iterations`` the 1-based
    outer iteration each draw came from. For GMDI, ``imputed[l, c]`` is the
    value drawn for missing cell ``missing_cells[c] = (row, col)``.
    """

    theta: np.ndarray
    lambda2: np.ndarray
    loglik: np.ndarray
    iterations: np.ndarray
    missing_cells: np.ndarray
    imputed: np.ndarray

    def __len__(self) -> int:
        return self.theta.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[1]

    @property
    def p(self) -> int:
        return self.lambda2.shape[1]

    def params(self, l: int) -> MixtureParams:
        return MixtureParams.from_lambda2(self.theta[l], self.lambda2[l])

    @property
    def lam(self) -> np.ndarray:
        return np.sqrt(self.lambda2)

    def identical_to(self, other: "PosteriorTrace") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("theta", "lambda2", "loglik", "iterations", "missing_cells", "imputed")
        )


def _categorical(log_probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws, one per row of normalized ``log_probs``."""
    cdf = np.cumsum(np.exp(log_probs), axis=1)
    k = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(k, log_probs.shape[1] - 1)


def sample_assignments(x, knots: KnotGrid, params: MixtureParams, rng) -> np.ndarray:
    """Draw a 0-based component label for every complete row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    logw, _ = log_responsibilities(x, np.ones(x.shape, bool), knots, params)
    return _categorical(logw, rng.random(x.shape[0]))


def sample_theta(assignments, prior: PriorSpec, rng) -> np.ndarray:
    """Draw weights from Dirichlet(counts + alpha).

    Gamma variates are generated in log space as log G(a + 1) + log(U) / a so
    that tiny concentrations never collapse the whole vector to zero.
    """
    counts = np.bincount(np.asarray(assignments, dtype=int), minlength=prior.m)
    shape = counts + prior.alpha
    log_g = np.log(rng.standard_gamma(shape + 1.0)) + np.log(rng.random(prior.m)) / shape
    theta = np.exp(log_g - log_g.max())
    return theta / theta.sum()


def sample_lambda2(x, assignments, knots: KnotGrid, prior: PriorSpec, rng) -> np.ndarray:
    """Draw squared bandwidths from InvGamma(n/2 + a_i, SS_i/2 + b_i).

    ``SS_i`` is the sum of squared residuals of coordinate ``i`` about each
    row's assigned knot. With no rows this samples the prior.
    """
    x = np.asarray(x, dtype=float).reshape(-1, prior.p)
    resid = x - knots.knots[np.asarray(assignments, dtype=int)]
    shape = x.shape[0] / 2.0 + prior.a
    scale = 0.5 * (resid ** 2).sum(axis=0) + prior.b
    return scale / rng.standard_gamma(shape)


def observed_loglik(data: DataMatrix, knots: KnotGrid, params: MixtureParams) -> float:
    """Log likelihood of the observed cells, missing coordinates integrated out."""
    with np.errstate(divide="ignore"):
        logits = np.log(params.theta) + log_kernels(data.filled(), data.mask, knots, params.lam)
    return float(logsumexp_rows(logits).sum())


def _gibbs_step(x, knots, prior, theta, lambda2, cfg, rng):
    for _ in range(cfg.inner_theta_sweeps):
        k = sample_assignments(x, knots, MixtureParams.from_lambda2(theta, lambda2), rng)
        theta = sample_theta(k, prior, rng)
    for _ in range(cfg.inner_lambda_sweeps):
        k = sample_assignments(x, knots, MixtureParams.from_lambda2(theta, lambda2), rng)
        lambda2 = sample_lambda2(x, k, knots, prior, rng)
    return theta, lambda2


def _check_shapes(data: DataMatrix, knots: KnotGrid, prior: PriorSpec):
    if knots.p != data.p or prior.p != data.p:
        raise ValueError("data, knots and prior disagree on the number of dimensions")
    if prior.m != knots.m:
        raise ValueError("prior and knots disagree on the number of components")


def _run(data, knots, prior, cfg, impute_missing):
    _check_shapes(data, knots, prior)
    rng = np.random.default_rng(cfg.seed)
    cells = data.missing_cells() if impute_missing else np.empty((0, 2), dtype=int)
    if impute_missing:
        x = data.filled(data.column_means())
    else:
        data = data.complete_cases()
        x = data.filled()
    incomplete = np.flatnonzero(~data.mask.all(axis=1)) if impute_missing else np.empty(0, int)
    miss_mask = ~data.mask

    theta = np.full(knots.m, 1.0 / knots.m)
    lambda2 = prior.lambda2_prior_mean()
    L = cfg.draws
    out_theta = np.empty((L, knots.m))
    out_lambda2 = np.empty((L, knots.p))
    out_loglik = np.empty(L)
    out_iter = np.empty(L, dtype=int)
    out_imputed = np.empty((L, cells.shape[0]))

    kept = 0
    for it in range(1, cfg.total_iterations + 1):
        if incomplete.size:
            params = MixtureParams.from_lambda2(theta, lambda2)
            sub = data.mask[incomplete]
            try:
                logw, _ = log_responsibilities(x[incomplete], sub, knots, params)
            except FarObservationError as exc:
                raise FarObservationError(f"{exc} among rows {incomplete.tolist()}") from None
            comp = _categorical(logw, rng.random(incomplete.size))
            rows, cols = np.nonzero(miss_mask[incomplete])
            noise = rng.standard_normal(rows.size)
            x[incomplete[rows], cols] = knots.knots[comp[rows], cols] + np.sqrt(lambda2[cols]) * noise
        theta, lambda2 = _gibbs_step(x, knots, prior, theta, lambda2, cfg, rng)
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            out_theta[kept] = theta
            out_lambda2[kept] = lambda2
            out_loglik[kept] = observed_loglik(data, knots, MixtureParams.from_lambda2(theta, lambda2))
            out_iter[kept] = it
            out_imputed[kept] = x[cells[:, 0], cells[:, 1]]
            kept += 1
    return PosteriorTrace(out_theta, out_lambda2, out_loglik, out_iter, cells, out_imputed)


def run_tbmde(data: DataMatrix, knots: KnotGrid, prior: PriorSpec, cfg: SamplerConfig) -> PosteriorTrace:
    """Complete-case Gibbs sampler; rows with any missing cell are ignored."""
    if data.complete_rows().size == 0:
        raise ValueError("TBMDE requires complete cases")
    return _run(data, knots, prior, cfg, impute_missing=False)


def run_gmdi(data: DataMatrix, knots: KnotGrid, prior: PriorSpec, cfg: SamplerConfig) -> PosteriorTrace:
    """Gibbs sampler that alternates imputing missing cells and updating (theta, lambda^2).

    Missing cells start at their column's observed mean. Each iteration draws
    every missing cell from its mixture conditional given the row's observed
    values and the current (theta, lambda), then runs one TBMDE step on the
    completed data. Returns the trace with the imputed draws attached.
    """
    if (~data.mask).all(axis=1).any():
        raise ValueError("rows with no observed values must be removed before fitting")
    return _run(data, knots, prior, cfg, impute_missing=True)


@dataclass
class Imputation:
    """Posterior summary per missing cell: mean of the per-draw conditional
    expectations and their 2.5% / 97.5% quantiles."""

    cells: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def filled(self, data: DataMatrix) -> np.ndarray:
        out = data.filled()
        out[self.cells[:, 0], self.cells[:, 1]] = self.mean
        return out


def per_draw_expectations(trace: PosteriorTrace, data: DataMatrix, knots: KnotGrid) -> np.ndarray:
    """Conditional expectation of each missing cell under every draw, shape ``(L, cells)``."""
    cells = data.missing_cells()
    out = np.empty((len(trace), cells.shape[0]))
    if not cells.shape[0]:
        return out
    rows = np.unique(cells[:, 0])
    x = data.filled()[rows]
    obs = data.mask[rows]
    pos = np.searchsorted(rows, cells[:, 0])
    for l in range(len(trace)):
        logw, _ = log_responsibilities(x, obs, knots, trace.params(l))
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        out[l] = np.einsum("ck,kc->c", w[pos], knots.knots[:, cells[:, 1]])
    return out


def impute(trace: PosteriorTrace, data: DataMatrix, knots: KnotGrid) -> Imputation:
    if len(trace) == 0:
        raise ValueError("empty trace")
    per_draw = per_draw_expectations(trace, data, knots)
    cells = data.missing_cells()
    if not cells.shape[0]:
        empty = np.empty(0)
        return Imputation(cells, empty, empty.copy(), empty.copy())
    lower, upper = np.percentile(per_draw, [2.5, 97.5], axis=0)
    return Imputation(cells, per_draw.mean(axis=0), lower, upper)
