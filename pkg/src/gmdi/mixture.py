"""Mixture of tensor-product Gaussian kernels placed at fixed knots.

The density is

    f(x | theta, lambda) = sum_k theta_k prod_i phi((x_i - s_ik) / lambda_i) / lambda_i

with one shared bandwidth per dimension. All responsibility computations run
in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class FarObservationError(ValueError):
    """Every mixture component gives zero likelihood to an observation."""


@dataclass(frozen=True, eq=False)
class KnotGrid:
    """``m`` knot vectors stored as rows of an ``(m, p)`` array."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        if knots.ndim == 1:
            knots = knots[:, None]
        if knots.ndim != 2 or knots.shape[0] < 1 or knots.shape[1] < 1:
            raise ValueError(f"knots must be a non-empty (m, p) array, got shape {knots.shape}")
        if not np.all(np.isfinite(knots)):
            raise ValueError("knots must be finite")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def m(self) -> int:
        return self.knots.shape[0]

    @property
    def p(self) -> int:
        return self.knots.shape[1]


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Mixture weights ``theta`` (length m) and bandwidths ``lam`` (length p)."""

    theta: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        lam = np.array(self.lam, dtype=float).ravel()
        if np.any(theta < 0) or abs(theta.sum() - 1.0) > 1e-12:
            raise ValueError("theta must be a probability vector")
        if not np.all(lam > 0) or not np.all(np.isfinite(lam)):
            raise ValueError("bandwidths must be positive and finite")
        theta.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def from_lambda2(cls, theta, lambda2) -> "MixtureParams":
        return cls(theta, np.sqrt(np.asarray(lambda2, dtype=float)))

    @property
    def lambda2(self) -> np.ndarray:
        return self.lam ** 2


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Dirichlet concentrations ``alpha`` and inverse-gamma (shape ``a``, scale ``b``) per dimension."""

    alpha: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "a", "b"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            if arr.size == 0 or not np.all(arr > 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"prior {name} must be strictly positive")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have one entry per dimension")

    @property
    def m(self) -> int:
        return self.alpha.size

    @property
    def p(self) -> int:
        return self.a.size

    def lambda2_prior_mean(self) -> np.ndarray:
        return self.b / (self.a - 1.0)


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp over the last axis.

    Same result as ``scipy.special.logsumexp(a, axis=-1)`` without its
    per-call overhead, which dominates inside the samplers. Rows that are
    entirely ``-inf`` give ``-inf``.
    """
    top = a.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - top).sum(axis=-1)) + top[..., 0]


def _check(knots: KnotGrid, params: MixtureParams):
    if params.theta.size != knots.m:
        raise ValueError(f"theta has {params.theta.size} weights for {knots.m} knots")
    if params.lam.size != knots.p:
        raise ValueError(f"lambda has {params.lam.size} entries for {knots.p} dimensions")


def _as_mask(missing, p: int) -> np.ndarray:
    """Boolean missing-mask of length p from an index collection or boolean array."""
    missing = np.asarray(list(missing) if not isinstance(missing, np.ndarray) else missing)
    if missing.dtype == bool:
        if missing.shape != (p,):
            raise ValueError(f"missing mask must have length {p}")
        return missing.copy()
    out = np.zeros(p, dtype=bool)
    idx = missing.astype(int)
    if idx.size and (idx.min() < 0 or idx.max() >= p):
        raise ValueError(f"missing indices out of range for p={p}")
    out[idx] = True
    return out


def log_kernels(x, observed, knots: KnotGrid, lam) -> np.ndarray:
    """Per-component log kernel over the observed coordinates.

    ``x`` is ``(n, p)`` and ``observed`` a boolean ``(n, p)`` mask; unobserved
    coordinates contribute nothing. Returns ``(n, m)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    observed = np.atleast_2d(np.asarray(observed, dtype=bool))
    lam = np.asarray(lam, dtype=float)
    with np.errstate(over="ignore"):
        z = (np.where(observed, x, 0.0)[:, None, :] - knots.knots[None, :, :]) / lam
        terms = -0.5 * z * z - np.log(lam) - LOG_SQRT_2PI
    return np.where(observed[:, None, :], terms, 0.0).sum(axis=2)


def log_responsibilities(x, observed, knots: KnotGrid, params: MixtureParams):
    """Normalized log conditional weights for each row, plus each row's log normalizer.

    Raises :class:`FarObservationError` when every component underflows for a row.
    """
    with np.errstate(divide="ignore"):
        log_theta = np.log(params.theta)
    logits = log_theta + log_kernels(x, observed, knots, params.lam)
    norm = logsumexp_rows(logits)
    bad = ~np.isfinite(norm)
    if bad.any():
        raise FarObservationError(
            f"observation infinitely far from all knots (rows {np.flatnonzero(bad).tolist()})"
        )
    return logits - norm[:, None], norm


def log_density(x, knots: KnotGrid, params: MixtureParams):
    """Log mixture density at one point (shape ``(p,)``) or at each row of an ``(n, p)`` array."""
    _check(knots, params)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != knots.p:
        raise ValueError(f"x has {x.shape[1]} coordinates, knots have {knots.p}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    with np.errstate(divide="ignore"):
        logits = np.log(params.theta) + log_kernels(x, np.ones(x.shape, bool), knots, params.lam)
    out = logsumexp_rows(logits)
    return float(out[0]) if single else out


def density(x, knots: KnotGrid, params: MixtureParams):
    """Mixture density at one point or at each row of an ``(n, p)`` array."""
    return np.exp(log_density(x, knots, params))


def conditional_weights(x, missing, knots: KnotGrid, params: MixtureParams) -> np.ndarray:
    """Component weights given the observed coordinates of ``x``.

    ``missing`` lists the unobserved coordinate indices (or is a boolean mask);
    values of ``x`` at those positions are ignored. With nothing observed the
    prior weights come back unchanged.
    """
    _check(knots, params)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != knots.p:
        raise ValueError(f"x has {x.size} coordinates, knots have {knots.p}")
    miss = _as_mask(missing, knots.p)
    if miss.all():
        return params.theta.copy()
    if not np.all(np.isfinite(x[~miss])):
        raise ValueError("observed coordinates must be finite")
    logw, _ = log_responsibilities(x, ~miss, knots, params)
    w = np.exp(logw[0])
    return w / w.sum()


def conditional_expectation(x, missing, i: int, knots: KnotGrid, params: MixtureParams) -> float:
    """E[X_i | observed coordinates] = sum_k theta'_k s_ik for a missing coordinate ``i``."""
    miss = _as_mask(missing, knots.p)
    if not miss[i]:
        raise ValueError(f"coordinate {i} is not in the missing set")
    w = conditional_weights(x, miss, knots, params)
    return float(w @ knots.knots[:, i])


def conditional_sample(x, missing, knots: KnotGrid, params: MixtureParams, rng) -> np.ndarray:
    """Draw the missing coordinates of ``x`` from their mixture conditional.

    Consumes one uniform for the component and then one normal per missing
    coordinate in ascending order. Returns values for the missing coordinates.
    """
    miss = _as_mask(missing, knots.p)
    w = conditional_weights(x, miss, knots, params)
    k = min(int(np.searchsorted(np.cumsum(w), rng.random(), side="right")), knots.m - 1)
    idx = np.flatnonzero(miss)
    return knots.knots[k, idx] + params.lam[idx] * rng.standard_normal(idx.size)


def marginal_density(x, i: int, knots: KnotGrid, params: MixtureParams):
    """Density of coordinate ``i`` with all other coordinates integrated out."""
    _check(knots, params)
    x = np.asarray(x, dtype=float)
    lam = params.lam[i]
    z = (x[..., None] - knots.knots[:, i]) / lam
    return np.exp(-0.5 * z * z - LOG_SQRT_2PI) @ params.theta / lam


def marginal_cdf(x, i: int, knots: KnotGrid, params: MixtureParams):
    _check(knots, params)
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - knots.knots[:, i]) / params.lam[i]
    return np.clip(ndtr(z) @ params.theta, 0.0, 1.0)


def silverman_bandwidth(values) -> float:
    """Silverman's rule of thumb, 0.9 * min(sd, IQR/1.34) * n^(-1/5).

    Quartiles use linear interpolation between order statistics. When the IQR
    is zero but the sample still varies, the standard deviation is used alone.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2 or not np.all(np.isfinite(values)):
        raise ValueError("need at least two finite values")
    sd = values.std(ddof=1)
    if sd == 0:
        raise ValueError("zero-spread sample")
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) or sd
    return 0.9 * spread * values.size ** -0.2


def default_priors(data, m: int) -> PriorSpec:
    """Dir(1/m, ..., 1/m) on weights; lambda_i^2 ~ InvGamma(n_i^0.4 + 1, var_i).

    ``n_i`` is the observed count of column ``i`` and ``var_i`` its sample
    variance, so the prior mean of lambda_i^2 is var_i / n_i^0.4.
    """
    if m < 1:
        raise ValueError("m must be positive")
    a = np.empty(data.p)
    b = np.empty(data.p)
    for i in range(data.p):
        col = data.observed_column(i)
        if col.size < 2:
            raise ValueError(f"column {data.columns[i]!r} has fewer than 2 observed values")
        var = col.var(ddof=1)
        if var <= 0:
            raise ValueError(f"column {data.columns[i]!r} has zero variance")
        a[i] = col.size ** 0.4 + 1.0
        b[i] = var
    return PriorSpec(np.full(m, 1.0 / m), a, b)
