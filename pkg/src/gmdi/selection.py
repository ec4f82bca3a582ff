"""Choose the number of knots by 5-fold cross-validation on scaled squared error."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .data import DataMatrix
from .knots import select_knots
from .mixture import FarObservationError, KnotGrid, default_priors, logsumexp_rows
from .samplers import PosteriorTrace, SamplerConfig, run_gmdi, run_tbmde

logger = logging.getLogger(__name__)

CV_CONFIG = SamplerConfig(burn_in=200, draws=500)


def default_candidates(n: int) -> list[int]:
    return list(range(2, min(30, int(0.8 * n)) + 1, 2))


def cv_predict(x_t, observed, i: int, trace: PosteriorTrace, knots: KnotGrid) -> float:
    """Posterior-averaged prediction of observed coordinate ``i`` from the row's other observed values.

    ``observed`` is the row's set of observed coordinate indices. When ``i`` is
    the only one, the prediction is the unconditional mixture mean.
    """
    observed = sorted(int(j) for j in observed)
    if i not in observed:
        raise ValueError(f"coordinate {i} is not observed in this row")
    others = [j for j in observed if j != i]
    s_i = knots.knots[:, i]
    if not others:
        return float((trace.theta @ s_i).mean())
    x_t = np.asarray(x_t, dtype=float)[others]
    lam = trace.lam[:, others]  # (L, q)
    z = (x_t - knots.knots[:, others][None, :, :]) / lam[:, None, :]  # (L, m, q)
    with np.errstate(divide="ignore", over="ignore"):
        logits = np.log(trace.theta) - (0.5 * z * z + np.log(lam)[:, None, :]).sum(axis=2)
    norm = logsumexp_rows(logits)
    if not np.all(np.isfinite(norm)):
        raise FarObservationError("observation infinitely far from all knots")
    w = np.exp(logits - norm[:, None])
    return float(((w @ s_i) / w.sum(axis=1)).mean())


def scaling_variances(data: DataMatrix) -> np.ndarray:
    """Sample variance of each column's observed values."""
    out = np.array([data.observed_column(i).var(ddof=1) if data.observed_counts()[i] > 1 else 0.0
                    for i in range(data.p)])
    return out


def ssse(test: DataMatrix, predictions, scale) -> float:
    """Sum over observed test cells of (prediction - value)^2 / scale[column].

    ``predictions`` is an ``(n_test, p)`` array; entries at unobserved cells are ignored.
    """
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        bad = [test.columns[i] for i in np.flatnonzero(scale <= 0)]
        raise ValueError(f"zero scaling variance for variable(s) {bad}")
    predictions = np.asarray(predictions, dtype=float)
    err = np.where(test.mask, predictions - test.filled(), 0.0)
    return float(((err ** 2) / scale).sum())


def fold_assignment(n: int, seed, folds: int = 5) -> np.ndarray:
    """Shuffle rows with a seeded generator and split them into ``folds`` contiguous blocks."""
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=int)
    for r, block in enumerate(np.array_split(perm, folds)):
        out[block] = r
    return out


def predict_fold(test: DataMatrix, trace: PosteriorTrace, knots: KnotGrid) -> np.ndarray:
    pred = np.full(test.shape, np.nan)
    x = test.filled()
    for t in range(test.n):
        obs, _ = test.row(t)
        for i in obs:
            pred[t, i] = cv_predict(x[t], obs, int(i), trace, knots)
    return pred


@dataclass
class CVResult:
    candidates: list[int]
    fold_ssse: dict[int, np.ndarray] = field(default_factory=dict)
    infeasible: dict[int, str] = field(default_factory=dict)
    fold_assignment: np.ndarray | None = None
    scale: np.ndarray | None = None
    chosen_m: int | None = None

    def total(self, m: int) -> float:
        return float(self.fold_ssse[m].sum()) if m in self.fold_ssse else float("nan")

    def rows(self):
        """(m, fold, ssse, total_ssse, chosen) tuples for the CSV report, in candidate order."""
        seen = set()
        for m in self.candidates:
            if m in seen:
                continue
            seen.add(m)
            if m in self.infeasible:
                yield m, "", "", "", "infeasible"
                continue
            for r, v in enumerate(self.fold_ssse[m]):
                yield m, r + 1, v, self.total(m), int(m == self.chosen_m)


def _task_seed(seed, m, fold):
    return int(np.random.SeedSequence(seed, spawn_key=(m, fold)).generate_state(1, np.uint64)[0])


def select_m(
    data: DataMatrix,
    candidates,
    prior_builder=default_priors,
    cfg: SamplerConfig = CV_CONFIG,
    seed: int = 0,
    method: str = "gmdi",
    folds: int = 5,
) -> CVResult:
    """Score every candidate knot count by k-fold CV and pick the smallest total.

    Each (candidate, fold) task selects knots and builds priors on the training
    rows, fits the chosen sampler there and predicts each held-out observed
    cell from the rest of its row. Chain seeds depend on (seed, m, fold) only.
    Candidates whose knots or priors cannot be built on some training split
    are marked infeasible. Ties go to the smaller m.
    """
    candidates = [int(m) for m in candidates]
    if not candidates:
        raise ValueError("no candidate knot counts")
    runner = {"gmdi": run_gmdi, "tbmde": run_tbmde}[method]
    result = CVResult(candidates)
    result.scale = scaling_variances(data)
    result.fold_assignment = fold_assignment(data.n, seed, folds)
    for m in dict.fromkeys(candidates):
        scores = np.empty(folds)
        try:
            for r in range(folds):
                train = data.subset(np.flatnonzero(result.fold_assignment != r))
                test = data.subset(np.flatnonzero(result.fold_assignment == r))
                knots, _ = select_knots(train, m)
                prior = prior_builder(train, m)
                trace = runner(train, knots, prior, replace(cfg, seed=_task_seed(seed, m, r)))
                scores[r] = ssse(test, predict_fold(test, trace, knots), result.scale)
        except ValueError as exc:
            logger.info("candidate m=%d infeasible: %s", m, exc)
            result.infeasible[m] = str(exc)
            continue
        result.fold_ssse[m] = scores
    feasible = sorted(result.fold_ssse)
    if feasible:
        result.chosen_m = min(feasible, key=lambda m: (result.total(m), m))
    return result
