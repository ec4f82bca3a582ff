"""Numeric table with a per-cell observation mask."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """An ``n x p`` table where ``mask[t, i]`` is True when cell ``(t, i)`` is observed.

    Missing cells hold NaN internally; callers go through :meth:`observed_column`,
    :meth:`row`, :meth:`filled` or :meth:`missing_cells` and never see the
    sentinel. ``truth`` optionally carries the complete ground-truth matrix for
    scoring injected missingness, and ``row_ids`` the original row numbers.
    """

    _values: np.ndarray
    mask: np.ndarray
    columns: tuple[str, ...]
    truth: np.ndarray | None = None
    row_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.array(self._values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"expected a 2-d table, got shape {values.shape}")
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
        n, p = values.shape
        if n < 1 or p < 1:
            raise ValueError("data must have at least one row and one column")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed cells must be finite")
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        columns = tuple(self.columns) if self.columns else tuple(f"x{i + 1}" for i in range(p))
        if len(columns) != p:
            raise ValueError(f"{len(columns)} column names for {p} columns")
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "columns", columns)
        if self.truth is not None:
            truth = np.array(self.truth, dtype=float)
            if truth.shape != values.shape:
                raise ValueError("truth must have the same shape as values")
            truth.setflags(write=False)
            object.__setattr__(self, "truth", truth)
        row_ids = np.arange(n) if self.row_ids is None else np.asarray(self.row_ids, dtype=int)
        object.__setattr__(self, "row_ids", row_ids)

    @classmethod
    def from_array(cls, values, columns=None, truth=None) -> "DataMatrix":
        """Build from an array where NaN marks missing cells."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(values, ~np.isnan(values), tuple(columns or ()), truth)

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def p(self) -> int:
        return self.mask.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def observed_column(self, i: int) -> np.ndarray:
        return self._values[self.mask[:, i], i].copy()

    def observed_counts(self) -> np.ndarray:
        return self.mask.sum(axis=0)

    def row(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Observed coordinate indices of row ``t`` and their values."""
        idx = np.flatnonzero(self.mask[t])
        return idx, self._values[t, idx].copy()

    def filled(self, fill=0.0) -> np.ndarray:
        """Copy of the values with missing cells set to ``fill``.

        ``fill`` may be a scalar or a length-p vector of per-column fills.
        """
        out = np.where(self.mask, self._values, np.broadcast_to(fill, self.shape))
        return np.array(out, dtype=float)

    def column_means(self) -> np.ndarray:
        counts = self.observed_counts()
        if np.any(counts == 0):
            bad = [self.columns[i] for i in np.flatnonzero(counts == 0)]
            raise ValueError(f"columns with no observed values: {bad}")
        return np.array([self.observed_column(i).mean() for i in range(self.p)])

    def missing_cells(self) -> np.ndarray:
        """(row, col) pairs of missing cells in row-major order, shape ``(k, 2)``."""
        return np.argwhere(~self.mask)

    @property
    def n_missing(self) -> int:
        return int((~self.mask).sum())

    def complete_rows(self) -> np.ndarray:
        return np.flatnonzero(self.mask.all(axis=1))

    def is_complete(self) -> bool:
        return bool(self.mask.all())

    def subset(self, rows) -> "DataMatrix":
        rows = np.asarray(rows, dtype=int)
        truth = None if self.truth is None else self.truth[rows]
        return DataMatrix(self._values[rows], self.mask[rows], self.columns, truth, self.row_ids[rows])

    def complete_cases(self) -> "DataMatrix":
        return self.subset(self.complete_rows())

    def drop_empty_rows(self) -> "DataMatrix":
        """Remove rows with no observed coordinate, logging each removal."""
        empty = ~self.mask.any(axis=1)
        if not empty.any():
            return self
        for t in np.flatnonzero(empty):
            logger.info("dropping all-missing row %d", self.row_ids[t])
        return self.subset(np.flatnonzero(~empty))

    def truth_at_missing(self) -> np.ndarray:
        if self.truth is None:
            raise ValueError("no ground truth attached to this data")
        cells = self.missing_cells()
        return self.truth[cells[:, 0], cells[:, 1]].copy()

    def with_truth(self, truth) -> "DataMatrix":
        return DataMatrix(self._values, self.mask, self.columns, truth, self.row_ids)
