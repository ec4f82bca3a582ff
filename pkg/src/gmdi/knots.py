"""Deterministic knot selection along an anchor column."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataMatrix
from .mixture import KnotGrid


@dataclass
class KnotSelectionReport:
    chosen_rows: np.ndarray
    anchor_column: int = 0
    duplicates_count: int = 0
    filled_cells: list[tuple[int, int]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def order_statistic_index(j: int, m: int, n: int) -> int:
    """1-based order statistic used for knot ``j`` of ``m`` among ``n`` values.

    floor((j - 1) / (m - 1) * n), clamped to [1, n]. Integer arithmetic keeps
    the floor exact.
    """
    return max(1, min(n, ((j - 1) * n) // (m - 1)))


def select_knots(data: DataMatrix, m: int, anchor: int = 0) -> tuple[KnotGrid, KnotSelectionReport]:
    """Pick ``m`` data rows as knots, spread over the order statistics of the anchor column.

    Knot ``j`` is the row holding the ``order_statistic_index(j, m, n)``-th
    smallest anchor value, so the first and last knots sit at the anchor's min
    and max. Only complete rows are eligible. If there are fewer than ``m`` of
    them, every row with an observed anchor becomes eligible and the missing
    coordinates of chosen rows are filled with observed column means (listed
    in ``report.filled_cells``). Ties in the anchor break by row position.
    """
    if m < 2:
        raise ValueError("m must be at least 2 (knots are anchored at the min and max)")
    if not 0 <= anchor < data.p:
        raise ValueError(f"anchor column {anchor} out of range")
    report = KnotSelectionReport(np.empty(0, dtype=int), anchor)

    eligible = data.complete_rows()
    if eligible.size < m:
        eligible = np.flatnonzero(data.mask[:, anchor])
        if eligible.size < m:
            raise ValueError(f"need at least {m} rows with an observed anchor value, have {eligible.size}")
        report.warnings.append(
            f"only {data.complete_rows().size} complete rows for {m} knots; "
            "filling incomplete knot rows with column means"
        )

    anchor_vals = data.filled(np.nan)[eligible, anchor]
    order = eligible[np.argsort(anchor_vals, kind="stable")]
    n = order.size
    rows = np.array([order[order_statistic_index(j, m, n) - 1] for j in range(1, m + 1)])

    means = data.column_means() if not data.mask[rows].all() else None
    knots = data.filled(np.nan)[rows]
    if means is not None:
        for r, c in np.argwhere(np.isnan(knots)):
            knots[r, c] = means[c]
            report.filled_cells.append((int(rows[r]), int(c)))

    report.chosen_rows = rows
    report.duplicates_count = int(m - np.unique(knots, axis=0).shape[0])
    if report.duplicates_count:
        report.warnings.append(f"{report.duplicates_count} duplicate knot vector(s) retained")
    return KnotGrid(knots), report
