"""Run-off rectangles and the cumulative upper triangle seen by chain ladder.

Rows are occurrence years and columns development years, both 0-based in
code. Cell ``(i, k)`` belongs to the known past when ``i + k <= I - 1``.
"""

from __future__ import annotations

import csv
import io
from functools import lru_cache
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

PathLike = Union[str, Path]


@lru_cache(maxsize=None)
def known_mask(I: int) -> np.ndarray:
    """Boolean I x I mask of the cells available at the valuation date (read-only)."""
    idx = np.arange(I)
    mask = idx[:, None] + idx[None, :] <= I - 1
    mask.setflags(write=False)
    return mask


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RunOffTable:
    """Full I x I rectangle of incremental amounts, past and future."""

    cells: np.ndarray

    def __post_init__(self):
        cells = _freeze(self.cells)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1] or cells.shape[0] < 2:
            raise ValueError(f"run-off table must be square with I >= 2, got shape {cells.shape}")
        if not np.all(np.isfinite(cells)):
            raise ValueError("run-off table entries must be finite")
        if np.any(cells < 0):
            raise ValueError("run-off table entries must be nonnegative")
        object.__setattr__(self, "cells", cells)

    @property
    def I(self) -> int:
        return self.cells.shape[0]

    def __eq__(self, other):
        return isinstance(other, RunOffTable) and np.array_equal(self.cells, other.cells)

    def to_csv(self, path: PathLike = None) -> str:
        return _write_rows([list(row) for row in self.cells], self.I, path)

    @classmethod
    def from_csv(cls, source: PathLike) -> "RunOffTable":
        rows = _read_rows(source)
        if any(len(r) != len(rows) for r in rows):
            raise ValueError("run-off table CSV must have a full square of values")
        return cls(np.array(rows, dtype=float))


@dataclass(frozen=True, eq=False)
class CumulativeTriangle:
    """Cumulative amounts ``C[i, k]`` of the known region; NaN elsewhere.

    Future cells are never held, so anything computed from a triangle
    cannot look ahead.
    """

    values: np.ndarray

    def __post_init__(self):
        values = _freeze(self.values)
        if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 2:
            raise ValueError(f"triangle must be square with I >= 2, got shape {values.shape}")
        mask = known_mask(values.shape[0])
        known = values[mask]
        if not np.all(np.isfinite(known)):
            raise ValueError("known triangle cells must be finite")
        if np.any(known < 0):
            raise ValueError("known triangle cells must be nonnegative")
        if not np.all(np.isnan(values[~mask])):
            raise ValueError("cells below the latest diagonal must be empty")
        steps = np.diff(values, axis=1)
        if np.any(steps[mask[:, 1:]] < 0):
            raise ValueError("cumulative rows must be non-decreasing")
        object.__setattr__(self, "values", values)

    @property
    def I(self) -> int:
        return self.values.shape[0]

    def rows(self) -> List[np.ndarray]:
        I = self.I
        return [self.values[i, : I - i].copy() for i in range(I)]

    def latest_diagonal(self) -> np.ndarray:
        I = self.I
        return self.values[np.arange(I), I - 1 - np.arange(I)].copy()

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "CumulativeTriangle":
        """Build from ragged rows; row i (0-based) must hold I - i values."""
        I = len(rows)
        values = np.full((I, I), np.nan)
        for i, row in enumerate(rows):
            if len(row) != I - i:
                raise ValueError(f"row {i} has {len(row)} values, expected {I - i}")
            values[i, : I - i] = row
        return cls(values)

    def __eq__(self, other):
        return isinstance(other, CumulativeTriangle) and np.array_equal(
            self.values, other.values, equal_nan=True
        )

    def to_csv(self, path: PathLike = None) -> str:
        return _write_rows(self.rows(), self.I, path)

    @classmethod
    def from_csv(cls, source: PathLike) -> "CumulativeTriangle":
        return cls.from_rows(_read_rows(source))


def cumulate_upper(table: RunOffTable) -> CumulativeTriangle:
    """Cumulate each row of the known region of ``table``."""
    mask = known_mask(table.I)
    cum = np.cumsum(table.cells, axis=1)
    return CumulativeTriangle(np.where(mask, cum, np.nan))


def actual_reserves(table: RunOffTable) -> Tuple[np.ndarray, float]:
    """Outstanding amounts of the simulated future.

    Returns ``(per_year, total)`` where ``per_year[i - 1]`` is the future
    sum of occurrence year i (0-based i = 1..I-1).
    """
    future = np.where(known_mask(table.I), 0.0, table.cells)
    per_year = future.sum(axis=1)[1:]
    return per_year, float(per_year.sum())


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_rows(rows, I: int, path: PathLike = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([_fmt(v) for v in row] + [""] * (I - len(row)))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _read_rows(source: PathLike) -> List[List[float]]:
    text = Path(source).read_text()
    rows = []
    for rec in csv.reader(io.StringIO(text)):
        if not rec:
            continue
        values = [c for c in rec if c.strip() != ""]
        rows.append([float(c) for c in values])
    return rows
