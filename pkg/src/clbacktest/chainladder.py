"""Chain ladder reserves and Mack's mean square error estimator.

All vectors are 0-based: ``factors[k]`` develops column k into k+1,
``sigma_sq[k]`` belongs to the same step, and per-year vectors hold
occurrence years 1..I-1 (the first year is fully developed).

The arithmetic lives in kernels over stacks of triangles, shape
``(B, I, I)``; the public functions run them on a stack of one. The
simulator calls :func:`estimate_stack` on whole batches, and both routes
give identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .triangle import CumulativeTriangle, known_mask


class DegenerateTriangle(ValueError):
    """The triangle has a zero where an estimator needs to divide by it."""

    def __init__(self, message: str, k: Optional[int] = None):
        super().__init__(message)
        self.k = k


@dataclass(frozen=True, eq=False)
class Forecast:
    full: np.ndarray          # I x I: known cells plus projected lower region
    reserves: np.ndarray      # length I-1, occurrence years 1..I-1
    total: float


@dataclass(frozen=True, eq=False)
class ClEstimate:
    factors: np.ndarray
    forecasts: np.ndarray
    reserves: np.ndarray
    total_reserve: float
    sigma_sq: np.ndarray
    mse: np.ndarray
    mse_total: float


@lru_cache(maxsize=None)
def _developing_rows(I: int) -> np.ndarray:
    """Mask (I x I-1) of cells (i, k) whose successor (i, k+1) is also known."""
    mask = known_mask(I)[:, 1:].copy()
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def _future_steps(I: int) -> np.ndarray:
    """Mask (rows 1..I-1, steps 0..I-2) of development steps still ahead of each year."""
    i = np.arange(1, I)[:, None]
    k = np.arange(I - 1)[None, :]
    mask = k >= I - 1 - i
    mask.setflags(write=False)
    return mask


# ---------------------------------------------------------------------------
# Stack kernels. C has shape (B, I, I) with NaN below the latest diagonal.
# ---------------------------------------------------------------------------


def _column_sums(C: np.ndarray) -> np.ndarray:
    """``sum_{i <= I-2-k} C[:, i, k]`` for k = 0..I-2, shape (B, I-1)."""
    I = C.shape[-1]
    return np.where(_developing_rows(I), C[:, :, : I - 1], 0.0).sum(axis=1)


def _factors(C: np.ndarray, denom: np.ndarray) -> np.ndarray:
    I = C.shape[-1]
    numer = np.where(_developing_rows(I), C[:, :, 1:], 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return numer / denom


def _latest(C: np.ndarray) -> np.ndarray:
    I = C.shape[-1]
    rows = np.arange(I)
    return C[:, rows, I - 1 - rows]


def _forecast(C: np.ndarray, f: np.ndarray, latest: np.ndarray) -> np.ndarray:
    I = C.shape[-1]
    # growth[k] = f_0 * ... * f_{k-1}; row i is rolled from column I-1-i
    growth = np.concatenate((np.ones((C.shape[0], 1)), np.cumprod(f, axis=1)), axis=1)
    start = growth[:, I - 1 - np.arange(I)]
    with np.errstate(divide="ignore", invalid="ignore"):
        rolled = latest[:, :, None] * (growth[:, None, :] / start[:, :, None])
    return np.where(known_mask(I), C, rolled)


def _sigma_sq(C: np.ndarray, f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Variance parameters (B, I-1) and a per-triangle flag of zero divisors."""
    B, I, _ = C.shape
    out = np.zeros((B, I - 1))
    bad = np.zeros(B, dtype=bool)
    if I >= 3:
        mask = _developing_rows(I)[:, : I - 2]
        base = C[:, :, : I - 2]
        bad = np.any(mask & ~(base > 0), axis=(1, 2))
        with np.errstate(invalid="ignore", divide="ignore"):
            resid = C[:, :, 1 : I - 1] / base - f[:, None, : I - 2]
            terms = np.where(mask, base * resid * resid, 0.0)
        dof = (I - 2 - np.arange(I - 2)).astype(float)
        out[:, : I - 2] = terms.sum(axis=1) / dof
    if I >= 4:
        prev2, prev1 = out[:, I - 4], out[:, I - 3]
        usable = (prev1 != 0) & (prev2 != 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            tail = np.minimum(prev1 * prev1 / prev2, np.minimum(prev2, prev1))
        out[:, I - 2] = np.where(usable, tail, 0.0)
    return out, bad


def _mse_per_year(full, f, s2, denom) -> Tuple[np.ndarray, np.ndarray]:
    I = full.shape[-1]
    steps = _future_steps(I)
    start = full[:, 1:, : I - 1]
    bad = np.any(steps & ~(start > 0), axis=(1, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = (s2 / f**2)[:, None, :] * (1.0 / start + 1.0 / denom[:, None, :])
        total = np.where(steps, inner, 0.0).sum(axis=2)
        return full[:, 1:, I - 1] ** 2 * total, bad


def _mse_total(full, f, s2, denom, mse) -> np.ndarray:
    I = full.shape[-1]
    ultimate = full[:, 1:, I - 1]
    weights = 2.0 * s2 / f**2 / denom
    per_row = np.where(_future_steps(I), weights[:, None, :], 0.0).sum(axis=2)
    # sum of the ultimates of all younger occurrence years
    later = np.cumsum(ultimate[:, ::-1], axis=1)[:, ::-1] - ultimate
    return mse.sum(axis=1) + np.sum(ultimate * later * per_row, axis=1)


def estimate_stack(C: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Total reserve and total m.s.e. for a stack of cumulative triangles.

    Args:
        C: array (B, I, I) of cumulative amounts, NaN below the latest
            diagonal.

    Returns:
        ``(total_reserve, mse_total, ok)``, each of length B. Entries where
        ``ok`` is False hit a zero divisor and hold no meaningful values.
    """
    I = C.shape[-1]
    denom = _column_sums(C)
    ok = np.all(denom > 0, axis=1)
    f = _factors(C, denom)
    latest = _latest(C)
    full = _forecast(C, f, latest)
    reserve = (full[:, 1:, I - 1] - latest[:, 1:]).sum(axis=1)
    s2, bad_sigma = _sigma_sq(C, f)
    mse, bad_mse = _mse_per_year(full, f, s2, denom)
    with np.errstate(invalid="ignore", divide="ignore"):
        total = _mse_total(full, f, s2, denom, mse)
    return reserve, total, ok & ~bad_sigma & ~bad_mse


# ---------------------------------------------------------------------------
# Single-triangle operations
# ---------------------------------------------------------------------------


def dev_factors(tri: CumulativeTriangle) -> np.ndarray:
    """Volume-weighted development factors, length I-1."""
    C = tri.values[None]
    denom = _column_sums(C)
    zero = np.flatnonzero(denom[0] <= 0)
    if zero.size:
        k = int(zero[0])
        raise DegenerateTriangle(
            f"column {k} sums to zero over the rows developing into column {k + 1}", k
        )
    return _factors(C, denom)[0]


def forecast(tri: CumulativeTriangle, factors: np.ndarray) -> Forecast:
    """Roll each latest diagonal value forward with the factors."""
    I = tri.I
    C = tri.values[None]
    latest = _latest(C)
    full = _forecast(C, np.asarray(factors, dtype=float)[None], latest)[0]
    reserves = full[1:, I - 1] - latest[0, 1:]
    return Forecast(full=full, reserves=reserves, total=float(reserves.sum()))


def tail_sigma_sq(prev2: Optional[float], prev1: Optional[float]) -> float:
    """Mack's extrapolation for the last development step.

    ``prev1`` and ``prev2`` are the variances of the two preceding steps
    (``prev2`` the earlier one). Missing or zero inputs give zero.
    """
    if prev1 is None or prev2 is None or prev1 == 0 or prev2 == 0:
        return 0.0
    return min(prev1 * prev1 / prev2, min(prev2, prev1))


def sigma_sq(tri: CumulativeTriangle, factors: np.ndarray) -> np.ndarray:
    """Variance parameters of the development steps, length I-1.

    Steps 0..I-3 use the residual formula; the last step is extrapolated
    with :func:`tail_sigma_sq`.
    """
    out, bad = _sigma_sq(tri.values[None], np.asarray(factors, dtype=float)[None])
    if bad[0]:
        I = tri.I
        base = tri.values[:, : I - 2]
        cols = np.any(_developing_rows(I)[:, : I - 2] & ~(base > 0), axis=0)
        k = int(np.flatnonzero(cols)[0])
        raise DegenerateTriangle(f"zero cumulative amount in column {k} of the variance estimate", k)
    return out[0]


def mse_per_year(
    tri: CumulativeTriangle,
    factors: np.ndarray,
    sigma_sq: np.ndarray,
    forecasts: Forecast,
) -> np.ndarray:
    """Mack's m.s.e. of each occurrence-year reserve, length I-1."""
    C = tri.values[None]
    denom = _column_sums(C)
    mse, bad = _mse_per_year(
        forecasts.full[None],
        np.asarray(factors, dtype=float)[None],
        np.asarray(sigma_sq, dtype=float)[None],
        denom,
    )
    if bad[0]:
        raise DegenerateTriangle("zero latest cumulative amount in the m.s.e. estimate")
    return mse[0]


def mse_total(
    tri: CumulativeTriangle,
    factors: np.ndarray,
    sigma_sq: np.ndarray,
    forecasts: Forecast,
    mse_per_year: np.ndarray,
) -> float:
    """Mack's m.s.e. of the total reserve: per-year terms plus covariances."""
    denom = _column_sums(tri.values[None])
    total = _mse_total(
        forecasts.full[None],
        np.asarray(factors, dtype=float)[None],
        np.asarray(sigma_sq, dtype=float)[None],
        denom,
        np.asarray(mse_per_year, dtype=float)[None],
    )
    return float(total[0])


def chain_ladder(tri: CumulativeTriangle) -> ClEstimate:
    """Run the full estimator chain on ``tri``."""
    f = dev_factors(tri)
    fc = forecast(tri, f)
    s2 = sigma_sq(tri, f)
    mse = mse_per_year(tri, f, s2, fc)
    return ClEstimate(
        factors=f,
        forecasts=fc.full,
        reserves=fc.reserves,
        total_reserve=fc.total,
        sigma_sq=s2,
        mse=mse,
        mse_total=mse_total(tri, f, s2, fc, mse),
    )
