"""Empirical delta distributions: quantiles, replication spreads, loadings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

#: Percentile levels plotted for both the claim-number and the aggregate model.
DEFAULT_LEVELS = (0.05, 0.10, 0.20, 0.50, 0.80, 0.90, 0.95)


class LevelError(KeyError):
    """A requested percentile level is not part of a report."""


def empirical_quantile(samples, p: float) -> float:
    """Type-1 quantile: the ``ceil(p*n)``-th smallest sample, no interpolation."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empirical_quantile needs at least one sample")
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    # round away representation noise such as 0.7 * 10 = 7.000000000000001
    k = max(1, math.ceil(round(p * x.size, 9)))
    return float(np.partition(x, k - 1)[k - 1])


def _sd(values: np.ndarray, axis=0) -> np.ndarray:
    if values.shape[axis] < 2:
        return np.full(np.delete(values.shape, axis), np.nan)
    sd = values.std(axis=axis, ddof=1)
    # identical replications have no spread, not rounding noise
    return np.where(np.ptp(values, axis=axis) == 0, 0.0, sd)


@dataclass(frozen=True, eq=False)
class PercentileReport:
    """Per-replication delta quantiles and means with their spread.

    ``quantiles`` has one row per replication and one column per level;
    spreads are sample standard deviations over replications (NaN for a
    single replication).
    """

    levels: Tuple[float, ...]
    quantiles: np.ndarray
    q_mean: np.ndarray
    q_stdev: np.ndarray
    e_delta: np.ndarray
    e_delta_mean: float
    e_delta_stdev: float

    @property
    def n_replications(self) -> int:
        return self.quantiles.shape[0]

    def index(self, level: float) -> int:
        for i, lv in enumerate(self.levels):
            if math.isclose(lv, level, rel_tol=0, abs_tol=1e-12):
                return i
        raise LevelError(f"level {level} not in report levels {self.levels}")

    def mean_at(self, level: float) -> float:
        return float(self.q_mean[self.index(level)])

    def stdev_at(self, level: float) -> float:
        return float(self.q_stdev[self.index(level)])


def aggregate_replications(batches: Sequence[Sequence[float]], levels=DEFAULT_LEVELS) -> PercentileReport:
    """Summarise replicated delta samples at the given percentile levels."""
    if len(batches) < 1:
        raise ValueError("need at least one replication")
    levels = tuple(float(lv) for lv in levels)
    q = np.array([[empirical_quantile(b, lv) for lv in levels] for b in batches])
    e = np.array([np.mean(np.asarray(b, dtype=float)) for b in batches])
    return PercentileReport(
        levels=levels,
        quantiles=q,
        q_mean=q.mean(axis=0),
        q_stdev=_sd(q),
        e_delta=e,
        e_delta_mean=float(e.mean()),
        e_delta_stdev=float(_sd(e[:, None])[0]),
    )


def safety_loading(report: PercentileReport, risk: float) -> float:
    """Multiple of sqrt(m.s.e.) to add to the CL reserve for underreserving risk ``risk``.

    Underreserving means ``R_real > R_CL + c*sqrt(mse)``, i.e. ``delta < -c``,
    so the loading is minus the ``risk`` quantile of delta.
    """
    return -report.mean_at(risk)


@dataclass(frozen=True, eq=False)
class PercentileDiff:
    levels: Tuple[float, ...]
    diff: np.ndarray
    stdev_a: np.ndarray
    stdev_b: np.ndarray


def percentile_diff(report_a: PercentileReport, report_b: PercentileReport) -> PercentileDiff:
    """Level-wise ``q_a - q_b`` of the replication-mean quantiles.

    For the claim-size comparison pass the exponential report as ``a`` and
    the Pareto report as ``b``.
    """
    if len(report_a.levels) != len(report_b.levels) or not np.allclose(
        report_a.levels, report_b.levels, rtol=0, atol=1e-12
    ):
        raise LevelError(f"level sets differ: {report_a.levels} vs {report_b.levels}")
    return PercentileDiff(
        levels=report_a.levels,
        diff=report_a.q_mean - report_b.q_mean,
        stdev_a=report_a.q_stdev,
        stdev_b=report_b.q_stdev,
    )


def relative_bias_decomposition(results) -> Tuple[float, float]:
    """Split mean(delta) into bias times mean(1/sqrt(mse)) plus a covariance.

    ``results`` are objects with ``r_cl``, ``r_real`` and ``mse``. Sample
    moments use 1/n, so both returned sides agree up to rounding.
    """
    bias = np.array([r.r_cl - r.r_real for r in results], dtype=float)
    inv_sd = 1.0 / np.sqrt(np.array([r.mse for r in results], dtype=float))
    lhs = float(np.mean(bias * inv_sd))
    cov = float(np.mean((bias - bias.mean()) * (inv_sd - inv_sd.mean())))
    rhs = float(bias.mean() * inv_sd.mean()) + cov
    return lhs, rhs
