"""Monte Carlo backtest of chain ladder on simulated run-off rectangles.

Every scenario owns a Philox stream keyed on ``(seed, replication,
scenario)``, so a batch is the same whatever order or process computes it.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .chainladder import estimate_stack
from .distributions import (
    CountDistribution,
    RunOffPattern,
    SeverityDistribution,
    UnitClaim,
    sample_count,
    sample_multinomial,
    sample_severity,
)
from .triangle import RunOffTable, actual_reserves, cumulate_upper

logger = logging.getLogger(__name__)


class ScenarioExhausted(RuntimeError):
    """Too many consecutive degenerate rectangles for one scenario."""

    def __init__(self, message: str, scenario_index: Optional[int] = None):
        super().__init__(message)
        self.scenario_index = scenario_index


@dataclass(frozen=True)
class ScenarioConfig:
    I: int
    count_dist: CountDistribution
    pattern: RunOffPattern
    severity: SeverityDistribution = field(default_factory=UnitClaim)
    n_scenarios: int = 1000
    n_replications: int = 10
    seed: int = 0
    max_resamples_per_scenario: int = 100

    def __post_init__(self):
        if self.pattern.I != self.I:
            raise ValueError(f"pattern has {self.pattern.I} development years, expected I={self.I}")
        if self.I < 2:
            raise ValueError("I must be at least 2")
        if self.n_scenarios < 1 or self.n_replications < 1:
            raise ValueError("n_scenarios and n_replications must be positive")
        if self.max_resamples_per_scenario < 0:
            raise ValueError("max_resamples_per_scenario must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class ScenarioResult:
    r_cl: float
    r_real: float
    mse: float
    delta: float
    resample_count: int = 0


def scenario_rng(seed: int, replication_index: int, scenario_index: int) -> np.random.Generator:
    """Independent stream for one scenario of one replication."""
    ss = np.random.SeedSequence(seed, spawn_key=(replication_index, scenario_index))
    return np.random.Generator(np.random.Philox(ss))


def simulate_rectangle(cfg: ScenarioConfig, rng: np.random.Generator) -> RunOffTable:
    """Draw one full I x I table of incremental amounts."""
    totals = sample_count(cfg.count_dist, rng, size=cfg.I)
    counts = sample_multinomial(totals, cfg.pattern, rng)
    if isinstance(cfg.severity, UnitClaim):
        return RunOffTable(counts.astype(float))
    flat = counts.ravel()
    sizes = sample_severity(cfg.severity, rng, size=int(flat.sum()))
    cell = np.repeat(np.arange(flat.size), flat)
    amounts = np.bincount(cell, weights=sizes, minlength=flat.size)
    return RunOffTable(amounts.reshape(counts.shape))


def _evaluate(tables: Sequence[RunOffTable]) -> List[Optional[ScenarioResult]]:
    """Chain ladder backtest of each table; None marks a degenerate one."""
    # only the cumulative upper triangles reach the estimator
    C = np.stack([cumulate_upper(t).values for t in tables])
    r_cl, mse, ok = estimate_stack(C)
    out: List[Optional[ScenarioResult]] = []
    for t, rc, m, good in zip(tables, r_cl, mse, ok):
        if not (good and m > 0):
            out.append(None)
            continue
        _, r_real = actual_reserves(t)
        rc = float(rc)
        m = float(m)
        out.append(ScenarioResult(r_cl=rc, r_real=r_real, mse=m, delta=(rc - r_real) / math.sqrt(m)))
    return out


def _retry(cfg: ScenarioConfig, rng: np.random.Generator, first_attempt: int) -> ScenarioResult:
    for attempt in range(first_attempt, cfg.max_resamples_per_scenario + 1):
        result = _evaluate([simulate_rectangle(cfg, rng)])[0]
        if result is not None:
            return replace(result, resample_count=attempt)
    raise ScenarioExhausted(
        f"{cfg.max_resamples_per_scenario + 1} consecutive degenerate rectangles; "
        "claim counts are too sparse for chain ladder"
    )


def run_scenario(cfg: ScenarioConfig, rng: np.random.Generator) -> ScenarioResult:
    """Simulate until a rectangle gives a usable chain ladder estimate.

    Degenerate rectangles (a zero divisor in the estimators, or zero m.s.e.)
    are redrawn from the same stream and counted in ``resample_count``.
    """
    return _retry(cfg, rng, 0)


def _run_range(cfg: ScenarioConfig, replication_index: int, start: int, stop: int) -> List[ScenarioResult]:
    rngs = [scenario_rng(cfg.seed, replication_index, s) for s in range(start, stop)]
    first = _evaluate([simulate_rectangle(cfg, rng) for rng in rngs])
    out = []
    for s, rng, result in zip(range(start, stop), rngs, first):
        if result is None:
            try:
                result = _retry(cfg, rng, 1)
            except ScenarioExhausted as exc:
                raise ScenarioExhausted(f"scenario {s}: {exc}", s) from None
        out.append(result)
    return out


def run_batch(cfg: ScenarioConfig, replication_index: int, jobs: int = 1) -> List[ScenarioResult]:
    """All ``cfg.n_scenarios`` scenarios of one replication, in scenario order."""
    n = cfg.n_scenarios
    if jobs <= 1 or n < 2:
        return _run_range(cfg, replication_index, 0, n)
    bounds = np.linspace(0, n, min(jobs, n) + 1).astype(int)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_run_range, cfg, replication_index, int(a), int(b))
            for a, b in zip(bounds[:-1], bounds[1:])
        ]
        return [r for fut in futures for r in fut.result()]


def run_replications(cfg: ScenarioConfig, jobs: int = 1) -> List[List[ScenarioResult]]:
    return [run_batch(cfg, rep, jobs) for rep in range(cfg.n_replications)]


def deltas(results: Sequence[ScenarioResult]) -> np.ndarray:
    return np.array([r.delta for r in results])


def expected_triangle_claims(cfg: ScenarioConfig) -> float:
    """Expected number of claims in the known upper triangle."""
    I = cfg.I
    weights = I - np.arange(I)  # I+1-j for j = 1..I
    return float(cfg.count_dist.mean() * np.dot(weights, cfg.pattern.array))
