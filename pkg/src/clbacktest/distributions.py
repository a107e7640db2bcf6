"""Claim-count and claim-size distributions of the collective model.

Count distributions give the ultimate number of claims of an occurrence
year, a run-off pattern spreads that number over the development years,
and a severity distribution gives the size of each single claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln


# ---------------------------------------------------------------------------
# Claim counts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Poisson:
    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"Poisson lambda must be positive, got {self.lam}")

    def mean(self) -> float:
        return float(self.lam)

    def variance(self) -> float:
        return float(self.lam)

    def pmf(self, n):
        n = np.asarray(n, dtype=float)
        return np.exp(-self.lam + n * math.log(self.lam) - gammaln(n + 1))


@dataclass(frozen=True)
class Binomial:
    m: int
    p: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"binomial m must be a positive integer, got {self.m}")
        if not 0 < self.p < 1:
            raise ValueError(f"binomial p must lie in (0, 1), got {self.p}")

    def mean(self) -> float:
        return self.m * self.p

    def variance(self) -> float:
        return self.m * self.p * (1 - self.p)

    def pmf(self, n):
        n = np.asarray(n, dtype=float)
        out = np.zeros_like(n)
        ok = (n >= 0) & (n <= self.m)
        k = n[ok]
        out[ok] = np.exp(
            gammaln(self.m + 1) - gammaln(k + 1) - gammaln(self.m - k + 1)
            + k * math.log(self.p) + (self.m - k) * math.log1p(-self.p)
        )
        return out


@dataclass(frozen=True)
class NegBinomial:
    """Negative binomial with pmf ``C(rho+n-1, n) p**rho (1-p)**n``."""

    rho: float
    p: float

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"negative binomial rho must be positive, got {self.rho}")
        if not 0 < self.p < 1:
            raise ValueError(f"negative binomial p must lie in (0, 1), got {self.p}")

    def mean(self) -> float:
        return self.rho * (1 - self.p) / self.p

    def variance(self) -> float:
        return self.rho * (1 - self.p) / self.p**2

    def pmf(self, n):
        n = np.asarray(n, dtype=float)
        return np.exp(
            gammaln(self.rho + n) - gammaln(n + 1) - gammaln(self.rho)
            + self.rho * math.log(self.p) + n * math.log1p(-self.p)
        )


CountDistribution = Union[Poisson, Binomial, NegBinomial]


def sample_count(dist: CountDistribution, rng: np.random.Generator, size=None):
    """Draw ultimate claim numbers from ``dist``.

    Returns a Python int when ``size`` is None, else an int64 array.
    """
    if isinstance(dist, Poisson):
        out = rng.poisson(dist.lam, size)
    elif isinstance(dist, Binomial):
        out = rng.binomial(dist.m, dist.p, size)
    elif isinstance(dist, NegBinomial):
        # numpy's parameterisation has the same pmf (gamma-Poisson mixture)
        out = rng.negative_binomial(dist.rho, dist.p, size)
    else:
        raise TypeError(f"not a count distribution: {dist!r}")
    if size is None:
        return int(out)
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# Run-off pattern
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunOffPattern:
    """Probabilities ``pi[k]`` that a claim is paid in development year k+1.

    The values are normalised at construction.
    """

    pi: Tuple[float, ...]

    def __post_init__(self):
        values = np.asarray(self.pi, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a run-off pattern needs at least two development years")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("run-off pattern entries must be finite and nonnegative")
        total = values.sum()
        if total <= 0:
            raise ValueError("run-off pattern must not be all zero")
        object.__setattr__(self, "pi", tuple(float(v) for v in values / total))

    @property
    def I(self) -> int:
        return len(self.pi)

    @cached_property
    def array(self) -> np.ndarray:
        a = np.array(self.pi)
        a.setflags(write=False)
        return a


def make_pattern(
    kind: str,
    I: int,
    decay: Optional[float] = None,
    values: Optional[Sequence[float]] = None,
) -> RunOffPattern:
    """Build a run-off pattern.

    Args:
        kind: ``"linear"`` (weights I, I-1, ..., 1), ``"exponential"``
            (weights decay**0, decay**1, ...) or ``"explicit"``.
        I: number of development years.
        decay: ratio of consecutive exponential weights, in (0, 1); 0.5 if
            omitted.
        values: raw weights for ``"explicit"``; normalised on return.
    """
    if int(I) != I or I < 2:
        raise ValueError(f"I must be an integer >= 2, got {I}")
    I = int(I)
    if kind == "linear":
        weights = np.arange(I, 0, -1, dtype=float)
    elif kind == "exponential":
        decay = 0.5 if decay is None else float(decay)
        if not 0 < decay < 1:
            raise ValueError(f"exponential decay must lie in (0, 1), got {decay}")
        weights = decay ** np.arange(I, dtype=float)
    elif kind == "explicit":
        if values is None:
            raise ValueError("explicit pattern needs values")
        weights = np.asarray(values, dtype=float)
        if weights.size != I:
            raise ValueError(f"explicit pattern has {weights.size} values, expected I={I}")
        if np.any(weights < 0):
            raise ValueError("explicit pattern values must be nonnegative")
    else:
        raise ValueError(f"unknown pattern kind {kind!r}")
    return RunOffPattern(tuple(weights))


def sample_multinomial(n, pattern: RunOffPattern, rng: np.random.Generator) -> np.ndarray:
    """Split ``n`` claims over the development years.

    ``n`` may be a scalar (result has shape ``(I,)``) or an array of
    occurrence-year totals (result has shape ``n.shape + (I,)``). numpy draws
    the split as a chain of conditional binomials.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ValueError("claim numbers must be nonnegative")
    return rng.multinomial(n_arr, pattern.array)


# ---------------------------------------------------------------------------
# Claim sizes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pareto:
    """Pareto claim size with density ``(alpha-1) r**(alpha-1) x**(-alpha)`` on x > r.

    The tail index of this density is ``alpha - 1``, so the mean exists for
    alpha > 2 and the second moment for alpha > 3.
    """

    alpha: float
    r: float

    def __post_init__(self):
        if not self.alpha > 2:
            raise ValueError(f"Pareto alpha must exceed 2, got {self.alpha}")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"Pareto r must be positive, got {self.r}")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            tail = np.power(self.r / np.maximum(x, self.r), self.alpha - 1)
        return np.where(x > self.r, 1.0 - tail, 0.0)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.r, np.power(self.r / np.maximum(x, self.r), self.alpha - 1), 1.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return self.r * np.power(1.0 - u, -1.0 / (self.alpha - 1))


@dataclass(frozen=True)
class ShiftedExponential:
    """Exponential claim size shifted to start at ``r``: density ``mu exp(-mu (x-r))``."""

    mu: float
    r: float

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"exponential mu must be positive, got {self.mu}")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"exponential r must be positive, got {self.r}")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.r, -np.expm1(-self.mu * (x - self.r)), 0.0)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.r, np.exp(-self.mu * np.maximum(x - self.r, 0.0)), 1.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return self.r - np.log1p(-u) / self.mu


@dataclass(frozen=True)
class UnitClaim:
    """Every claim costs exactly one currency unit (pure claim-number model)."""

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 1.0, 1.0, 0.0)

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def quantile(self, u):
        return np.ones_like(np.asarray(u, dtype=float))


SeverityDistribution = Union[Pareto, ShiftedExponential, UnitClaim]


def sample_severity(dist: SeverityDistribution, rng: np.random.Generator, size=None):
    """Draw claim sizes by inversion of the CDF.

    Pareto and shifted exponential consume one uniform per claim, so two
    severities driven by the same stream are comonotone. UnitClaim consumes
    nothing.
    """
    if isinstance(dist, UnitClaim):
        return 1.0 if size is None else np.ones(size)
    if not isinstance(dist, (Pareto, ShiftedExponential)):
        raise TypeError(f"not a severity distribution: {dist!r}")
    u = rng.random(size)
    x = dist.quantile(u)
    return float(x) if size is None else x


def severity_moments(dist: SeverityDistribution) -> Tuple[float, Optional[float]]:
    """Return ``(E[X], E[X**2])``; the second moment is None if infinite."""
    if isinstance(dist, Pareto):
        a, r = dist.alpha, dist.r
        first = r * (a - 1) / (a - 2)
        second = r * r * (a - 1) / (a - 3) if a > 3 else None
        return first, second
    if isinstance(dist, ShiftedExponential):
        mu, r = dist.mu, dist.r
        return r + 1 / mu, r * r + 2 * r / mu + 2 / mu**2
    if isinstance(dist, UnitClaim):
        return 1.0, 1.0
    raise TypeError(f"not a severity distribution: {dist!r}")


def fit_exponential_to_pareto(p: Pareto) -> ShiftedExponential:
    """Shifted exponential with the same cut-off ``r`` and the same mean as ``p``."""
    if not p.alpha > 2:
        raise ValueError("Pareto needs alpha > 2 for a finite mean")
    return ShiftedExponential(mu=(p.alpha - 2) / p.r, r=p.r)
