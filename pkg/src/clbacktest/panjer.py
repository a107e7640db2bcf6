"""Compound Poisson aggregate loss on a lattice, used as an analytic oracle.

The severity is discretised by rounding to the lattice ``{0, h, 2h, ...}``
and the aggregate distribution follows from Panjer's recursion. Lattice
point ``k*h`` carries the mass of the interval ``((k-1/2)h, (k+1/2)h]``,
which is why empirical CDFs are read at cell upper edges below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .distributions import SeverityDistribution, sample_severity, severity_moments

#: Lattices at most this long are evaluated with plain dot products only.
DIRECT_BLOCK = 2048


@dataclass(frozen=True, eq=False)
class DiscretePmf:
    """Masses ``f[j] = P(X = j*h)`` on the lattice ``j = 0..J``.

    ``eps_trunc`` is the probability beyond the last lattice point.
    """

    h: float
    masses: np.ndarray
    eps_trunc: float = 0.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step width h must be positive, got {self.h}")
        masses = np.array(self.masses, dtype=float)
        if masses.ndim != 1 or masses.size == 0:
            raise ValueError("masses must be a nonempty vector")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)

    @property
    def J(self) -> int:
        return self.masses.size - 1

    @property
    def grid(self) -> np.ndarray:
        return self.h * np.arange(self.masses.size)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.masses)

    def mean(self) -> float:
        return float(np.dot(self.grid, self.masses))


def discretize_severity(dist: SeverityDistribution, h: float, J: int) -> DiscretePmf:
    """Round the severity onto ``0, h, ..., J*h``.

    ``f[0] = F(h/2)`` and ``f[j] = F((j+1/2)h) - F((j-1/2)h)``; differences
    are taken on the survival function to keep precision in the tail.
    """
    if not h > 0:
        raise ValueError(f"step width h must be positive, got {h}")
    if J < 0:
        raise ValueError("J must be nonnegative")
    edges = h * (np.arange(J + 1) + 0.5)
    sf = np.asarray(dist.sf(edges), dtype=float)
    masses = np.empty(J + 1)
    masses[0] = 1.0 - sf[0]
    masses[1:] = sf[:-1] - sf[1:]
    return DiscretePmf(h=h, masses=np.maximum(masses, 0.0), eps_trunc=float(sf[-1]))


def panjer_compound_poisson(lam: float, sev: DiscretePmf, block: int = DIRECT_BLOCK) -> DiscretePmf:
    """Aggregate pmf of a Poisson(``lam``) sum of claims distributed as ``sev``.

    Runs ``g[k] = (lam/k) * sum_{j=1..k} j f[j] g[k-j]`` from
    ``g[0] = exp(-lam (1 - f[0]))``. Within a block of ``block`` lattice
    points the sums are plain dot products; the contribution of each
    finished block to all later points is added with one FFT convolution,
    which keeps long heavy-tailed grids to O(J**2 / block) work.
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError(f"Poisson lambda must be positive, got {lam}")
    f = sev.masses
    J = sev.J
    exponent = -lam * (1.0 - f[0])
    g0 = math.exp(exponent)
    if g0 == 0.0:
        raise ValueError(
            f"P(S=0) = exp({exponent:.1f}) underflows; rescale h or use extended precision"
        )
    a = lam * np.arange(J + 1) * f
    g = np.zeros(J + 1)
    g[0] = g0
    acc = a * g0  # running sum_{i < block start} a[k-i] g[i]
    for start in range(1, J + 1, block):
        stop = min(start + block, J + 1)
        for k in range(start, stop):
            s = acc[k] + np.dot(a[1 : k - start + 1], g[k - 1 : start - 1 : -1])
            g[k] = max(s, 0.0) / k
        if stop <= J:
            contrib = fftconvolve(g[start:stop], a[: J + 1 - start])
            acc[stop:] += contrib[stop - start : J + 1 - start]
    eps = max(0.0, 1.0 - float(g.sum()))
    return DiscretePmf(h=sev.h, masses=g, eps_trunc=eps)


def grid_length(lam: float, dist: SeverityDistribution, h: float, eps: float = 1e-3) -> int:
    """A starting lattice length for an aggregate mass loss of about ``eps``.

    Combines a body bound (mean plus ten standard deviations, when finite)
    with the single-big-claim tail ``lam * P(X > x) = eps``.
    """
    m1, m2 = severity_moments(dist)
    body = lam * m1
    if m2 is not None:
        body += 10.0 * math.sqrt(lam * m2)
    tail = float(dist.quantile(1.0 - min(eps / lam, 0.5))) + lam * m1
    return int(math.ceil(max(body, tail) / h)) + 1


def aggregate_pmf(lam: float, dist: SeverityDistribution, h: float, J: int = None, eps: float = 1e-3) -> DiscretePmf:
    """Panjer pmf on a grid long enough that the lost mass is at most ``eps``.

    With ``J`` given the grid is used as is; otherwise it starts from
    :func:`grid_length` and grows by half until the target is met.
    """
    if J is not None:
        return panjer_compound_poisson(lam, discretize_severity(dist, h, J))
    J = grid_length(lam, dist, h, eps)
    while True:
        pmf = panjer_compound_poisson(lam, discretize_severity(dist, h, J))
        if pmf.eps_trunc <= eps:
            return pmf
        if J > 2**23:
            raise ValueError(f"lattice of {J} points still loses {pmf.eps_trunc:.2e} mass")
        J = int(J * 1.5)


def ecdf_on_grid(pmf: DiscretePmf, samples) -> np.ndarray:
    """Fraction of samples at or below each cell upper edge ``(k+1/2)h``."""
    samples = np.sort(np.asarray(samples, dtype=float))
    edges = pmf.grid + 0.5 * pmf.h
    return np.searchsorted(samples, edges, side="right") / samples.size


def max_cdf_deviation(analytic: DiscretePmf, samples) -> float:
    """Largest gap between the lattice CDF and the empirical CDF of ``samples``."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    return float(np.max(np.abs(analytic.cdf() - ecdf_on_grid(analytic, samples))))


def sample_aggregate(lam: float, dist: SeverityDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent draws of ``S = X_1 + ... + X_N`` with ``N ~ Poisson(lam)``."""
    counts = rng.poisson(lam, n)
    sizes = sample_severity(dist, rng, size=int(counts.sum()))
    owner = np.repeat(np.arange(n), counts)
    return np.bincount(owner, weights=sizes, minlength=n)

