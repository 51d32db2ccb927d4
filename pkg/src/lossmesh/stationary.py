"""Stationary product-form laws for server occupancy with job ages.

The cluster's stationary regime factorizes: the probability that a server
holds ``n`` jobs with ages coordinatewise below ``y_1..y_n`` is the
exponential-case occupancy mass at ``n`` times one equilibrium age weight
``mu * integral_0^{y_i} survival`` per job.  The same structure solves the
single server with state-dependent Poisson arrivals ``alpha_n``, which serves
as the classical oracle: feeding the cluster's own level rates back in must
reproduce the cluster law exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import ServiceDistribution
from .meanfield import TailVector, solve_fixed_point

__all__ = [
    "InsensitiveFixedPoint",
    "eval_pi",
    "StateDepArrivalLaw",
    "single_server_product_form",
    "single_server_occupancy",
]


def _age_product(dist: ServiceDistribution, cache: dict, y_values) -> float:
    prod = 1.0
    for y in sorted(y_values):
        key = float(y)
        if key not in cache:
            cache[key] = dist.age_factor(key)
        prod *= cache[key]
    return prod


def _normalize_ages(n: int, y) -> tuple:
    if np.isscalar(y) or y is None:
        y = (math.inf if y is None else y,) * n
    y = tuple(float(v) for v in y)
    if len(y) != n:
        raise ValueError(f"need {n} age bounds, got {len(y)}")
    if any(v < 0 for v in y):
        raise ValueError("age bounds must be nonnegative")
    return y


@dataclass(frozen=True)
class InsensitiveFixedPoint:
    """Joint occupancy/age stationary law built from the exponential-case
    occupancy fixed point and a service law of matching mean (``mu * mean = 1``)."""

    pi_exp: np.ndarray
    dist: ServiceDistribution
    mu: float
    _age_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.pi_exp, dtype=float)
        object.__setattr__(self, "pi_exp", q)
        if np.any(q < -1e-12) or abs(q.sum() - 1.0) > 1e-10:
            raise ValueError("pi_exp must be an occupancy distribution")
        if abs(self.mu * self.dist.mean() - 1.0) > 1e-9:
            raise ValueError("service law mean must equal 1/mu within 1e-9")

    @classmethod
    def from_system(cls, lam: float, mu: float, capacity: int, d: int,
                    dist: ServiceDistribution) -> "InsensitiveFixedPoint":
        """Build from system parameters; the occupancy part always comes from
        the exponential-case fixed-point solver."""
        pi = solve_fixed_point(lam, mu, capacity, d).occupancy()
        return cls(pi, dist, mu)

    @property
    def capacity(self) -> int:
        return self.pi_exp.size - 1

    def tails(self) -> TailVector:
        return TailVector.from_occupancy(self.pi_exp)


def eval_pi(fp: InsensitiveFixedPoint, n: int, y=None) -> float:
    """Stationary mass of servers with ``n`` jobs whose ages are coordinatewise
    at most ``y`` (scalar, sequence of length ``n``, or +inf).

    Symmetric in the age bounds; with all bounds infinite it reduces to the
    occupancy mass ``pi_exp[n]``.
    """
    if not 0 <= n <= fp.capacity:
        raise ValueError(f"occupancy {n} outside 0..{fp.capacity}")
    ages = _normalize_ages(n, y)
    return float(fp.pi_exp[n]) * _age_product(fp.dist, fp._age_cache, ages)


@dataclass(frozen=True)
class StateDepArrivalLaw:
    """Single server with Poisson arrivals at rate ``alphas[n]`` while ``n``
    jobs are in service (capacity ``len(alphas)``) and general service."""

    alphas: np.ndarray
    dist: ServiceDistribution
    _age_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        object.__setattr__(self, "alphas", a)
        if a.ndim != 1 or a.size < 1 or np.any(a < 0):
            raise ValueError("arrival rates must be a nonnegative vector")

    @property
    def capacity(self) -> int:
        return self.alphas.size

    @property
    def mu(self) -> float:
        return self.dist.rate


def _occupancy_weights(law: StateDepArrivalLaw) -> np.ndarray:
    w = np.empty(law.capacity + 1)
    w[0] = 1.0
    for i in range(1, w.size):
        w[i] = w[i - 1] * law.alphas[i - 1] / (i * law.mu)
    return w


def single_server_occupancy(law: StateDepArrivalLaw) -> np.ndarray:
    """Stationary occupancy distribution ``pi(n)`` of the single server."""
    w = _occupancy_weights(law)
    return w / w.sum()


def single_server_product_form(law: StateDepArrivalLaw, n: int, y=None) -> float:
    """Stationary mass of the single server at ``n`` jobs with ages at most ``y``:
    occupancy weight times one equilibrium age weight per job."""
    if not 0 <= n <= law.capacity:
        raise ValueError(f"occupancy {n} outside 0..{law.capacity}")
    ages = _normalize_ages(n, y)
    occ = single_server_occupancy(law)
    return float(occ[n]) * _age_product(law.dist, law._age_cache, ages)
