"""Mean-field machinery for the homogeneous loss cluster with exponential service.

The stationary regime is characterized by a tail vector ``P`` fixed under the
composition of two maps: occupancy-dependent arrival rates

    lambda_n = lambda * (P_n^d - P_{n+1}^d) / (P_n - P_{n+1})

and the birth-death balance ``lambda_n (P_n - P_{n+1}) = (n+1) mu (P_{n+1} - P_{n+2})``.
All ``(a^d - b^d)/(a - b)`` ratios are evaluated through ``power_sum_ratio``
(the finite geometric sum), which removes every 0/0 without changing values.

The transient counterpart is the occupancy-level ODE ``dQ/dt`` assembled from
level-crossing flows; its equilibrium coincides with the algebraic fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .ode import rk4

__all__ = [
    "power_sum_ratio",
    "TailVector",
    "lambda_map",
    "birth_death_stationary",
    "solve_fixed_point",
    "blocking_probability",
    "exp_occupancy_rhs",
    "integrate_occupancy",
]


def _psr(a: float, b: float, d: int) -> float:
    # sum_{i=0}^{d-1} a^i b^(d-1-i); equals (a^d - b^d)/(a - b) with no division
    acc = 0.0
    ai = 1.0
    for i in range(d):
        acc += ai * b ** (d - 1 - i)
        ai *= a
    return acc


def power_sum_ratio(a: float, b: float, d: int) -> float:
    """Evaluate ``sum_{i=0}^{d-1} a^i b^{d-1-i}`` for ``0 <= b <= a <= 1``.

    This equals ``(a^d - b^d)/(a - b)`` when ``a != b`` and ``d * a^(d-1)``
    when ``a == b``, but performs no division, so tied tails are exact.
    """
    if d < 1 or d != int(d):
        raise ValueError("d must be a positive integer")
    if not (-1e-12 <= b <= a <= 1.0 + 1e-12):
        raise ValueError(f"need 0 <= b <= a <= 1, got a={a!r}, b={b!r}")
    return _psr(float(a), float(b), int(d))


@dataclass(frozen=True)
class TailVector:
    """Monotone occupancy tails ``P_0 = 1 >= P_1 >= ... >= P_C >= P_{C+1} = 0``.

    ``values[n]`` is the stationary fraction of servers holding at least ``n``
    jobs; differences give the occupancy distribution.
    """

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        v.flags.writeable = False
        if v.ndim != 1 or v.size < 2:
            raise ValueError("tail vector needs at least entries P_0 and P_{C+1}")
        if abs(v[0] - 1.0) > 1e-9 or abs(v[-1]) > 1e-9:
            raise ValueError("tail vector must start at 1 and end at 0")
        if np.any(np.diff(v) > 1e-12) or np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("tail vector must be monotone nonincreasing in [0, 1]")

    @property
    def capacity(self) -> int:
        return self.values.size - 2

    @classmethod
    def from_occupancy(cls, q) -> "TailVector":
        """Tails of an occupancy distribution (``q`` sums to 1 within 1e-10)."""
        q = np.asarray(q, dtype=float)
        if abs(q.sum() - 1.0) > 1e-10 or np.any(q < -1e-12):
            raise ValueError("occupancy distribution must be nonnegative and sum to 1")
        tails = np.empty(q.size + 1)
        tails[-1] = 0.0
        tails[:-1] = np.cumsum(q[::-1])[::-1]
        tails[0] = 1.0
        return cls(tails)

    def occupancy(self) -> np.ndarray:
        """Occupancy probabilities ``q_n = P_n - P_{n+1}``."""
        return -np.diff(self.values)


def _tail_values(tails) -> np.ndarray:
    if isinstance(tails, TailVector):
        return tails.values
    return np.asarray(tails, dtype=float)


def lambda_map(tails, lam: float, d: int) -> np.ndarray:
    """Occupancy-dependent arrival rates ``lambda_0 .. lambda_C`` seen by a
    server, given the cluster tail vector."""
    p = _tail_values(tails)
    c = p.size - 2
    return np.array([lam * _psr(p[n], p[n + 1], d) for n in range(c + 1)])


def birth_death_stationary(birth, mu: float) -> np.ndarray:
    """Stationary law of the birth-death chain with birth rates
    ``birth[0..C-1]``, death rate ``n * mu`` in state ``n``, capacity
    ``C = len(birth)``: ``q_n`` proportional to ``prod_{i<=n} birth[i-1]/(i mu)``."""
    birth = np.asarray(birth, dtype=float)
    if np.any(birth < 0) or mu <= 0:
        raise ValueError("birth rates must be nonnegative and mu positive")
    w = np.empty(birth.size + 1)
    w[0] = 1.0
    for n in range(1, w.size):
        w[n] = w[n - 1] * birth[n - 1] / (n * mu)
    return w / w.sum()


def solve_fixed_point(lam: float, mu: float, capacity: int, d: int,
                      *, tol: float = 1e-13, max_iter: int = 10**6) -> TailVector:
    """Tail vector fixed under arrival-rate/birth-death composition.

    Plain iteration from the ``d = 1`` solution (truncated Poisson), which is
    already exact for ``d = 1``.  Converges when successive iterates differ by
    less than ``tol`` in sup norm; the result then satisfies the fixed-point
    equation with residual below 1e-12.
    """
    if lam <= 0 or mu <= 0 or capacity < 1 or d < 1:
        raise ValueError("need lam > 0, mu > 0, capacity >= 1, d >= 1")
    p = TailVector.from_occupancy(
        birth_death_stationary(np.full(capacity, lam), mu)
    ).values
    diff = np.inf
    for _ in range(max_iter):
        rates = lambda_map(p, lam, d)
        q = birth_death_stationary(rates[:capacity], mu)
        p_next = TailVector.from_occupancy(q).values
        diff = float(np.max(np.abs(p_next - p)))
        p = p_next
        if diff < tol:
            return TailVector(p)
    raise ConvergenceError(
        f"fixed-point iteration did not reach {tol} in {max_iter} iterations "
        f"(last residual {diff:.3e})",
        residual=diff,
        iterations=max_iter,
    )


def blocking_probability(tails, d: int) -> float:
    """Fraction of arrivals lost: all ``d`` probes land on full servers, ``(P_C)^d``."""
    p = _tail_values(tails)
    return float(p[-2] ** d)


def _flow_rhs(q: np.ndarray, up: np.ndarray, mu: float) -> np.ndarray:
    # Assemble dq from level-crossing flows.  up[n] is the admission flow
    # n -> n+1; the death flow n+1 -> n is (n+1) mu q[n+1].  Every flow enters
    # twice with opposite signs and identical float value, so mass is
    # conserved to summation roundoff.  Shared by the single-type and
    # multi-type dynamics so type-count reductions are bitwise.
    c = q.size - 1
    dq = np.empty(c + 1)
    for n in range(c + 1):
        acc = -(n * mu) * q[n]
        if n > 0:
            acc += up[n - 1]
        if n < c:
            acc -= up[n]
            acc += ((n + 1) * mu) * q[n + 1]
        dq[n] = acc
    return dq


def exp_occupancy_rhs(q, lam: float, mu: float, d: int) -> np.ndarray:
    """Time derivative of the occupancy distribution under exponential service.

    ``dQ_n/dt`` balances admissions ``lambda * psr(R_n, R_{n+1}, d) * Q_n``
    against departures ``n mu Q_n``, with ``R_n = sum_{j>=n} Q_j``.
    Components sum to zero.
    """
    q = np.asarray(q, dtype=float)
    c = q.size - 1
    tails = np.empty(c + 2)
    tails[-1] = 0.0
    tails[:-1] = np.cumsum(q[::-1])[::-1]
    up = np.empty(c) if c else np.empty(0)
    for n in range(c):
        up[n] = lam * _psr(tails[n], tails[n + 1], d) * q[n]
    return _flow_rhs(q, up, mu)


def integrate_occupancy(q0, lam: float, mu: float, d: int, t_end: float,
                        *, dt: float = 1e-3, out_every: int = 0):
    """Integrate the occupancy ODE from ``q0``; returns (times, trajectory)."""
    q0 = np.asarray(q0, dtype=float)
    n_steps = int(round(t_end / dt))
    return rk4(
        lambda q: exp_occupancy_rhs(q, lam, mu, d),
        q0,
        dt,
        n_steps,
        out_every=out_every,
        sections=[(0, q0.size, 1.0)],
    )
