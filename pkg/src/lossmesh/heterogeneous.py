"""Occupancy mean-field for clusters with several server capacities.

Arrivals go to the probe with maximum vacancy; vacancy ties across types go
to the larger capacity, ties within a type are uniform.  For type ``k`` at
occupancy ``n`` (vacancy ``v = C_k - n``) the admission flow is

    flow = lam * psr(A, B, d) * Q_{k,n}

where ``A`` aggregates, over the whole cluster, the fraction of servers the
tagged class beats or ties with, and ``B = A - gamma_k Q_{k,n}`` the fraction
it strictly beats.  The flow form (rate times mass) is used throughout so
empty levels contribute exactly zero instead of 0/0.  With one type this
collapses bitwise to the homogeneous dynamics in :mod:`lossmesh.meanfield`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .meanfield import _flow_rhs, _psr
from .ode import rk4

__all__ = [
    "HeteroProfile",
    "hetero_arrival_flow",
    "hetero_flows",
    "hetero_occupancy_rhs",
    "integrate_hetero",
    "hetero_fixed_point",
]


@dataclass(frozen=True)
class HeteroProfile:
    """Cluster composition: fraction ``gammas[k]`` of servers has capacity
    ``capacities[k]``; arrivals at rate ``lam`` per server, service rate ``mu``.

    Capacities must be strictly increasing: types with equal capacity are
    indistinguishable to max-vacancy routing and should be merged into one.
    """

    gammas: tuple
    capacities: tuple
    lam: float
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))
        g = np.asarray(self.gammas)
        c = np.asarray(self.capacities)
        if g.size == 0 or g.size != c.size:
            raise ValueError("need one fraction per capacity")
        if np.any(g <= 0) or abs(g.sum() - 1.0) > 1e-12:
            raise ValueError("type fractions must be positive and sum to 1")
        if np.any(c < 1) or np.any(np.diff(c) <= 0):
            raise ValueError("capacities must be positive and strictly increasing")
        if not (self.lam >= 0 and self.mu > 0):
            raise ValueError("lam must be nonnegative and mu positive")

    @property
    def n_types(self) -> int:
        return len(self.gammas)

    @property
    def offsets(self) -> tuple:
        """Slice offsets of each type's occupancy block in a packed vector."""
        sizes = [c + 1 for c in self.capacities]
        return tuple(np.concatenate([[0], np.cumsum(sizes)]).astype(int))

    def empty_state(self) -> list:
        return [np.eye(c + 1)[0] for c in self.capacities]

    def server_counts(self, n_servers: int) -> np.ndarray:
        """Integer server counts per type (largest remainders, total exact)."""
        exact = np.asarray(self.gammas) * n_servers
        counts = np.floor(exact).astype(int)
        short = n_servers - counts.sum()
        order = np.argsort(-(exact - counts))
        counts[order[:short]] += 1
        if np.any(counts == 0):
            raise ValueError(f"{n_servers} servers cannot realize fractions {self.gammas}")
        return counts


def _type_tails(qs) -> list:
    # tails[k][m] = sum_{j >= m} q_k[j], with a trailing exact zero
    tails = []
    for q in qs:
        q = np.asarray(q, dtype=float)
        t = np.empty(q.size + 1)
        t[-1] = 0.0
        t[:-1] = np.cumsum(q[::-1])[::-1]
        tails.append(t)
    return tails


def _beat_mass(tails_i, cap_i: int, gamma_i: float, vacancy: int) -> float:
    # gamma_i * fraction of type-i servers with vacancy <= `vacancy`
    if vacancy < 0:
        return 0.0
    m = cap_i - vacancy
    if m <= 0:
        return gamma_i * tails_i[0]
    return gamma_i * tails_i[m]


def _aggregates(tails, profile: HeteroProfile, k: int, n: int):
    v = profile.capacities[k] - n
    a = 0.0
    b = 0.0
    for i in range(profile.n_types):
        g = profile.gammas[i]
        c = profile.capacities[i]
        lo = _beat_mass(tails[i], c, g, v - 1)
        hi = _beat_mass(tails[i], c, g, v)
        a += hi if i <= k else lo
        b += hi if i < k else lo
    return a, b


def hetero_arrival_flow(qs, profile: HeteroProfile, k: int, n: int, d: int) -> float:
    """Probability flow (per unit type-``k`` mass and time) of arrivals landing
    on type-``k`` servers at occupancy ``n``.

    This is the arrival rate times the level mass ``Q_{k,n}``, which stays
    well defined (zero) on empty levels.  At ``n = C_k`` it is the blocked
    flow absorbed by full servers of that type.
    """
    if not 0 <= n <= profile.capacities[k]:
        raise ValueError(f"occupancy {n} out of range for capacity {profile.capacities[k]}")
    tails = _type_tails(qs)
    a, b = _aggregates(tails, profile, k, n)
    return profile.lam * _psr(a, b, d) * float(np.asarray(qs[k], dtype=float)[n])


def hetero_flows(qs, profile: HeteroProfile, d: int) -> list:
    """Arrival flows for every type and level (index ``C_k`` = blocked flow)."""
    tails = _type_tails(qs)
    flows = []
    for k, q in enumerate(qs):
        q = np.asarray(q, dtype=float)
        c = profile.capacities[k]
        if q.size != c + 1:
            raise ValueError(f"type {k} occupancy vector must have length {c + 1}")
        f = np.empty(c + 1)
        for n in range(c + 1):
            a, b = _aggregates(tails, profile, k, n)
            f[n] = profile.lam * _psr(a, b, d) * q[n]
        flows.append(f)
    return flows


def hetero_occupancy_rhs(qs, profile: HeteroProfile, d: int) -> list:
    """Per-type time derivatives of the occupancy distributions."""
    flows = hetero_flows(qs, profile, d)
    return [
        _flow_rhs(np.asarray(q, dtype=float), flows[k][: profile.capacities[k]], profile.mu)
        for k, q in enumerate(qs)
    ]


def _pack(qs) -> np.ndarray:
    return np.concatenate([np.asarray(q, dtype=float) for q in qs])


def _unpack(flat: np.ndarray, profile: HeteroProfile) -> list:
    off = profile.offsets
    return [flat[off[k]:off[k + 1]] for k in range(profile.n_types)]


def integrate_hetero(q0s, profile: HeteroProfile, d: int, t_end: float,
                     *, dt: float = 1e-3, out_every: int = 0):
    """Integrate the multi-type occupancy ODE; returns (times, packed states).

    Split packed rows with ``profile.offsets``.
    """
    off = profile.offsets

    def rhs(flat):
        return _pack(hetero_occupancy_rhs(_unpack(flat, profile), profile, d))

    n_steps = int(round(t_end / dt))
    sections = [(off[k], off[k + 1], 1.0) for k in range(profile.n_types)]
    return rk4(rhs, _pack(q0s), dt, n_steps, out_every=out_every, sections=sections)


def hetero_fixed_point(profile: HeteroProfile, d: int, *, t_end: float = 1000.0,
                       dt: float = 1e-2, tol: float = 1e-8) -> list:
    """Stationary occupancy per type, found by integrating from empty until
    the derivative residual falls below ``tol`` (sup norm)."""
    _, states = integrate_hetero(profile.empty_state(), profile, d, t_end, dt=dt)
    qs = _unpack(states[-1], profile)
    residual = max(np.max(np.abs(dq)) for dq in hetero_occupancy_rhs(qs, profile, d))
    if residual > tol:
        raise ConvergenceError(
            f"stationary residual {residual:.3e} above {tol} after t={t_end}",
            residual=residual,
        )
    return [q.copy() for q in qs]
