"""Mean-field ODE over phase-resolved server states for mixed-Erlang service.

A server with ``n`` jobs is described by the ordered tuple of remaining phase
counts ``(l_1, ..., l_n)`` with ``1 <= l_i <= M``; the state space is all such
tuples up to the capacity, padded with zeros.  The dynamics combine

  (i)   arrival inflow  -- mass from the state with job ``b`` removed, weight
        ``p_{l_b} / n`` times the occupancy-level arrival rate at ``n - 1``;
  (ii)  arrival outflow when below capacity;
  (iii) departure inflow from states with one extra job in its last phase;
  (iv)  phase-advance inflow from states with ``l_b + 1`` at position ``b``;
  (v)   phase-completion outflow at rate ``n * phase_rate``.

Everything except the arrival rates is linear, so the right-hand side is
assembled once as sparse matrices: one for the phase/departure terms and one
per occupancy level for arrivals, contracted against the level rates at each
evaluation.  This keeps a full RK4 step at a few sparse mat-vecs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse

from .errors import ConvergenceError, IntegrationError
from .meanfield import _psr, solve_fixed_point
from .ode import rk4

__all__ = [
    "PhaseSpace",
    "enumerate_states",
    "PhaseMeanField",
    "Trajectory",
    "occupancy_marginal",
    "euclidean_distance",
    "squared_distance",
    "random_simplex_point",
]

_MAX_STATES = 10**6


class PhaseSpace:
    """Enumerated phase states for ``capacity`` jobs and ``max_phases`` phases.

    States are ordered lexicographically by (occupancy, tuple); the index is
    stable and exposed through ``index_of``.  Size is
    ``sum_{n=0}^{C} M^n`` and refuses to exceed 10^6.
    """

    def __init__(self, capacity: int, max_phases: int):
        if capacity < 1 or max_phases < 1:
            raise ValueError("capacity and max_phases must be >= 1")
        size = sum(max_phases**n for n in range(capacity + 1))
        if size > _MAX_STATES:
            raise ValueError(f"state space would hold {size} > {_MAX_STATES} states")
        self.capacity = capacity
        self.max_phases = max_phases
        states = []
        for n in range(capacity + 1):
            pad = (0,) * (capacity - n)
            for tup in itertools.product(range(1, max_phases + 1), repeat=n):
                states.append(tup + pad)
        self.states = np.array(states, dtype=np.int8)
        self.z = np.count_nonzero(self.states, axis=1).astype(np.int64)
        self._index = {tuple(int(v) for v in s): i for i, s in enumerate(states)}

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def index_of(self, state) -> int:
        return self._index[tuple(int(v) for v in state)]

    def state_tuple(self, idx: int) -> tuple:
        return tuple(int(v) for v in self.states[idx])


def enumerate_states(capacity: int, max_phases: int) -> PhaseSpace:
    """All ordered phase tuples, indexed lexicographically by (occupancy, tuple)."""
    return PhaseSpace(capacity, max_phases)


@njit(cache=True)
def _rhs_into(out, x, indptr, indices, data, z, cap, lam, d):
    # same arithmetic as PhaseMeanField.rhs, written as loops for the jitted
    # integrator: occupancy aggregation, tail rates, then the stacked matvec
    n_states = x.shape[0]
    agg = np.zeros(cap + 1)
    for i in range(n_states):
        agg[z[i]] += x[i]
    tails = np.zeros(cap + 2)
    for n in range(cap, -1, -1):
        tails[n] = tails[n + 1] + agg[n]
    rates = np.empty(cap)
    for n in range(cap):
        a = tails[n]
        b = tails[n + 1]
        acc = 0.0
        ai = 1.0
        for i in range(d):
            acc += ai * b ** (d - 1 - i)
            ai *= a
        rates[n] = lam * acc
    for i in range(n_states):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc
    for n in range(cap):
        base = (n + 1) * n_states
        r = rates[n]
        for i in range(n_states):
            acc = 0.0
            for k in range(indptr[base + i], indptr[base + i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] += r * acc


@njit(cache=True)
def _integrate_jit(x0, dt, n_steps, out_every, indptr, indices, data, z, cap,
                   lam, d, out_times, out_states, renorm_tol):
    n = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    row = 0
    out_times[row] = 0.0
    out_states[row] = x
    row += 1
    half = dt / 2.0
    sixth = dt / 6.0
    for step in range(1, n_steps + 1):
        _rhs_into(k1, x, indptr, indices, data, z, cap, lam, d)
        for i in range(n):
            tmp[i] = x[i] + half * k1[i]
        _rhs_into(k2, tmp, indptr, indices, data, z, cap, lam, d)
        for i in range(n):
            tmp[i] = x[i] + half * k2[i]
        _rhs_into(k3, tmp, indptr, indices, data, z, cap, lam, d)
        for i in range(n):
            tmp[i] = x[i] + dt * k3[i]
        _rhs_into(k4, tmp, indptr, indices, data, z, cap, lam, d)
        total = 0.0
        for i in range(n):
            x[i] = x[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
            total += x[i]
        if not np.isfinite(total):
            return step
        if abs(total - 1.0) > renorm_tol:
            scale = 1.0 / total
            for i in range(n):
                x[i] *= scale
        if (out_every > 0 and step % out_every == 0) or step == n_steps:
            out_times[row] = step * dt
            for i in range(n):
                out_states[row, i] = x[i]
            row += 1
    return 0


@dataclass
class Trajectory:
    """Sampled ODE solution: ``states[i]`` is the state at ``times[i]``."""

    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


class PhaseMeanField:
    """Phase-resolved mean field for a given load, choice count, and service mix."""

    def __init__(self, lam: float, d: int, capacity: int,
                 phase_rate: float, phase_probs):
        if lam < 0 or d < 1 or phase_rate <= 0:
            raise ValueError("need lam >= 0, d >= 1, phase_rate > 0")
        probs = np.asarray(phase_probs, dtype=float)
        if probs.size < 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("phase_probs must be nonnegative and sum to 1")
        self.lam = float(lam)
        self.d = int(d)
        self.phase_rate = float(phase_rate)
        self.phase_probs = probs
        self.space = PhaseSpace(capacity, probs.size)
        self.service_mean = float(np.arange(1, probs.size + 1) @ probs) / self.phase_rate
        self.mu = 1.0 / self.service_mean
        self._build_matrices()

    # -- construction -------------------------------------------------------

    def _build_matrices(self):
        sp = self.space
        c, m = sp.capacity, sp.max_phases
        mu_p = self.phase_rate
        n_states = sp.size
        lin_r, lin_c, lin_v = [], [], []
        arr = [( [], [], [] ) for _ in range(c)]

        def add_lin(i, j, v):
            lin_r.append(i); lin_c.append(j); lin_v.append(v)

        for idx in range(n_states):
            l = sp.state_tuple(idx)
            n = int(sp.z[idx])
            if n:
                add_lin(idx, idx, -n * mu_p)                      # (v)
            for b in range(n):                                     # (iv)
                if l[b] < m:
                    src = l[:b] + (l[b] + 1,) + l[b + 1:]
                    add_lin(idx, sp.index_of(src), mu_p)
            if n < c:
                for b in range(n + 1):                             # (iii)
                    src = l[:b] + (1,) + l[b:c - 1]
                    add_lin(idx, sp.index_of(src), mu_p)
                rows, cols, vals = arr[n]                          # (ii)
                rows.append(idx); cols.append(idx); vals.append(-1.0)
            if n:
                rows, cols, vals = arr[n - 1]                      # (i)
                for b in range(n):
                    src = l[:b] + l[b + 1:] + (0,)
                    rows.append(idx)
                    cols.append(sp.index_of(src))
                    vals.append(self.phase_probs[l[b] - 1] / n)

        shape = (n_states, n_states)
        linear = sparse.coo_matrix((lin_v, (lin_r, lin_c)), shape=shape)
        arrivals = [
            sparse.coo_matrix((v, (r, cc)), shape=shape) for r, cc, v in arr
        ]
        self._combined = sparse.vstack([linear] + arrivals, format="csr")

    # -- evaluation ---------------------------------------------------------

    def occupancy_marginal(self, x) -> np.ndarray:
        """Aggregate phase mass into occupancy probabilities ``Q_0 .. Q_C``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.space.size,):
            raise ValueError(f"state must have length {self.space.size}")
        return np.bincount(self.space.z, weights=x, minlength=self.space.capacity + 1)

    def _tails(self, x) -> np.ndarray:
        agg = np.bincount(self.space.z, weights=x, minlength=self.space.capacity + 1)
        tails = np.empty(agg.size + 1)
        tails[-1] = 0.0
        tails[:-1] = np.cumsum(agg[::-1])[::-1]
        return tails

    def arrival_rate(self, n: int, x) -> float:
        """Level arrival rate ``lam * psr(R_n, R_{n+1}, d)``; identical to the
        ratio form ``lam (R_n^d - R_{n+1}^d) / (R_n - R_{n+1})`` but defined
        for empty levels too."""
        if not 0 <= n <= self.space.capacity - 1:
            raise ValueError("occupancy must satisfy 0 <= n <= capacity - 1")
        tails = self._tails(np.asarray(x, dtype=float))
        return self.lam * _psr(tails[n], tails[n + 1], self.d)

    def rhs(self, x) -> np.ndarray:
        """Derivative of the phase-state distribution; components sum to 0."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.space.size,):
            raise ValueError(f"state must have length {self.space.size}")
        c = self.space.capacity
        tails = self._tails(x)
        rates = np.array(
            [self.lam * _psr(tails[n], tails[n + 1], self.d) for n in range(c)]
        )
        y = self._combined.dot(x)
        n_states = self.space.size
        return y[:n_states] + rates @ y[n_states:].reshape(c, n_states)

    # -- integration and equilibrium ----------------------------------------

    def default_dt(self) -> float:
        return 1e-3 / self.phase_rate

    def empty_state(self) -> np.ndarray:
        x = np.zeros(self.space.size)
        x[0] = 1.0
        return x

    def integrate(self, x0, t_end: float, *, dt: float | None = None,
                  out_every: int = 0, engine: str = "jit") -> Trajectory:
        """Fixed-step RK4 from ``x0``; mass is renormalized whenever the total
        drifts beyond 1e-12, and NaN/Inf aborts with the step index.

        ``engine="jit"`` runs the compiled stepper; ``engine="python"`` runs
        the same scheme through :func:`lossmesh.ode.rk4` (reference path,
        agrees with the jitted one to roundoff).
        """
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.space.size,):
            raise ValueError(f"state must have length {self.space.size}")
        if dt is None:
            dt = self.default_dt()
        n_steps = int(round(t_end / dt))
        if n_steps == 0:
            return Trajectory(np.zeros(1), x0[None, :].copy())
        if engine == "python":
            times, states = rk4(self.rhs, x0, dt, n_steps, out_every=out_every,
                                sections=[(0, self.space.size, 1.0)])
            return Trajectory(times, states)
        if engine != "jit":
            raise ValueError("engine must be 'jit' or 'python'")
        if out_every > 0:
            n_rows = 1 + n_steps // out_every + (1 if n_steps % out_every else 0)
        else:
            n_rows = 2
        times = np.empty(n_rows)
        states = np.empty((n_rows, self.space.size))
        csr = self._combined
        bad_step = _integrate_jit(
            x0, dt, n_steps, out_every, csr.indptr, csr.indices, csr.data,
            self.space.z, self.space.capacity, self.lam, self.d,
            times, states, 1e-12,
        )
        if bad_step:
            raise IntegrationError(
                f"state left the simplex (non-finite mass) at step {bad_step}",
                step=int(bad_step),
            )
        return Trajectory(times, states)

    def pi_exp(self) -> np.ndarray:
        """Occupancy fixed point of the equal-mean exponential system."""
        return solve_fixed_point(
            self.lam, self.mu, self.space.capacity, self.d
        ).occupancy()

    def equilibrium(self, *, method: str = "product", tol: float = 1e-10,
                    t_end: float = 500.0, dt: float | None = None) -> np.ndarray:
        """Stationary phase distribution, verified to satisfy ``|rhs| <= tol``.

        method="product" builds the candidate in which each of ``n`` in-service
        jobs independently carries ``r`` remaining phases with probability
        ``sum_{i>=r} p_i / sum_i i p_i`` (the equilibrium residual-phase law)
        and level masses follow the exponential-case fixed point.  If the
        candidate misses the tolerance, or with method="integrate", the
        equilibrium is found by long integration from empty instead.
        """
        if method not in ("product", "integrate"):
            raise ValueError("method must be 'product' or 'integrate'")
        if method == "product":
            probs = self.phase_probs
            residual_phase = np.cumsum(probs[::-1])[::-1] / (
                np.arange(1, probs.size + 1) @ probs
            )
            per_job = np.where(
                self.space.states > 0,
                residual_phase[np.maximum(self.space.states, 1) - 1],
                1.0,
            ).prod(axis=1)
            x = self.pi_exp()[self.space.z] * per_job
            if np.max(np.abs(self.rhs(x))) <= tol:
                return x
        traj = self.integrate(self.empty_state(), t_end, dt=dt)
        x = np.maximum(traj.final, 0.0)
        x /= x.sum()
        residual = float(np.max(np.abs(self.rhs(x))))
        if residual > tol:
            raise ConvergenceError(
                f"equilibrium residual {residual:.3e} above {tol}", residual=residual
            )
        return x


def occupancy_marginal(space: PhaseSpace, x) -> np.ndarray:
    """Occupancy probabilities ``Q_n = sum over states with n jobs``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (space.size,):
        raise ValueError(f"state must have length {space.size}")
    return np.bincount(space.z, weights=x, minlength=space.capacity + 1)


def squared_distance(x, pi) -> float:
    """Squared euclidean distance between two state vectors."""
    x = np.asarray(x, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if x.shape != pi.shape:
        raise ValueError("states must live on the same space")
    diff = x - pi
    return float(diff @ diff)


def euclidean_distance(x, pi) -> float:
    return math.sqrt(squared_distance(x, pi))


def random_simplex_point(size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the probability simplex via exponential spacings."""
    e = rng.exponential(1.0, size=size)
    return e / e.sum()
