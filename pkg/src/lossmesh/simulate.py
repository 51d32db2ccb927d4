"""Finite-cluster discrete-event simulation of power-of-d loss systems.

Jobs arrive as a Poisson stream of rate ``N * lam`` and are routed to the
probe with the most free slots among ``d`` uniformly chosen servers (for a
single capacity this is exactly least-occupancy routing); vacancy ties go to
the larger capacity, remaining ties are broken uniformly.  A job admitted to
a full-free server samples its full service time immediately and its
departure is pre-scheduled -- routing never looks at ages, so this is exact
for any service law.  Ages are reconstructed from admission times only when
state snapshots are taken.

Randomness and reproducibility
------------------------------
All draws come from numpy PCG64 generators seeded as
``SeedSequence([seed, replication])`` with four spawned children, consumed in
a fixed per-arrival pattern:

* child 0 -- inter-arrival exponentials (one per arrival),
* child 1 -- probe indices (``d`` per arrival; uniform on ``[0, N)`` with
  replacement, or on ``[0, N - j)`` feeding a partial Fisher-Yates shuffle
  without replacement),
* child 2 -- tie-break uniforms (``d`` per arrival),
* child 3 -- service times (one per arrival, discarded when the job blocks).

Identical ``(config, seed)`` therefore reproduces every statistic bitwise,
independent of how the run is segmented internally.  Replications used for
averaging get derived seeds indexed by replication number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from .distributions import ServiceDistribution
from .errors import EstimationError
from .heterogeneous import HeteroProfile
from .stationary import StateDepArrivalLaw

__all__ = [
    "BLOCKED",
    "ClusterConfig",
    "ClusterStats",
    "route_power_of_d",
    "route_max_vacancy",
    "run",
    "occupancy_estimate",
    "blocking_estimate",
    "blocking_vs_tail_gap",
    "age_cdf_estimate",
    "transient_trace",
    "run_single_server",
    "SingleServerStats",
]

#: Returned by the routing functions when every probe is full.
BLOCKED = -1

_BLOCK_ARRIVALS = 1 << 19


# ---------------------------------------------------------------------------
# routing decisions
# ---------------------------------------------------------------------------

def _draw_probes(n_servers, d, rng, without_replacement):
    if without_replacement:
        if d > n_servers:
            raise ValueError("cannot probe more distinct servers than exist")
        picks = np.empty(d, dtype=np.int64)
        pool = {}
        for j in range(d):
            r = j + int(rng.integers(0, n_servers - j))
            picks[j] = pool.get(r, r)
            pool[r] = pool.get(j, j)
        return picks
    return rng.integers(0, n_servers, size=d)


def _choose_best(probes, vacancies, capacities, tie_uniforms):
    best = -1
    best_vac = -1
    best_cap = -1
    ties = 1.0
    for j, p in enumerate(probes):
        vac = vacancies[p]
        cp = capacities[p]
        if vac > best_vac or (vac == best_vac and cp > best_cap):
            best, best_vac, best_cap, ties = p, vac, cp, 1.0
        elif vac == best_vac and cp == best_cap:
            ties += 1.0
            if tie_uniforms[j] * ties < 1.0:
                best = p
    return int(best) if best_vac > 0 else BLOCKED


def route_power_of_d(occupancies, capacity, d, rng, *, without_replacement=False):
    """Route one job: probe ``d`` servers, pick the least occupied (uniform on
    ties); returns the server index, or ``BLOCKED`` when the least occupied
    probe is full."""
    occupancies = np.asarray(occupancies)
    n = occupancies.size
    if d < 1 or (without_replacement and d > n):
        raise ValueError("need 1 <= d (and d <= N without replacement)")
    caps = np.full(n, int(capacity), dtype=np.int64)
    probes = _draw_probes(n, d, rng, without_replacement)
    return _choose_best(probes, caps - occupancies, caps, rng.random(d))


def route_max_vacancy(occupancies, capacities, d, rng, *, without_replacement=False):
    """Route one job in a mixed-capacity cluster: pick the probe with the most
    free slots, break vacancy ties toward the larger capacity, remaining ties
    uniformly; ``BLOCKED`` when every probe is full."""
    occupancies = np.asarray(occupancies)
    capacities = np.asarray(capacities, dtype=np.int64)
    n = occupancies.size
    if d < 1 or (without_replacement and d > n):
        raise ValueError("need 1 <= d (and d <= N without replacement)")
    probes = _draw_probes(n, d, rng, without_replacement)
    return _choose_best(probes, capacities - occupancies, capacities, rng.random(d))


# ---------------------------------------------------------------------------
# cluster simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterConfig:
    """One simulation run.  Exactly one of ``capacity`` (homogeneous) or
    ``profile`` (mixed capacities) must be given; ``lam`` is the arrival rate
    per server.  Warm-up defaults to half the horizon; statistics use
    ``n_batches`` batch means.  ``snapshot_every`` (time units, after warm-up)
    enables age snapshots; ``sample_times`` records transient occupancy
    fractions."""

    n_servers: int
    lam: float
    d: int
    dist: ServiceDistribution
    t_total: float
    capacity: int | None = None
    profile: HeteroProfile | None = None
    t_warmup: float | None = None
    seed: int = 0
    replication: int = 0
    n_batches: int = 20
    without_replacement: bool = False
    snapshot_every: float | None = None
    sample_times: tuple = ()

    def __post_init__(self):
        if (self.capacity is None) == (self.profile is None):
            raise ValueError("give exactly one of capacity or profile")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.n_servers < 1 or self.lam <= 0 or self.d < 1 or self.t_total <= 0:
            raise ValueError("need n_servers >= 1, lam > 0, d >= 1, t_total > 0")
        if self.without_replacement and self.d > self.n_servers:
            raise ValueError("d exceeds cluster size in without-replacement mode")
        if self.t_warmup is None:
            object.__setattr__(self, "t_warmup", self.t_total / 2.0)
        if not 0.0 <= self.t_warmup < self.t_total:
            raise ValueError("need 0 <= t_warmup < t_total")
        if self.n_batches < 2:
            raise ValueError("need at least 2 batches")
        object.__setattr__(self, "sample_times", tuple(float(t) for t in self.sample_times))
        if any(t < 0 or t > self.t_total for t in self.sample_times):
            raise ValueError("sample times must lie in [0, t_total]")

    @property
    def capacities(self) -> tuple:
        if self.profile is not None:
            return self.profile.capacities
        return (self.capacity,)

    @property
    def n_types(self) -> int:
        return len(self.capacities)


@dataclass
class ClusterStats:
    """Accumulated statistics of one run.

    ``occ_time[b, k, n]`` is server-time spent by type-``k`` servers at
    occupancy ``n`` during batch ``b`` of the measurement window;
    ``arr_batch``/``blk_batch`` count measured arrivals and blocks per batch.
    Snapshots store per-server occupancy and the oldest in-service age.
    """

    config: ClusterConfig
    type_counts: np.ndarray
    occ_time: np.ndarray
    arr_batch: np.ndarray
    blk_batch: np.ndarray
    arrivals: int
    admissions: int
    blocks: int
    final_time: float
    snapshot_times: np.ndarray
    snapshot_occ: np.ndarray
    snapshot_maxage: np.ndarray
    trace_times: np.ndarray
    trace_fractions: np.ndarray

    @property
    def measurement_time(self) -> float:
        return self.config.t_total - self.config.t_warmup

    @property
    def batch_len(self) -> float:
        return self.measurement_time / self.config.n_batches


def _snapshot_maxage(occ, adm, t_now):
    slots = np.arange(adm.shape[1])
    active = slots[None, :] < occ[:, None]
    oldest = np.where(active, adm, np.inf).min(axis=1)
    return np.where(occ > 0, t_now - oldest, 0.0)


def run(config: ClusterConfig) -> ClusterStats:
    """Simulate one cluster run; fully deterministic given (config, seed)."""
    n = config.n_servers
    d = config.d
    if config.profile is not None:
        counts = config.profile.server_counts(n)
        typ = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
        cap = np.repeat(np.asarray(config.profile.capacities, dtype=np.int64), counts)
    else:
        counts = np.array([n])
        typ = np.zeros(n, dtype=np.int64)
        cap = np.full(n, config.capacity, dtype=np.int64)
    cap_max = int(cap.max())
    n_types = counts.size

    seq = np.random.SeedSequence([int(config.seed), int(config.replication)])
    rng_arrival, rng_probe, rng_tie, rng_service = (
        np.random.default_rng(s) for s in seq.spawn(4)
    )

    occ = np.zeros(n, dtype=np.int64)
    adm = np.zeros((n, cap_max), dtype=np.float64)
    dep = np.zeros((n, cap_max), dtype=np.float64)
    heap_cap = n * cap_max + 1
    heap_t = np.empty(heap_cap)
    heap_srv = np.empty(heap_cap, dtype=np.int64)
    heap_adm = np.empty(heap_cap)
    heap_seq = np.empty(heap_cap, dtype=np.int64)
    cnt = np.zeros((n_types, cap_max + 1), dtype=np.int64)
    for k in range(n_types):
        cnt[k, 0] = counts[k]

    n_batches = config.n_batches
    occ_time = np.zeros((n_batches, n_types, cap_max + 1))
    arr_batch = np.zeros(n_batches, dtype=np.int64)
    blk_batch = np.zeros(n_batches, dtype=np.int64)
    batch_len = (config.t_total - config.t_warmup) / n_batches

    fstate = np.zeros(2)
    istate = np.zeros(6, dtype=np.int64)
    fy_idx = np.empty(d, dtype=np.int64)
    fy_val = np.empty(d, dtype=np.int64)

    mean_inter = 1.0 / (n * config.lam)
    blocks = {"inter": None, "probes": None, "ties": None, "svc": None}

    def refill():
        m = _BLOCK_ARRIVALS
        blocks["inter"] = rng_arrival.exponential(mean_inter, size=m)
        if config.without_replacement:
            high = n - np.arange(d)
            blocks["probes"] = rng_probe.integers(0, high, size=(m, d), dtype=np.int64)
        else:
            blocks["probes"] = rng_probe.integers(0, n, size=(m, d), dtype=np.int64)
        blocks["ties"] = rng_tie.random(size=(m, d))
        blocks["svc"] = np.asarray(config.dist.sample(rng_service, size=m), dtype=np.float64)
        istate[_kernel.I_CURSOR] = 0

    def advance_to(t_end):
        while True:
            if blocks["inter"] is None or istate[_kernel.I_CURSOR] >= _BLOCK_ARRIVALS:
                refill()
            status = _kernel.run_segment(
                t_end, fstate, istate, occ, cap, typ, adm, dep,
                heap_t, heap_srv, heap_adm, heap_seq, cnt,
                blocks["inter"], blocks["probes"], blocks["ties"], blocks["svc"],
                occ_time, arr_batch, blk_batch,
                config.t_warmup, config.t_total, batch_len, n_batches,
                d, config.without_replacement, fy_idx, fy_val,
            )
            if status == _kernel.DONE:
                return

    if config.snapshot_every is not None:
        if config.snapshot_every <= 0:
            raise ValueError("snapshot_every must be positive")
        snap_times = np.arange(
            config.t_warmup + config.snapshot_every,
            config.t_total * (1 + 1e-12),
            config.snapshot_every,
        )
    else:
        snap_times = np.empty(0)

    checkpoints = sorted(
        {float(t) for t in config.sample_times}
        | {float(t) for t in snap_times}
        | {float(config.t_total)}
    )
    is_snap = {float(t) for t in snap_times}
    is_sample = {float(t) for t in config.sample_times}

    snap_occ, snap_maxage, snap_at = [], [], []
    trace_q, trace_at = [], []
    if 0.0 in is_sample:
        trace_at.append(0.0)
        trace_q.append(cnt / counts[:, None])
    for t_cp in checkpoints:
        advance_to(t_cp)
        if t_cp in is_snap:
            snap_at.append(t_cp)
            snap_occ.append(occ.astype(np.int8))
            snap_maxage.append(_snapshot_maxage(occ, adm, t_cp))
        if t_cp in is_sample and t_cp > 0.0:
            trace_at.append(t_cp)
            trace_q.append(cnt / counts[:, None])

    assert int(istate[_kernel.I_ARRIVALS]) == (
        int(istate[_kernel.I_ADMITS]) + int(istate[_kernel.I_BLOCKS])
    )
    return ClusterStats(
        config=config,
        type_counts=counts,
        occ_time=occ_time,
        arr_batch=arr_batch,
        blk_batch=blk_batch,
        arrivals=int(istate[_kernel.I_ARRIVALS]),
        admissions=int(istate[_kernel.I_ADMITS]),
        blocks=int(istate[_kernel.I_BLOCKS]),
        final_time=float(fstate[_kernel.F_NOW]),
        snapshot_times=np.asarray(snap_at),
        snapshot_occ=np.asarray(snap_occ, dtype=np.int8).reshape(len(snap_at), n),
        snapshot_maxage=np.asarray(snap_maxage).reshape(len(snap_at), n),
        trace_times=np.asarray(trace_at),
        trace_fractions=np.asarray(trace_q).reshape(len(trace_at), n_types, cap_max + 1),
    )


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _batch_fractions(stats: ClusterStats) -> np.ndarray:
    # (n_batches, n_types, cap_max+1) occupancy fractions per batch
    denom = stats.type_counts[None, :, None] * stats.batch_len
    return stats.occ_time / denom


def occupancy_estimate(stats: ClusterStats, k: int = 0):
    """Time-weighted occupancy fractions of type ``k`` with batch-means
    standard errors; returns ``(fractions, se)``."""
    if stats.config.n_batches < 2:
        raise EstimationError("need at least 2 batches")
    per_batch = _batch_fractions(stats)[:, k, : stats.config.capacities[k] + 1]
    q = per_batch.mean(axis=0)
    se = per_batch.std(axis=0, ddof=1) / math.sqrt(per_batch.shape[0])
    return q, se


def blocking_estimate(stats: ClusterStats):
    """Blocked fraction of measured arrivals with batch-means SE."""
    if np.any(stats.arr_batch == 0):
        raise EstimationError("a batch saw no arrivals; horizon too short")
    per_batch = stats.blk_batch / stats.arr_batch
    point = stats.blk_batch.sum() / stats.arr_batch.sum()
    se = per_batch.std(ddof=1) / math.sqrt(per_batch.size)
    return float(point), float(se)


def blocking_vs_tail_gap(stats: ClusterStats):
    """Per-batch gap between the blocked fraction and (full-server fraction)^d;
    returns ``(mean gap, se)`` for a paired consistency check.  Batches that
    saw no arrivals are skipped (at least two must remain)."""
    frac = _batch_fractions(stats)
    caps = stats.config.capacities
    weights = stats.type_counts / stats.type_counts.sum()
    full = sum(weights[k] * frac[:, k, caps[k]] for k in range(len(caps)))
    seen = stats.arr_batch > 0
    if seen.sum() < 2:
        raise EstimationError("fewer than 2 batches saw arrivals")
    gap = stats.blk_batch[seen] / stats.arr_batch[seen] - full[seen] ** stats.config.d
    return float(gap.mean()), float(gap.std(ddof=1) / math.sqrt(gap.size))


def age_cdf_estimate(stats: ClusterStats, n: int, y):
    """Snapshot average of the fraction of servers holding exactly ``n`` jobs
    with every in-service age at most ``y``; returns ``(estimates, se)``
    aligned with ``y`` (scalar or grid).

    Requires snapshots (``snapshot_every`` in the config).  Standard errors
    come from grouping consecutive snapshots into the configured number of
    batches.
    """
    caps = stats.config.capacities
    if len(caps) != 1:
        raise EstimationError("age estimation is defined for single-capacity runs")
    if not 0 <= n <= caps[0]:
        raise ValueError(f"occupancy {n} outside 0..{caps[0]}")
    n_snap = stats.snapshot_times.size
    if n_snap < 2:
        raise EstimationError("no snapshots collected; set snapshot_every")
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    at_n = stats.snapshot_occ == n
    per_snap = (
        (at_n[:, :, None] & (stats.snapshot_maxage[:, :, None] <= y_arr[None, None, :]))
        .mean(axis=1)
    )
    groups = np.array_split(per_snap, min(stats.config.n_batches, n_snap))
    means = np.stack([g.mean(axis=0) for g in groups])
    est = per_snap.mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(means.shape[0])
    if np.isscalar(y) or np.ndim(y) == 0:
        return float(est[0]), float(se[0])
    return est, se


def transient_trace(config: ClusterConfig, sample_times, replications: int = 1):
    """Occupancy fractions at ``sample_times`` averaged over ``replications``
    independent runs (derived seeds); returns ``(times, mean fractions)``
    with fractions shaped (times, types, levels)."""
    base = replace(config, sample_times=tuple(sample_times))
    acc = None
    times = None
    for rep in range(replications):
        stats = run(replace(base, replication=rep))
        times = stats.trace_times
        acc = stats.trace_fractions if acc is None else acc + stats.trace_fractions
    return times, acc / replications


# ---------------------------------------------------------------------------
# single server with state-dependent arrivals
# ---------------------------------------------------------------------------

@dataclass
class SingleServerStats:
    """Time-weighted occupancy (batched) and age snapshots of one server."""

    law: StateDepArrivalLaw
    occ_time: np.ndarray          # (n_batches, C+1)
    t_warmup: float
    t_total: float
    arrivals: int
    snapshot_times: np.ndarray
    snapshot_occ: np.ndarray
    snapshot_maxage: np.ndarray

    @property
    def batch_len(self) -> float:
        return (self.t_total - self.t_warmup) / self.occ_time.shape[0]

    def occupancy(self):
        per_batch = self.occ_time / self.batch_len
        q = per_batch.mean(axis=0)
        se = per_batch.std(axis=0, ddof=1) / math.sqrt(per_batch.shape[0])
        return q, se

    def age_fraction(self, n: int, y):
        """Snapshot fraction of time the server holds ``n`` jobs, all of age
        <= ``y``; returns ``(estimate, se)``."""
        if self.snapshot_times.size < 2:
            raise EstimationError("no snapshots collected")
        hit = (self.snapshot_occ == n) & (self.snapshot_maxage <= float(y))
        groups = np.array_split(hit.astype(float), min(20, hit.size))
        means = np.array([g.mean() for g in groups])
        return float(hit.mean()), float(means.std(ddof=1) / math.sqrt(means.size))


def run_single_server(law: StateDepArrivalLaw, t_total: float, seed: int = 0,
                      *, t_warmup: float | None = None, n_batches: int = 20,
                      snapshot_every: float | None = None) -> SingleServerStats:
    """Simulate a single server fed by a Poisson stream whose rate is
    ``law.alphas[n]`` while ``n`` jobs are in service (no arrivals offered at
    capacity), with general service times drawn from ``law.dist``.

    The arrival clock is re-drawn at every state change, which is exact for a
    state-dependent Poisson process.
    """
    if t_warmup is None:
        t_warmup = t_total / 2.0
    if not 0.0 <= t_warmup < t_total:
        raise ValueError("need 0 <= t_warmup < t_total")
    capacity = law.capacity
    alphas = law.alphas
    rng_arrival = np.random.default_rng(np.random.SeedSequence([int(seed), 0, 1]))
    rng_service = np.random.default_rng(np.random.SeedSequence([int(seed), 0, 2]))

    occ_time = np.zeros((n_batches, capacity + 1))
    batch_len = (t_total - t_warmup) / n_batches

    def accrue(t0, t1, n):
        a, b = max(t0, t_warmup), min(t1, t_total)
        while a < b:
            bi = min(int((a - t_warmup) / batch_len), n_batches - 1)
            edge = t_warmup + (bi + 1) * batch_len
            if edge <= a:
                bi = min(bi + 1, n_batches - 1)
                edge = t_warmup + (bi + 1) * batch_len
            top = b if (bi == n_batches - 1 or edge >= b) else edge
            occ_time[bi, n] += top - a
            a = top

    if snapshot_every:
        snap_times = list(np.arange(t_warmup + snapshot_every,
                                    t_total * (1 + 1e-12), snapshot_every))
    else:
        snap_times = []
    snap_iter = iter(snap_times)
    next_snap = next(snap_iter, math.inf)
    snaps_occ, snaps_age = [], []

    t = 0.0
    jobs = []  # active (departure, admission), kept sorted by departure
    arrivals = 0

    def next_arrival_after(now, n):
        if n >= capacity or alphas[n] == 0.0:
            return math.inf
        return now + rng_arrival.exponential(1.0 / alphas[n])

    t_arr = next_arrival_after(0.0, 0)
    while True:
        t_dep = jobs[0][0] if jobs else math.inf
        t_next = min(t_arr, t_dep, t_total)
        while next_snap <= t_next:
            snaps_occ.append(len(jobs))
            snaps_age.append(next_snap - min(a for _, a in jobs) if jobs else 0.0)
            next_snap = next(snap_iter, math.inf)
        accrue(t, t_next, len(jobs))
        t = t_next
        if t >= t_total:
            break
        if t_dep <= t_arr:
            jobs.pop(0)
        else:
            arrivals += 1
            dep_t = t + float(law.dist.sample(rng_service))
            jobs.append((dep_t, t))
            jobs.sort()
        t_arr = next_arrival_after(t, len(jobs))
    return SingleServerStats(
        law=law,
        occ_time=occ_time,
        t_warmup=t_warmup,
        t_total=t_total,
        arrivals=arrivals,
        snapshot_times=np.asarray(snap_times),
        snapshot_occ=np.asarray(snaps_occ, dtype=np.int64),
        snapshot_maxage=np.asarray(snaps_age),
    )
