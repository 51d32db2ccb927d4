"""Dispatch experiment configs to the engines and collect result tables.

Every mode returns a dict of named :class:`ResultTable` objects; the CLI
writes each one as ``<out_dir>/<name>.csv`` with the config hash and seed in
the metadata header.  Replicated simulations fan out over a process pool when
``threads > 1`` and merge in replication order, so results do not depend on
worker scheduling.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash
from .distributions import Exponential
from .errors import ConfigError, EstimationError
from .heterogeneous import hetero_fixed_point, hetero_occupancy_rhs, integrate_hetero
from .meanfield import blocking_probability, integrate_occupancy, solve_fixed_point
from .phase_ode import PhaseMeanField, random_simplex_point, squared_distance
from .simulate import (
    ClusterConfig,
    blocking_vs_tail_gap,
    occupancy_estimate,
    run,
    age_cdf_estimate,
)
from .stationary import InsensitiveFixedPoint, eval_pi
from .tables import ResultTable, compare_report

__all__ = ["run_experiment", "write_results"]


def _meta(config: ExperimentConfig, **extra) -> dict:
    meta = {
        "lossmesh": __version__,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "mode": config.mode,
    }
    meta.update(extra)
    return meta


def _map_ordered(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _out_every(n_steps: int, target_rows: int = 400) -> int:
    return max(1, n_steps // target_rows)


# ---------------------------------------------------------------------------
# mode implementations
# ---------------------------------------------------------------------------

def _mode_fixedpoint(config: ExperimentConfig) -> dict:
    tails = solve_fixed_point(config.lam, config.mu, config.capacity, config.d)
    occ = tails.occupancy()
    rows = [[n, tails.values[n], occ[n]] for n in range(config.capacity + 1)]
    meta = _meta(config, blocking=repr(blocking_probability(tails, config.d)))
    return {"fixedpoint": ResultTable(("n", "tail", "occupancy"), rows, meta)}


def _mode_ode_exp(config: ExperimentConfig) -> dict:
    dt = config.dt or 1e-3
    n_steps = int(round(config.t_ode / dt))
    q0 = np.zeros(config.capacity + 1)
    q0[0] = 1.0
    times, traj = integrate_occupancy(
        q0, config.lam, config.mu, config.d, config.t_ode,
        dt=dt, out_every=_out_every(n_steps),
    )
    cols = ("t",) + tuple(f"Q_{n}" for n in range(config.capacity + 1))
    rows = np.column_stack([times, traj])
    return {"ode_exp": ResultTable(cols, rows, _meta(config, dt=repr(dt)))}


def _mode_ode_phase(config: ExperimentConfig) -> dict:
    me = config.distribution
    model = PhaseMeanField(config.lam, config.d, config.capacity,
                           me.phase_rate, me.phase_probs)
    dt = config.dt or model.default_dt()
    tol = config.tolerance or 1e-10
    pi = model.equilibrium(tol=tol)
    n_steps = int(round(config.t_ode / dt))
    out_every = _out_every(n_steps)
    tables = {}
    summary = []
    for i in range(1, config.n_initial + 1):
        x0 = random_simplex_point(model.space.size, np.random.default_rng(i))
        traj = model.integrate(x0, config.t_ode, dt=dt, out_every=out_every)
        d2 = np.array([squared_distance(x, pi) for x in traj.states])
        marg = np.stack([model.occupancy_marginal(x) for x in traj.states])
        cols = ("t", "dE2") + tuple(f"Q_{n}" for n in range(config.capacity + 1))
        rows = np.column_stack([traj.times, d2, marg])
        if config.full_state:
            cols = cols + tuple(f"x_{j}" for j in range(model.space.size))
            rows = np.column_stack([rows, traj.states])
        tables[f"phase_traj_{i}"] = ResultTable(cols, rows, _meta(config, init=str(i)))
        summary.append([i, d2[-1]])
    tables["phase_summary"] = ResultTable(
        ("init", "dE2_final"), summary,
        _meta(config, equilibrium_residual=repr(float(np.max(np.abs(model.rhs(pi)))))),
    )
    return tables


def _mode_ode_hetero(config: ExperimentConfig) -> dict:
    profile = config.profile
    dt = config.dt or 1e-2
    n_steps = int(round(config.t_ode / dt))
    times, traj = integrate_hetero(
        profile.empty_state(), profile, config.d, config.t_ode,
        dt=dt, out_every=_out_every(n_steps),
    )
    cap_max = max(profile.capacities)
    off = profile.offsets
    cols = ("t", "k") + tuple(f"Q_{n}" for n in range(cap_max + 1))
    rows = []
    for t, flat in zip(times, traj):
        for k in range(profile.n_types):
            q = flat[off[k]:off[k + 1]]
            padded = np.full(cap_max + 1, np.nan)
            padded[: q.size] = q
            rows.append([t, k, *padded])
    final = [traj[-1][off[k]:off[k + 1]] for k in range(profile.n_types)]
    residual = max(np.max(np.abs(dq))
                   for dq in hetero_occupancy_rhs(final, profile, config.d))
    return {"ode_hetero": ResultTable(cols, rows,
                                      _meta(config, final_residual=repr(float(residual))))}


def _cluster_config(config: ExperimentConfig, *, replication: int = 0,
                    sample_times=()) -> ClusterConfig:
    return ClusterConfig(
        n_servers=config.n_servers,
        lam=config.lam,
        d=config.d,
        dist=config.distribution,
        t_total=config.t_total,
        capacity=config.capacity if config.profile is None else None,
        profile=config.profile,
        t_warmup=config.t_warmup,
        seed=config.seed,
        replication=replication,
        n_batches=config.n_batches,
        without_replacement=config.without_replacement,
        snapshot_every=config.snapshot_every,
        sample_times=tuple(sample_times),
    )


def _pooled_occupancy(stats_list, k: int = 0):
    # batches from every replication pool into one batch-means estimate
    per_batch = np.concatenate([
        s.occ_time[:, k, : s.config.capacities[k] + 1]
        / (s.type_counts[k] * s.batch_len)
        for s in stats_list
    ])
    q = per_batch.mean(axis=0)
    se = per_batch.std(axis=0, ddof=1) / np.sqrt(per_batch.shape[0])
    return q, se


def _occupancy_tables(config, stats_list, prefix: str) -> dict:
    rows = []
    n_types = stats_list[0].type_counts.size
    for k in range(n_types):
        q, se = _pooled_occupancy(stats_list, k)
        rows += [[k, n, q[n], se[n]] for n in range(q.size)]
    occ = ResultTable(("k", "n", "fraction", "se"), rows, _meta(config))
    arrivals = sum(s.arrivals for s in stats_list)
    blocks = sum(s.blocks for s in stats_list)
    admissions = sum(s.admissions for s in stats_list)
    meas_arr = sum(s.arr_batch.sum() for s in stats_list)
    meas_blk = sum(s.blk_batch.sum() for s in stats_list)
    try:
        gaps = [blocking_vs_tail_gap(s) for s in stats_list]
        gap = float(np.mean([g for g, _ in gaps]))
        gap_se = float(np.sqrt(np.mean([se**2 for _, se in gaps]) / len(gaps)))
    except EstimationError:
        gap = gap_se = float("nan")
    summary = ResultTable(
        ("arrivals", "admissions", "blocks", "blocking", "blocking_vs_tail_gap",
         "gap_se"),
        [[arrivals, admissions, blocks,
          meas_blk / meas_arr if meas_arr else 0.0, gap, gap_se]],
        _meta(config),
    )
    return {f"{prefix}_occupancy": occ, f"{prefix}_summary": summary}


def _mode_simulate(config: ExperimentConfig, threads: int) -> dict:
    cfgs = [_cluster_config(config, replication=r, sample_times=config.sample_times)
            for r in range(config.replications)]
    stats_list = _map_ordered(run, cfgs, threads)
    tables = _occupancy_tables(config, stats_list, "sim")
    if config.sample_times:
        rows = []
        for t_idx, t in enumerate(stats_list[0].trace_times):
            frac = np.mean([s.trace_fractions[t_idx] for s in stats_list], axis=0)
            for k in range(frac.shape[0]):
                rows.append([t, k, *frac[k]])
        cap_max = stats_list[0].trace_fractions.shape[2] - 1
        tables["sim_transient"] = ResultTable(
            ("t", "k") + tuple(f"Q_{n}" for n in range(cap_max + 1)), rows, _meta(config))
    if config.snapshot_every and config.y_grid and config.mu is not None \
            and config.profile is None:
        fp = InsensitiveFixedPoint.from_system(
            config.lam, config.mu, config.capacity, config.d, config.distribution)
        rows = []
        for n in range(config.capacity + 1):
            est, se = age_cdf_estimate(stats_list[0], n, np.asarray(config.y_grid))
            for y, e, s in zip(config.y_grid, est, se):
                rows.append([n, y, e, s, eval_pi(fp, n, y)])
        tables["sim_age"] = ResultTable(
            ("n", "y", "estimate", "se", "model_value"), rows, _meta(config))
    return tables


def _mode_insensitivity(config: ExperimentConfig, threads: int) -> dict:
    pi_exp = solve_fixed_point(config.lam, config.mu, config.capacity, config.d).occupancy()
    model = ResultTable(("n", "value"),
                        [[n, pi_exp[n]] for n in range(pi_exp.size)], _meta(config))
    cfgs = [replace(_cluster_config(config, replication=i), dist=dist)
            for i, dist in enumerate(config.distributions)]
    stats_list = _map_ordered(run, cfgs, threads)
    tables = {"insensitivity_model": model}
    report_rows = []
    all_pass = True
    for i, (dist, stats) in enumerate(zip(config.distributions, stats_list)):
        q, se = occupancy_estimate(stats)
        estimate = ResultTable(("n", "value", "se"),
                               [[n, q[n], se[n]] for n in range(q.size)], {})
        report = compare_report(model, estimate, ("n",), abs_tol=0.02)
        gap, gap_se = blocking_vs_tail_gap(stats)
        blocking_ok = abs(gap) <= 3.0 * gap_se + 1e-15
        dist_pass = report.metadata["aggregate"] == "pass" and blocking_ok
        all_pass &= dist_pass
        sup = float(np.max(np.abs(q - pi_exp)))
        report_rows.append([i, sup, float(np.max(report.column("tolerance"))),
                            gap, gap_se, float(dist_pass)])
        tables[f"insensitivity_occupancy_{i}"] = ResultTable(
            ("n", "fraction", "se", "model"),
            [[n, q[n], se[n], pi_exp[n]] for n in range(q.size)],
            _meta(config, distribution=type(dist).__name__),
        )
    tables["insensitivity_report"] = ResultTable(
        ("dist", "sup_deviation", "max_tolerance", "blocking_gap",
         "blocking_gap_se", "pass"),
        report_rows,
        _meta(config, aggregate="pass" if all_pass else "fail"),
    )
    return tables


def _mode_transient(config: ExperimentConfig, threads: int) -> dict:
    cfgs = [_cluster_config(config, replication=r, sample_times=config.sample_times)
            for r in range(config.replications)]
    stats_list = _map_ordered(run, cfgs, threads)
    times = stats_list[0].trace_times
    frac = np.mean([s.trace_fractions for s in stats_list], axis=0)
    cols = ("t",) + tuple(f"Q_{n}" for n in range(config.capacity + 1))
    rows = np.column_stack([times, frac[:, 0, :]])
    tables = {"transient": ResultTable(cols, rows,
                                       _meta(config, n_servers=str(config.n_servers)))}
    if isinstance(config.distribution, Exponential):
        dt = config.dt or 1e-3
        horizon = max(config.sample_times)
        q0 = np.zeros(config.capacity + 1)
        q0[0] = 1.0
        ot, otraj = integrate_occupancy(q0, config.lam, config.mu, config.d,
                                        horizon, dt=dt, out_every=1)
        ode_rows = [
            [t] + [float(np.interp(t, ot, otraj[:, n]))
                   for n in range(config.capacity + 1)]
            for t in times
        ]
        tables["transient_ode"] = ResultTable(cols, ode_rows, _meta(config))
    return tables


def run_experiment(config: ExperimentConfig, *, threads: int = 1) -> dict:
    """Run one experiment; returns named result tables (no files written)."""
    if config.mode == "fixedpoint":
        return _mode_fixedpoint(config)
    if config.mode == "ode_exp":
        return _mode_ode_exp(config)
    if config.mode == "ode_phase":
        return _mode_ode_phase(config)
    if config.mode == "ode_hetero":
        return _mode_ode_hetero(config)
    if config.mode == "simulate":
        return _mode_simulate(config, threads)
    if config.mode == "insensitivity":
        return _mode_insensitivity(config, threads)
    if config.mode == "transient":
        return _mode_transient(config, threads)
    raise ConfigError(f"unknown mode {config.mode!r}")


def write_results(config: ExperimentConfig, tables: dict, out_dir=None) -> list:
    """Write every table as ``<out_dir>/<name>.csv``; returns the paths."""
    from pathlib import Path

    base = Path(out_dir if out_dir is not None else config.out_dir)
    return [table.write_csv(base / f"{name}.csv") for name, table in tables.items()]
