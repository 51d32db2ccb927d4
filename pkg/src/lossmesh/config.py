"""Experiment configuration: strict JSON parsing, canonical form, hashing.

A config file is a JSON object with a ``mode`` plus up to four sections::

    {
      "mode": "fixedpoint" | "ode_exp" | "ode_phase" | "ode_hetero" |
              "simulate" | "insensitivity" | "transient",
      "system":   {"lam": 1.0, "mu": 1.0, "capacity": 5, "d": 2,
                   "distribution": {...} | "distributions": [{...}, ...] |
                   "profile": {"gammas": [...], "capacities": [...]}},
      "run":      {"n_servers": 10000, "t_total": 2000.0, "t_warmup": 1000.0,
                   "replications": 20, "seed": 1, "n_batches": 20,
                   "snapshot_every": 5.0, "without_replacement": false},
      "numerics": {"dt": 0.001, "t_ode": 200.0, "tolerance": 1e-8},
      "output":   {"out_dir": "out", "y_grid": [...], "sample_times": [...],
                   "full_state": false, "n_initial": 4}
    }

Unknown keys anywhere are rejected with the offending field path.  The
canonical form (defaults resolved, known keys only, sorted) feeds a SHA-256
hash that is embedded in every emitted CSV.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .distributions import ServiceDistribution, parse_distribution
from .errors import ConfigError
from .heterogeneous import HeteroProfile

__all__ = ["ExperimentConfig", "load_config", "parse_config", "write_config",
           "canonical_json", "config_hash"]

MODES = ("fixedpoint", "ode_exp", "ode_phase", "ode_hetero", "simulate",
         "insensitivity", "transient")

_SECTIONS = {
    "system": ("lam", "mu", "capacity", "d", "distribution", "distributions",
               "profile"),
    "run": ("n_servers", "t_total", "t_warmup", "replications", "seed",
            "n_batches", "snapshot_every", "without_replacement"),
    "numerics": ("dt", "t_ode", "tolerance"),
    "output": ("out_dir", "y_grid", "sample_times", "full_state", "n_initial"),
}

_NEEDS = {
    "fixedpoint": ("system.lam", "system.mu", "system.capacity", "system.d"),
    "ode_exp": ("system.lam", "system.mu", "system.capacity", "system.d",
                "numerics.t_ode"),
    "ode_phase": ("system.lam", "system.d", "system.capacity",
                  "system.distribution", "numerics.t_ode"),
    "ode_hetero": ("system.profile", "system.d", "numerics.t_ode"),
    "simulate": ("system.lam", "system.d", "system.distribution",
                 "run.n_servers", "run.t_total"),
    "insensitivity": ("system.lam", "system.mu", "system.capacity", "system.d",
                      "system.distributions", "run.n_servers", "run.t_total"),
    "transient": ("system.lam", "system.mu", "system.capacity", "system.d",
                  "system.distribution", "run.n_servers", "run.t_total",
                  "output.sample_times"),
}


def _require(cond, path, message):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _check_keys(section: dict, name: str):
    extra = set(section) - set(_SECTIONS[name])
    _require(not extra, f"{name}.{sorted(extra)[0]}" if extra else name,
             "unknown key")


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed, validated experiment description (canonical form)."""

    mode: str
    lam: float | None = None
    mu: float | None = None
    capacity: int | None = None
    d: int | None = None
    distributions: tuple = ()
    profile: HeteroProfile | None = None
    n_servers: int | None = None
    t_total: float | None = None
    t_warmup: float | None = None
    replications: int = 1
    seed: int = 0
    n_batches: int = 20
    snapshot_every: float | None = None
    without_replacement: bool = False
    dt: float | None = None
    t_ode: float | None = None
    tolerance: float | None = None
    out_dir: str = "out"
    y_grid: tuple = ()
    sample_times: tuple = ()
    full_state: bool = False
    n_initial: int = 4
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def distribution(self) -> ServiceDistribution | None:
        return self.distributions[0] if self.distributions else None


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping; raises :class:`ConfigError` naming the field."""
    _require(isinstance(data, dict), "<root>", "config must be a JSON object")
    extra = set(data) - {"mode", *_SECTIONS}
    _require(not extra, sorted(extra)[0] if extra else "<root>", "unknown key")
    mode = data.get("mode")
    _require(mode in MODES, "mode", f"must be one of {MODES}, got {mode!r}")

    sections = {}
    for name in _SECTIONS:
        section = data.get(name, {})
        _require(isinstance(section, dict), name, "must be an object")
        _check_keys(section, name)
        sections[name] = section
    system, run_s, numerics, output = (
        sections["system"], sections["run"], sections["numerics"], sections["output"]
    )

    for need in _NEEDS[mode]:
        sec, key = need.split(".")
        present = sections[sec].get(key) is not None
        if key == "distribution":
            present = present or sections[sec].get("distributions") is not None
        _require(present, need, f"required for mode {mode}")

    def positive(section, name, key, integer=False):
        value = section.get(key)
        if value is None:
            return None
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        _require(ok and value > 0, f"{name}.{key}", "must be a positive number")
        if integer:
            _require(float(value).is_integer(), f"{name}.{key}", "must be an integer")
            return int(value)
        return float(value)

    lam = positive(system, "system", "lam")
    mu = positive(system, "system", "mu")
    capacity = positive(system, "system", "capacity", integer=True)
    d = positive(system, "system", "d", integer=True)

    _require(not ("distribution" in system and "distributions" in system),
             "system.distributions", "give either one distribution or a list")
    dist_records = []
    if "distribution" in system:
        dist_records = [system["distribution"]]
    elif "distributions" in system:
        _require(isinstance(system["distributions"], list) and system["distributions"],
                 "system.distributions", "must be a non-empty list")
        dist_records = system["distributions"]
    try:
        distributions = tuple(parse_distribution(r) for r in dist_records)
    except ConfigError as exc:
        raise ConfigError(f"system.distribution: {exc}") from exc

    profile = None
    if "profile" in system:
        p = system["profile"]
        _require(isinstance(p, dict), "system.profile", "must be an object")
        extra = set(p) - {"gammas", "capacities"}
        _require(not extra, f"system.profile.{sorted(extra)[0]}" if extra else "",
                 "unknown key")
        _require(lam is not None and mu is not None, "system.profile",
                 "profile needs system.lam and system.mu")
        try:
            profile = HeteroProfile(tuple(p.get("gammas", ())),
                                    tuple(p.get("capacities", ())), lam, mu)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"system.profile: {exc}") from exc

    if mu is not None and distributions:
        for i, dist in enumerate(distributions):
            _require(abs(mu * dist.mean() - 1.0) <= 1e-9,
                     f"system.distributions[{i}]",
                     f"mean {dist.mean()!r} does not match 1/mu = {1.0 / mu!r}")

    n_servers = positive(run_s, "run", "n_servers", integer=True)
    t_total = positive(run_s, "run", "t_total")
    t_warmup = run_s.get("t_warmup")
    if t_warmup is not None:
        _require(isinstance(t_warmup, (int, float)) and 0 <= t_warmup,
                 "run.t_warmup", "must be nonnegative")
        _require(t_total is None or t_warmup < t_total, "run.t_warmup",
                 "must be below t_total")
        t_warmup = float(t_warmup)
    replications = positive(run_s, "run", "replications", integer=True) or 1
    seed = run_s.get("seed", 0)
    _require(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64,
             "run.seed", "must be an integer in [0, 2^64)")
    n_batches = positive(run_s, "run", "n_batches", integer=True) or 20
    _require(n_batches >= 2, "run.n_batches", "need at least 2 batches")
    snapshot_every = positive(run_s, "run", "snapshot_every")
    without_replacement = run_s.get("without_replacement", False)
    _require(isinstance(without_replacement, bool), "run.without_replacement",
             "must be true or false")

    dt = positive(numerics, "numerics", "dt")
    t_ode = positive(numerics, "numerics", "t_ode")
    tolerance = positive(numerics, "numerics", "tolerance")

    out_dir = output.get("out_dir", "out")
    _require(isinstance(out_dir, str) and out_dir, "output.out_dir",
             "must be a non-empty string")

    def float_list(key):
        values = output.get(key, ())
        _require(isinstance(values, (list, tuple)), f"output.{key}", "must be a list")
        for v in values:
            _require(isinstance(v, (int, float)) and math.isfinite(v) and v >= 0,
                     f"output.{key}", "entries must be nonnegative numbers")
        return tuple(float(v) for v in values)

    y_grid = float_list("y_grid")
    sample_times = float_list("sample_times")
    full_state = output.get("full_state", False)
    _require(isinstance(full_state, bool), "output.full_state", "must be true or false")
    n_initial = positive(output, "output", "n_initial", integer=True) or 4

    if mode == "ode_phase":
        from .distributions import MixedErlang

        _require(isinstance(distributions[0], MixedErlang), "system.distribution",
                 "ode_phase needs a mixed_erlang distribution")
    if mode in ("simulate",):
        _require((capacity is not None) != (profile is not None),
                 "system.capacity", "give exactly one of capacity or profile")

    canonical = {
        "mode": mode,
        "system": {k: v for k, v in (
            ("lam", lam), ("mu", mu), ("capacity", capacity), ("d", d),
            ("distributions", dist_records or None),
            ("profile", {"gammas": list(profile.gammas),
                         "capacities": list(profile.capacities)} if profile else None),
        ) if v is not None},
        "run": {k: v for k, v in (
            ("n_servers", n_servers), ("t_total", t_total), ("t_warmup", t_warmup),
            ("replications", replications), ("seed", seed), ("n_batches", n_batches),
            ("snapshot_every", snapshot_every),
            ("without_replacement", without_replacement),
        ) if v is not None},
        "numerics": {k: v for k, v in (
            ("dt", dt), ("t_ode", t_ode), ("tolerance", tolerance)) if v is not None},
        "output": {"out_dir": out_dir, "y_grid": list(y_grid),
                   "sample_times": list(sample_times), "full_state": full_state,
                   "n_initial": n_initial},
    }
    return ExperimentConfig(
        mode=mode, lam=lam, mu=mu, capacity=capacity, d=d,
        distributions=distributions, profile=profile, n_servers=n_servers,
        t_total=t_total, t_warmup=t_warmup, replications=replications, seed=seed,
        n_batches=n_batches, snapshot_every=snapshot_every,
        without_replacement=without_replacement, dt=dt, t_ode=t_ode,
        tolerance=tolerance, out_dir=out_dir, y_grid=y_grid,
        sample_times=sample_times, full_state=full_state, n_initial=n_initial,
        raw=canonical,
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(data)


def write_config(config: ExperimentConfig, path) -> Path:
    """Write the canonical form; ``load_config`` of the result round-trips."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(config) + "\n")
    return path


def canonical_json(config: ExperimentConfig) -> str:
    return json.dumps(config.raw, sort_keys=True, indent=2)


def config_hash(config: ExperimentConfig) -> str:
    """Stable 12-hex digest of the canonical config."""
    blob = json.dumps(config.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
