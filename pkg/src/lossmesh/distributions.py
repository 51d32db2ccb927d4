"""Service-time laws used by the simulator and the stationary-law evaluator.

Every law exposes the same surface: ``mean``, ``cdf``/``survival``/``pdf``,
``hazard``, seeded ``sample``, and ``age_factor`` -- the normalized integral
``mu * integral_0^y survival(x) dx`` (with ``mu = 1/mean``), which is the
weight a single in-service job of age at most ``y`` contributes to the
stationary product form.  ``age_factor(inf)`` is exactly 1 because
``integral_0^inf survival = mean``.

Instances are immutable after construction and safe to share across threads;
random streams are always passed in per call and never stored.

Hazard-rate regularity (bounded + continuous on [0, inf)) holds for
exponential, mixed-Erlang, lognormal, and gamma with shape >= 1; it fails for
gamma with shape < 1 (hazard blows up at 0) and for the deterministic law
(no density at all).  Each class records this in ``bounded_continuous_hazard``
so experiments can report which laws sit inside the regularity assumptions
of the limit theory and which deliberately stress-test beyond them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .errors import ConfigError

__all__ = [
    "ServiceDistribution",
    "Exponential",
    "MixedErlang",
    "Gamma",
    "Lognormal",
    "Deterministic",
    "parse_distribution",
]

_QUAD_ABS_TOL = 1e-10


class ServiceDistribution:
    """Common surface for nonnegative service-time laws.

    Subclasses implement ``mean``, ``cdf``, ``survival``, ``pdf``, ``sample``
    and may override ``age_factor`` with a closed form.  The generic
    ``age_factor`` integrates the survival function with adaptive
    Gauss-Kronrod quadrature (absolute tolerance 1e-10).
    """

    #: True when the hazard rate is bounded and continuous on [0, inf).
    bounded_continuous_hazard: bool = True

    def mean(self) -> float:
        raise NotImplementedError

    @property
    def rate(self) -> float:
        """Service rate ``mu = 1 / mean``."""
        return 1.0 / self.mean()

    def cdf(self, x):
        raise NotImplementedError

    def survival(self, x):
        """P(X > x); defaults to ``1 - cdf`` unless a subclass knows better."""
        return 1.0 - self.cdf(x)

    def pdf(self, x):
        raise NotImplementedError

    def hazard(self, x):
        """Instantaneous completion rate ``pdf(x) / survival(x)``.

        Raises
        ------
        ValueError
            If ``survival(x) == 0`` (hazard undefined beyond the support).
        """
        s = self.survival(x)
        if np.any(np.asarray(s) <= 0.0):
            raise ValueError("hazard undefined beyond support (survival is 0)")
        return self.pdf(x) / s

    def sample(self, rng: np.random.Generator, size=None):
        """Draw i.i.d. service times; deterministic given the generator state."""
        raise NotImplementedError

    def age_factor(self, y) -> float:
        """``mu * integral_0^y survival(x) dx`` in [0, 1]; exactly 1 at ``y = inf``."""
        if y == math.inf:
            return 1.0
        y = float(y)
        if y < 0:
            raise ValueError("age bound must be nonnegative")
        if y == 0.0:
            return 0.0
        val, _ = integrate.quad(self.survival, 0.0, y, epsabs=_QUAD_ABS_TOL, limit=200)
        return min(self.rate * val, 1.0)


@dataclass(frozen=True)
class Exponential(ServiceDistribution):
    """Exponential law with the given rate (mean ``1/rate``)."""

    rate_param: float

    def __post_init__(self):
        if not (self.rate_param > 0 and math.isfinite(self.rate_param)):
            raise ValueError("exponential rate must be positive and finite")

    def mean(self):
        return 1.0 / self.rate_param

    def cdf(self, x):
        return -np.expm1(-self.rate_param * np.asarray(x, dtype=float))

    def survival(self, x):
        return np.exp(-self.rate_param * np.asarray(x, dtype=float))

    def pdf(self, x):
        return self.rate_param * np.exp(-self.rate_param * np.asarray(x, dtype=float))

    def hazard(self, x):
        return self.rate_param * np.ones_like(np.asarray(x, dtype=float))[()]

    def sample(self, rng, size=None):
        return rng.exponential(scale=1.0 / self.rate_param, size=size)

    def age_factor(self, y):
        if y == math.inf:
            return 1.0
        if y < 0:
            raise ValueError("age bound must be nonnegative")
        return float(-np.expm1(-self.rate_param * y))


@dataclass(frozen=True)
class MixedErlang(ServiceDistribution):
    """Mixture of Erlang laws: ``i`` exponential phases (rate ``phase_rate``)
    with probability ``phase_probs[i-1]``.  Mean is ``sum(i * p_i) / phase_rate``.
    """

    phase_rate: float
    phase_probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "phase_probs", tuple(float(p) for p in self.phase_probs))
        p = np.asarray(self.phase_probs)
        if not (self.phase_rate > 0 and math.isfinite(self.phase_rate)):
            raise ValueError("phase rate must be positive and finite")
        if p.size == 0 or np.any(p < 0):
            raise ValueError("phase probabilities must be nonnegative and nonempty")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"phase probabilities must sum to 1 (got {p.sum()!r})")

    @property
    def n_phases(self) -> int:
        return len(self.phase_probs)

    def mean(self):
        p = np.asarray(self.phase_probs)
        return float(np.arange(1, p.size + 1) @ p) / self.phase_rate

    def _erlang_terms(self, x):
        # rows: number of phases i = 1..M, evaluated at z = phase_rate * x
        z = self.phase_rate * np.asarray(x, dtype=float)
        i = np.arange(1, self.n_phases + 1).reshape((-1,) + (1,) * np.ndim(z))
        return i, z

    def cdf(self, x):
        i, z = self._erlang_terms(x)
        p = np.asarray(self.phase_probs).reshape(i.shape)
        return np.sum(p * special.gammainc(i, z), axis=0)

    def survival(self, x):
        i, z = self._erlang_terms(x)
        p = np.asarray(self.phase_probs).reshape(i.shape)
        return np.sum(p * special.gammaincc(i, z), axis=0)

    def pdf(self, x):
        i, z = self._erlang_terms(x)
        p = np.asarray(self.phase_probs).reshape(i.shape)
        dens = stats.gamma.pdf(np.asarray(x, dtype=float), a=i, scale=1.0 / self.phase_rate)
        return np.sum(p * dens, axis=0)

    def sample(self, rng, size=None):
        cum = np.cumsum(self.phase_probs)
        u = rng.random(size=size)
        k = np.searchsorted(cum, u, side="right") + 1
        k = np.minimum(k, self.n_phases)  # guard cum[-1] < 1 by rounding
        return rng.gamma(shape=k.astype(float), scale=1.0 / self.phase_rate)

    def age_factor(self, y):
        if y == math.inf:
            return 1.0
        if y < 0:
            raise ValueError("age bound must be nonnegative")
        # mu * int_0^y survival = sum_i p_i sum_{j=1..i} ErlangCdf(j)(y) / sum_i i p_i
        p = np.asarray(self.phase_probs)
        j = np.arange(1, self.n_phases + 1)
        erl_cdf = special.gammainc(j, self.phase_rate * float(y))
        partial = np.cumsum(erl_cdf)  # sum_{j<=i}
        return float(p @ partial) / float(j @ p)


@dataclass(frozen=True)
class Gamma(ServiceDistribution):
    """Gamma law with the given shape and scale (mean ``shape * scale``)."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma shape and scale must be positive")
        object.__setattr__(self, "bounded_continuous_hazard", self.shape >= 1.0)

    def mean(self):
        return self.shape * self.scale

    def cdf(self, x):
        return stats.gamma.cdf(x, a=self.shape, scale=self.scale)

    def survival(self, x):
        return stats.gamma.sf(x, a=self.shape, scale=self.scale)

    def pdf(self, x):
        return stats.gamma.pdf(x, a=self.shape, scale=self.scale)

    def sample(self, rng, size=None):
        return rng.gamma(shape=self.shape, scale=self.scale, size=size)


@dataclass(frozen=True)
class Lognormal(ServiceDistribution):
    """Lognormal law; parameters are the mean and sd of ``log X``."""

    log_mean: float
    log_sd: float

    def __post_init__(self):
        if not (self.log_sd > 0 and math.isfinite(self.log_mean)):
            raise ValueError("lognormal needs finite log_mean and positive log_sd")

    def mean(self):
        return math.exp(self.log_mean + 0.5 * self.log_sd**2)

    def cdf(self, x):
        return stats.lognorm.cdf(x, s=self.log_sd, scale=math.exp(self.log_mean))

    def survival(self, x):
        return stats.lognorm.sf(x, s=self.log_sd, scale=math.exp(self.log_mean))

    def pdf(self, x):
        return stats.lognorm.pdf(x, s=self.log_sd, scale=math.exp(self.log_mean))

    def sample(self, rng, size=None):
        return rng.lognormal(mean=self.log_mean, sigma=self.log_sd, size=size)


@dataclass(frozen=True)
class Deterministic(ServiceDistribution):
    """Point mass at ``value``.

    Has no density, so ``pdf``/``hazard`` are unsupported; it is admitted for
    simulation experiments precisely because it sits outside the bounded-
    continuous-hazard regularity class.
    """

    value: float
    bounded_continuous_hazard = False

    def __post_init__(self):
        if not (self.value > 0 and math.isfinite(self.value)):
            raise ValueError("deterministic service time must be positive and finite")

    def mean(self):
        return self.value

    def cdf(self, x):
        return np.where(np.asarray(x, dtype=float) >= self.value, 1.0, 0.0)[()]

    def survival(self, x):
        return np.where(np.asarray(x, dtype=float) >= self.value, 0.0, 1.0)[()]

    def pdf(self, x):
        raise NotImplementedError("deterministic law has no density")

    def hazard(self, x):
        raise NotImplementedError("deterministic law has no density; hazard undefined")

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def age_factor(self, y):
        if y == math.inf:
            return 1.0
        if y < 0:
            raise ValueError("age bound must be nonnegative")
        return min(float(y), self.value) / self.value


def _require_keys(record, kind, allowed, required_any):
    extra = set(record) - {"kind"} - set(allowed)
    if extra:
        raise ConfigError(f"distribution '{kind}': unknown keys {sorted(extra)}")
    for group in required_any:
        if not any(k in record for k in group):
            raise ConfigError(f"distribution '{kind}': one of {group} is required")


def parse_distribution(record: dict) -> ServiceDistribution:
    """Build a law from a tagged config record.

    Accepted forms::

        {"kind": "exponential", "rate": 1.0}            (or "mean")
        {"kind": "mixed_erlang", "phase_rate": 2.1, "phase_probs": [0.3, 0.3, 0.4]}
        {"kind": "gamma", "shape": 2, "scale": 0.5}     (or "mean" instead of "scale")
        {"kind": "lognormal", "log_mean": 0.0, "log_sd": 1.0}  (or "mean" instead of "log_mean")
        {"kind": "deterministic", "value": 1.0}
    """
    if not isinstance(record, dict) or "kind" not in record:
        raise ConfigError("distribution record must be a dict with a 'kind' tag")
    kind = record["kind"]
    try:
        if kind == "exponential":
            _require_keys(record, kind, ("rate", "mean"), (("rate", "mean"),))
            rate = record.get("rate", None)
            if rate is None:
                rate = 1.0 / record["mean"]
            return Exponential(float(rate))
        if kind == "mixed_erlang":
            _require_keys(record, kind, ("phase_rate", "phase_probs"),
                          (("phase_rate",), ("phase_probs",)))
            return MixedErlang(float(record["phase_rate"]), tuple(record["phase_probs"]))
        if kind == "gamma":
            _require_keys(record, kind, ("shape", "scale", "mean"),
                          (("shape",), ("scale", "mean")))
            shape = float(record["shape"])
            scale = record.get("scale", None)
            if scale is None:
                scale = record["mean"] / shape
            return Gamma(shape, float(scale))
        if kind == "lognormal":
            _require_keys(record, kind, ("log_mean", "log_sd", "mean"),
                          (("log_mean", "mean"), ("log_sd",)))
            sd = float(record["log_sd"])
            log_mean = record.get("log_mean", None)
            if log_mean is None:
                log_mean = math.log(record["mean"]) - 0.5 * sd**2
            return Lognormal(float(log_mean), sd)
        if kind == "deterministic":
            _require_keys(record, kind, ("value",), (("value",),))
            return Deterministic(float(record["value"]))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"distribution '{kind}': {exc}") from exc
    raise ConfigError(f"unknown distribution kind {kind!r}")
