"""lossmesh: power-of-d loss clusters -- simulation, mean-field ODEs, and
stationary-law cross-checks.

The package has three legs that validate each other:

* algebraic fixed points and occupancy ODEs (:mod:`lossmesh.meanfield`,
  :mod:`lossmesh.heterogeneous`),
* the phase-resolved mean field for mixed-Erlang service
  (:mod:`lossmesh.phase_ode`) and the joint occupancy/age product form
  (:mod:`lossmesh.stationary`),
* a finite-cluster discrete-event simulator (:mod:`lossmesh.simulate`).

Experiments are declared as JSON configs and driven by the ``lossmesh`` CLI
(:mod:`lossmesh.cli`) or directly through the library.
"""

from .distributions import (
    Deterministic,
    Exponential,
    Gamma,
    Lognormal,
    MixedErlang,
    ServiceDistribution,
    parse_distribution,
)
from .errors import ConfigError, ConvergenceError, EstimationError, IntegrationError
from .heterogeneous import (
    HeteroProfile,
    hetero_arrival_flow,
    hetero_fixed_point,
    hetero_flows,
    hetero_occupancy_rhs,
    integrate_hetero,
)
from .meanfield import (
    TailVector,
    birth_death_stationary,
    blocking_probability,
    exp_occupancy_rhs,
    integrate_occupancy,
    lambda_map,
    power_sum_ratio,
    solve_fixed_point,
)
from .phase_ode import (
    PhaseMeanField,
    PhaseSpace,
    enumerate_states,
    euclidean_distance,
    occupancy_marginal,
    random_simplex_point,
    squared_distance,
)
from .stationary import (
    InsensitiveFixedPoint,
    StateDepArrivalLaw,
    eval_pi,
    single_server_occupancy,
    single_server_product_form,
)

__version__ = "0.1.0"
