import numpy as np
import pytest

from lossmesh import (
    HeteroProfile,
    exp_occupancy_rhs,
    hetero_arrival_flow,
    hetero_fixed_point,
    hetero_flows,
    hetero_occupancy_rhs,
    integrate_hetero,
    integrate_occupancy,
)
from lossmesh.phase_ode import random_simplex_point

TWO_TYPES = HeteroProfile((0.5, 0.5), (1, 2), lam=1.0, mu=1.0)


def random_state(profile, rng):
    return [rng.dirichlet(np.ones(c + 1)) for c in profile.capacities]


class TestProfile:
    def test_validation(self):
        with pytest.raises(ValueError):
            HeteroProfile((0.5, 0.4), (1, 2), lam=1.0, mu=1.0)
        with pytest.raises(ValueError):
            HeteroProfile((0.5, 0.5), (2, 1), lam=1.0, mu=1.0)
        with pytest.raises(ValueError):
            HeteroProfile((0.5, 0.5), (2, 2), lam=1.0, mu=1.0)  # indistinguishable
        with pytest.raises(ValueError):
            HeteroProfile((0.5, 0.5), (1, 2), lam=1.0, mu=0.0)

    def test_server_counts(self):
        counts = TWO_TYPES.server_counts(101)
        assert counts.sum() == 101
        assert set(counts) == {50, 51}
        prof = HeteroProfile((1 / 3, 2 / 3), (1, 2), lam=1.0, mu=1.0)
        assert prof.server_counts(9).tolist() == [3, 6]


class TestSingleTypeReduction:
    def test_rhs_bitwise(self):
        prof = HeteroProfile((1.0,), (5,), lam=1.3, mu=0.7)
        rng = np.random.default_rng(1)
        for d in (1, 2, 3):
            for _ in range(100):
                q = rng.dirichlet(np.ones(6))
                hetero = hetero_occupancy_rhs([q], prof, d)[0]
                homog = exp_occupancy_rhs(q, 1.3, 0.7, d)
                assert np.array_equal(hetero, homog)

    def test_trajectory_bitwise(self):
        prof = HeteroProfile((1.0,), (4,), lam=1.0, mu=1.0)
        q0 = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
        t_a, s_a = integrate_hetero([q0], prof, 2, 2.0, dt=1e-3, out_every=200)
        t_b, s_b = integrate_occupancy(q0, 1.0, 1.0, 2, 2.0, dt=1e-3, out_every=200)
        assert np.array_equal(t_a, t_b)
        assert np.array_equal(s_a, s_b)


class TestFlows:
    def test_empty_cluster_hand_values(self):
        # All servers idle, d=2.  A probe is type-2 w.p. 1/2 and then wins
        # outright (vacancy 2 beats 1; vacancy ties go to the larger
        # capacity), so type-1 only receives a job when both probes are
        # type-1: system flow 1/4, i.e. 0.5 per unit of type-1 mass.
        # Type-2 receives the rest: 3/4 system flow = 1.5 per type-2 mass.
        qs = [np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0])]
        assert hetero_arrival_flow(qs, TWO_TYPES, 0, 0, 2) == pytest.approx(0.5, abs=1e-15)
        assert hetero_arrival_flow(qs, TWO_TYPES, 1, 0, 2) == pytest.approx(1.5, abs=1e-15)
        flows = hetero_flows(qs, TWO_TYPES, 2)
        assert flows[0][1] == 0.0  # no mass at occupancy 1 yet
        assert flows[1][1] == flows[1][2] == 0.0

    def test_d1_flows_telescope_to_lambda(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            qs = random_state(TWO_TYPES, rng)
            flows = hetero_flows(qs, TWO_TYPES, 1)
            total = sum(g * f.sum() for g, f in zip(TWO_TYPES.gammas, flows))
            assert total == pytest.approx(TWO_TYPES.lam, abs=1e-12)

    def test_total_flow_splits_into_admitted_and_blocked(self):
        # blocked mass aggregates to (overall full fraction)^d
        rng = np.random.default_rng(3)
        for d in (1, 2, 3):
            qs = random_state(TWO_TYPES, rng)
            flows = hetero_flows(qs, TWO_TYPES, d)
            blocked = sum(
                g * f[c]
                for g, c, f in zip(TWO_TYPES.gammas, TWO_TYPES.capacities, flows)
            )
            full = sum(
                g * q[c]
                for g, c, q in zip(TWO_TYPES.gammas, TWO_TYPES.capacities, qs)
            )
            assert blocked == pytest.approx(TWO_TYPES.lam * full**d, abs=1e-12)

    def test_empty_level_has_zero_flow(self):
        qs = [np.array([0.0, 1.0]), np.array([0.3, 0.7, 0.0])]
        assert hetero_arrival_flow(qs, TWO_TYPES, 0, 0, 2) == 0.0
        with pytest.raises(ValueError):
            hetero_arrival_flow(qs, TWO_TYPES, 0, 2, 2)


class TestRhs:
    def test_mass_conserved_per_type(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(1000):
            qs = random_state(TWO_TYPES, rng)
            for dq in hetero_occupancy_rhs(qs, TWO_TYPES, 2):
                worst = max(worst, abs(dq.sum()))
        assert worst < 1e-14

    def test_pure_death_drift_direction(self):
        prof = HeteroProfile((0.5, 0.5), (1, 2), lam=0.0, mu=1.0)
        rng = np.random.default_rng(5)
        for _ in range(50):
            qs = random_state(prof, rng)
            for k, dq in enumerate(hetero_occupancy_rhs(qs, prof, 2)):
                assert dq[0] >= 0.0
                assert dq[prof.capacities[k]] <= 0.0

    def test_stationary_point_by_long_integration(self):
        qs = hetero_fixed_point(TWO_TYPES, 2, t_end=400.0, dt=5e-3, tol=1e-9)
        residual = max(
            np.max(np.abs(dq)) for dq in hetero_occupancy_rhs(qs, TWO_TYPES, 2)
        )
        assert residual < 1e-9
        for q, c in zip(qs, TWO_TYPES.capacities):
            assert q.size == c + 1
            assert q.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(q >= 0)


def test_packed_sections_keep_type_masses():
    q0s = [np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0])]
    _, states = integrate_hetero(q0s, TWO_TYPES, 2, 50.0, dt=5e-3)
    off = TWO_TYPES.offsets
    for k in range(TWO_TYPES.n_types):
        assert states[-1][off[k]:off[k + 1]].sum() == pytest.approx(1.0, abs=1e-10)
