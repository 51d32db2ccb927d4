import math

import numpy as np
import pytest

from lossmesh import (
    ConvergenceError,
    TailVector,
    birth_death_stationary,
    blocking_probability,
    exp_occupancy_rhs,
    integrate_occupancy,
    lambda_map,
    power_sum_ratio,
    solve_fixed_point,
)


def truncated_poisson(load, capacity):
    # independent Erlang-B oracle: q_n proportional to load^n / n!
    w = np.array([load**n / math.factorial(n) for n in range(capacity + 1)])
    return w / w.sum()


class TestPowerSumRatio:
    def test_examples(self):
        assert power_sum_ratio(0.6, 0.2, 2) == pytest.approx(0.8, abs=1e-15)
        assert power_sum_ratio(0.5, 0.5, 2) == 1.0
        assert power_sum_ratio(1.0, 0.0, 3) == 1.0

    def test_matches_ratio_and_bounds(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            a = rng.random()
            b = rng.random() * a
            d = int(rng.integers(1, 6))
            val = power_sum_ratio(a, b, d)
            assert val * (a - b) == pytest.approx(a**d - b**d, abs=1e-12)
            assert d * b ** (d - 1) - 1e-12 <= val <= d * a ** (d - 1) + 1e-12

    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            power_sum_ratio(0.2, 0.6, 2)
        with pytest.raises(ValueError):
            power_sum_ratio(0.5, 0.1, 0)


class TestLambdaMap:
    def test_d1_collapses(self):
        p = TailVector(np.array([1.0, 0.4, 0.1, 0.0]))
        assert np.allclose(lambda_map(p, 1.0, 1), 1.0, atol=1e-15)

    def test_example_vector(self):
        p = TailVector(np.array([1.0, 0.6, 0.2, 0.0]))
        np.testing.assert_allclose(lambda_map(p, 1.0, 2), [1.6, 0.8, 0.2], atol=1e-15)

    def test_tied_levels(self):
        p = np.array([1.0, 0.5, 0.5, 0.0])
        rates = lambda_map(p, 2.0, 2)
        assert rates[1] == pytest.approx(2.0, abs=1e-15)  # lam * d * a^(d-1)

    def test_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            q = rng.dirichlet(np.ones(6))
            p = TailVector.from_occupancy(q)
            d = int(rng.integers(1, 5))
            rates = lambda_map(p, 1.3, d)
            v = p.values
            for n, r in enumerate(rates):
                assert 1.3 * d * v[n + 1] ** (d - 1) - 1e-10 <= r
                assert r <= 1.3 * d * v[n] ** (d - 1) + 1e-10


class TestBirthDeath:
    def test_truncated_poisson(self):
        np.testing.assert_allclose(
            birth_death_stationary(np.ones(2), 1.0), [0.4, 0.4, 0.2], atol=1e-15
        )

    def test_no_arrivals(self):
        np.testing.assert_allclose(
            birth_death_stationary(np.zeros(3), 1.0), [1.0, 0.0, 0.0, 0.0], atol=0
        )

    def test_empty_chain(self):
        np.testing.assert_allclose(birth_death_stationary(np.empty(0), 1.0), [1.0])


class TestFixedPoint:
    def test_erlang_b_reduction(self):
        p = solve_fixed_point(1.0, 1.0, 2, 1)
        np.testing.assert_allclose(p.values, [1.0, 0.6, 0.2, 0.0], atol=1e-12)
        for lam in (0.5, 1.0, 2.0):
            for cap in (1, 3, 7, 20):
                got = solve_fixed_point(lam, 1.0, cap, 1).occupancy()
                np.testing.assert_allclose(got, truncated_poisson(lam, cap), atol=1e-10)

    def test_golden_ratio_d2(self):
        p = solve_fixed_point(1.0, 1.0, 1, 2)
        assert p.values[1] == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-10)

    def test_light_traffic(self):
        # brute-force oracle: iterate the composed map directly
        lam, mu, cap, d = 1e-9, 1.0, 3, 2
        p = np.array([1.0] + [0.0] * cap + [0.0])
        p[1:cap + 1] = 1e-3  # arbitrary start
        for _ in range(200):
            rates = [lam * sum(p[n] ** i * p[n + 1] ** (d - 1 - i) for i in range(d))
                     for n in range(cap + 1)]
            w = np.ones(cap + 1)
            for n in range(1, cap + 1):
                w[n] = w[n - 1] * rates[n - 1] / (n * mu)
            q = w / w.sum()
            p = np.concatenate([[1.0], np.cumsum(q[::-1])[::-1][1:], [0.0]])
        got = solve_fixed_point(lam, mu, cap, d)
        assert got.values[1] <= 2e-9
        np.testing.assert_allclose(got.values, p, atol=1e-15)

    def test_scale_invariance(self):
        base = solve_fixed_point(1.0, 1.0, 5, 2).values
        scaled = solve_fixed_point(7.3, 7.3, 5, 2).values
        np.testing.assert_allclose(base, scaled, atol=1e-10)

    def test_map_preserves_tail_invariants(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            q = rng.dirichlet(np.ones(7))
            p = TailVector.from_occupancy(q)
            rates = lambda_map(p, 2.0, 3)
            q_next = birth_death_stationary(rates[:6], 1.0)
            TailVector.from_occupancy(q_next)  # validates monotone in [0, 1]

    def test_nonconvergence_raises(self):
        with pytest.raises(ConvergenceError) as err:
            solve_fixed_point(1.0, 1.0, 5, 2, max_iter=2)
        assert err.value.residual is not None

    def test_validation(self):
        with pytest.raises(ValueError):
            solve_fixed_point(0.0, 1.0, 5, 2)
        with pytest.raises(ValueError):
            solve_fixed_point(1.0, 1.0, 0, 2)


class TestBlocking:
    def test_examples(self):
        p = TailVector(np.array([1.0, 0.7, 0.2, 0.0]))
        assert blocking_probability(p, 1) == pytest.approx(0.2, abs=1e-15)
        assert blocking_probability(p, 2) == pytest.approx(0.04, abs=1e-15)
        empty = TailVector(np.array([1.0, 0.5, 0.0, 0.0]))
        assert blocking_probability(empty, 3) == 0.0


class TestOccupancyRhs:
    def test_two_level_example(self):
        np.testing.assert_allclose(
            exp_occupancy_rhs([0.5, 0.5], 1.0, 1.0, 2), [-0.25, 0.25], atol=1e-15
        )

    def test_pure_death(self):
        np.testing.assert_allclose(
            exp_occupancy_rhs([0.0, 1.0], 0.0, 1.0, 1), [1.0, -1.0], atol=0
        )

    def test_fixed_point_is_root(self):
        for d in (1, 2, 3):
            q = solve_fixed_point(1.0, 1.0, 5, d).occupancy()
            assert np.max(np.abs(exp_occupancy_rhs(q, 1.0, 1.0, d))) < 1e-10

    def test_mass_conserved_on_random_states(self):
        rng = np.random.default_rng(23)
        worst = 0.0
        for _ in range(1000):
            q = rng.dirichlet(np.ones(6))
            worst = max(worst, abs(exp_occupancy_rhs(q, 1.5, 1.0, 2).sum()))
        assert worst < 1e-14

    def test_euler_step_stays_nonnegative(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            q = rng.dirichlet(np.ones(6)) * 0.94 + 0.01  # interior state
            stepped = q + 1e-4 * exp_occupancy_rhs(q, 1.0, 1.0, 2)
            assert np.all(stepped >= 0)

    def test_integration_holds_equilibrium(self):
        q = solve_fixed_point(1.0, 1.0, 5, 2).occupancy()
        _, states = integrate_occupancy(q, 1.0, 1.0, 2, 5.0, dt=1e-3)
        assert np.max(np.abs(states[-1] - q)) < 1e-12


class TestTailVector:
    def test_validation(self):
        with pytest.raises(ValueError):
            TailVector(np.array([1.0, 0.2, 0.4, 0.0]))  # not monotone
        with pytest.raises(ValueError):
            TailVector(np.array([0.9, 0.2, 0.0]))  # P_0 != 1
        with pytest.raises(ValueError):
            TailVector.from_occupancy([0.5, 0.4])  # mass missing

    def test_roundtrip(self):
        q = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(TailVector.from_occupancy(q).occupancy(), q, atol=1e-15)
