import json
import math

import numpy as np
import pytest

from lossmesh import ConfigError, Exponential, MixedErlang
from lossmesh.cli import EXIT_CONFIG, EXIT_OK, main
from lossmesh.config import (
    canonical_json,
    config_hash,
    load_config,
    parse_config,
    write_config,
)
from lossmesh.runner import run_experiment
from lossmesh.tables import AlignmentError, ResultTable, compare_report

MINIMAL_FIXEDPOINT = {
    "mode": "fixedpoint",
    "system": {"lam": 1.0, "mu": 1.0, "capacity": 5, "d": 2},
}


class TestConfigParsing:
    def test_minimal_fixedpoint(self):
        cfg = parse_config(MINIMAL_FIXEDPOINT)
        assert (cfg.lam, cfg.mu, cfg.capacity, cfg.d) == (1.0, 1.0, 5, 2)

    def test_unknown_keys_rejected_with_path(self):
        bad = {**MINIMAL_FIXEDPOINT, "system": {"lam": 1.0, "mu": 1.0,
                                                "capacity": 5, "d": 2, "lambda": 2}}
        with pytest.raises(ConfigError, match="system.lambda"):
            parse_config(bad)
        with pytest.raises(ConfigError, match="extra"):
            parse_config({**MINIMAL_FIXEDPOINT, "extra": {}})

    def test_bad_phase_probs_named(self):
        bad = {
            "mode": "simulate",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 5, "d": 2,
                       "distribution": {"kind": "mixed_erlang", "phase_rate": 2.1,
                                        "phase_probs": [0.3, 0.3, 0.39]}},
            "run": {"n_servers": 100, "t_total": 10.0},
        }
        with pytest.raises(ConfigError, match="distribution"):
            parse_config(bad)

    def test_zero_d_rejected(self):
        bad = {**MINIMAL_FIXEDPOINT,
               "system": {"lam": 1.0, "mu": 1.0, "capacity": 5, "d": 0}}
        with pytest.raises(ConfigError, match="system.d"):
            parse_config(bad)

    def test_missing_required_field_named(self):
        with pytest.raises(ConfigError, match="system.capacity"):
            parse_config({"mode": "fixedpoint",
                          "system": {"lam": 1.0, "mu": 1.0, "d": 2}})

    def test_mean_mu_mismatch_rejected(self):
        bad = {
            "mode": "simulate",
            "system": {"lam": 1.0, "mu": 2.0, "capacity": 5, "d": 2,
                       "distribution": {"kind": "exponential", "rate": 1.0}},
            "run": {"n_servers": 100, "t_total": 10.0},
        }
        with pytest.raises(ConfigError, match="does not match"):
            parse_config(bad)

    def test_distributions_parsed(self):
        cfg = parse_config({
            "mode": "insensitivity",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 5, "d": 2,
                       "distributions": [
                           {"kind": "exponential", "rate": 1.0},
                           {"kind": "mixed_erlang", "phase_rate": 2.1,
                            "phase_probs": [0.3, 0.3, 0.4]},
                       ]},
            "run": {"n_servers": 50, "t_total": 10.0},
        })
        assert cfg.distributions == (Exponential(1.0), MixedErlang(2.1, (0.3, 0.3, 0.4)))

    def test_round_trip(self, tmp_path):
        cfg = parse_config({
            "mode": "simulate",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 3, "d": 2,
                       "distribution": {"kind": "exponential", "rate": 1.0}},
            "run": {"n_servers": 20, "t_total": 5.0, "seed": 9},
            "output": {"y_grid": [0.5, 1.0]},
        })
        path = write_config(cfg, tmp_path / "c.json")
        again = load_config(path)
        assert again == cfg
        assert config_hash(again) == config_hash(cfg)
        assert canonical_json(again) == canonical_json(cfg)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  broken\n}")
        with pytest.raises(ConfigError, match="line 2"):
            load_config(path)


class TestResultTable:
    def test_csv_round_trip(self, tmp_path):
        table = ResultTable(("a", "b"), [[1.0, 2.5], [3.0, math.pi]],
                            {"seed": "1", "config_hash": "ff"})
        path = table.write_csv(tmp_path / "t.csv")
        again = ResultTable.read_csv(path)
        assert again.columns == table.columns
        assert np.array_equal(again.rows, table.rows)
        assert again.metadata["config_hash"] == "ff"

    def test_rows_are_byte_identical_across_writes(self, tmp_path):
        table = ResultTable(("x",), [[1 / 3], [2 / 7]], {})
        p1 = table.write_csv(tmp_path / "a.csv")
        p2 = table.write_csv(tmp_path / "b.csv")
        assert p1.read_bytes() == p2.read_bytes()

    def test_rectangularity_enforced(self):
        with pytest.raises(ValueError):
            ResultTable(("a", "b"), [[1.0], [2.0, 3.0]])


class TestCompareReport:
    def make(self, values, se=None):
        cols = ("n", "value") + (("se",) if se is not None else ())
        rows = [[i, v] + ([se[i]] if se is not None else [])
                for i, v in enumerate(values)]
        return ResultTable(cols, rows)

    def test_identical_tables_pass(self):
        model = self.make([0.1, 0.2, 0.7])
        report = compare_report(model, self.make([0.1, 0.2, 0.7]), ("n",), 1e-6)
        assert report.metadata["aggregate"] == "pass"
        assert np.all(report.column("pass") == 1.0)

    def test_four_se_gap_fails(self):
        model = self.make([0.1, 0.2, 0.7])
        est = self.make([0.1, 0.2 + 0.04, 0.7], se=[0.01, 0.01, 0.01])
        report = compare_report(model, est, ("n",), abs_tol=1e-6)
        assert report.metadata["aggregate"] == "fail"
        assert report.column("pass").sum() == 2.0

    def test_se_aware_pass(self):
        model = self.make([0.5])
        est = self.make([0.52], se=[0.01])  # 2 se gap
        report = compare_report(model, est, ("n",), abs_tol=1e-6)
        assert report.metadata["aggregate"] == "pass"

    def test_disjoint_keys_raise(self):
        model = self.make([0.5])
        other = ResultTable(("n", "value"), [[5, 0.5]])
        with pytest.raises(AlignmentError):
            compare_report(model, other, ("n",), 0.1)


class TestRunnerModes:
    def test_fixedpoint_table_contains_golden_ratio(self):
        cfg = parse_config({"mode": "fixedpoint",
                            "system": {"lam": 1.0, "mu": 1.0, "capacity": 1, "d": 2}})
        table = run_experiment(cfg)["fixedpoint"]
        assert table.column("tail")[1] == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-10)

    def test_ode_exp_reaches_fixed_point(self):
        cfg = parse_config({
            "mode": "ode_exp",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 3, "d": 2},
            "numerics": {"t_ode": 40.0, "dt": 0.001},
        })
        table = run_experiment(cfg)["ode_exp"]
        from lossmesh import solve_fixed_point

        pi = solve_fixed_point(1.0, 1.0, 3, 2).occupancy()
        final = table.rows[-1, 1:]
        np.testing.assert_allclose(final, pi, atol=1e-8)

    def test_ode_phase_small(self):
        cfg = parse_config({
            "mode": "ode_phase",
            "system": {"lam": 1.0, "d": 2, "capacity": 2,
                       "distribution": {"kind": "mixed_erlang", "phase_rate": 2.0,
                                        "phase_probs": [0.5, 0.5]}},
            "numerics": {"t_ode": 60.0, "dt": 0.002},
            "output": {"n_initial": 2},
        })
        tables = run_experiment(cfg)
        assert set(tables) == {"phase_traj_1", "phase_traj_2", "phase_summary"}
        assert np.all(tables["phase_summary"].column("dE2_final") < 1e-8)
        d2 = tables["phase_traj_1"].column("dE2")
        assert d2[-1] < d2[0]

    def test_ode_hetero_runs(self):
        cfg = parse_config({
            "mode": "ode_hetero",
            "system": {"lam": 1.0, "mu": 1.0, "d": 2,
                       "profile": {"gammas": [0.5, 0.5], "capacities": [1, 2]}},
            "numerics": {"t_ode": 200.0, "dt": 0.01},
        })
        table = run_experiment(cfg)["ode_hetero"]
        assert float(table.metadata["final_residual"]) < 1e-8
        last_type0 = table.rows[-2]
        assert math.isnan(last_type0[4])  # type 0 has no level 2

    def test_simulate_mode_tables(self):
        cfg = parse_config({
            "mode": "simulate",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 2, "d": 2,
                       "distribution": {"kind": "exponential", "rate": 1.0}},
            "run": {"n_servers": 200, "t_total": 40.0, "seed": 4},
            "output": {"sample_times": [0.0, 1.0, 2.0]},
        })
        tables = run_experiment(cfg)
        occ = tables["sim_occupancy"]
        assert occ.column("fraction").sum() == pytest.approx(1.0, abs=1e-9)
        assert tables["sim_summary"].column("arrivals")[0] > 0
        assert tables["sim_transient"].rows[0][2] == 1.0  # empty start, Q_0 = 1

    def test_insensitivity_mode_small(self):
        cfg = parse_config({
            "mode": "insensitivity",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 2, "d": 2,
                       "distributions": [
                           {"kind": "exponential", "rate": 1.0},
                           {"kind": "deterministic", "value": 1.0},
                       ]},
            "run": {"n_servers": 1000, "t_total": 200.0, "seed": 6},
        })
        tables = run_experiment(cfg)
        report = tables["insensitivity_report"]
        assert report.metadata["aggregate"] == "pass"
        assert np.all(report.column("sup_deviation") < 0.02)

    def test_transient_mode_vs_ode(self):
        cfg = parse_config({
            "mode": "transient",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 3, "d": 2,
                       "distribution": {"kind": "exponential", "rate": 1.0}},
            "run": {"n_servers": 2000, "t_total": 6.0, "t_warmup": 0.0,
                    "replications": 3, "seed": 8},
            "output": {"sample_times": [1.0, 2.0, 4.0, 6.0]},
        })
        tables = run_experiment(cfg)
        sim = tables["transient"]
        ode = tables["transient_ode"]
        assert np.max(np.abs(sim.rows[:, 1:] - ode.rows[:, 1:])) < 0.05


class TestCli:
    def test_fixedpoint_end_to_end(self, tmp_path, capsys):
        cfg_path = tmp_path / "fp.json"
        cfg_path.write_text(json.dumps({
            "mode": "fixedpoint",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 1, "d": 2},
            "output": {"out_dir": str(tmp_path / "out")},
        }))
        assert main(["fixedpoint", "--config", str(cfg_path)]) == EXIT_OK
        table = ResultTable.read_csv(tmp_path / "out" / "fixedpoint.csv")
        assert table.column("tail")[1] == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-10)
        assert "config_hash" in table.metadata

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_path = tmp_path / "fp.json"
        cfg_path.write_text(json.dumps({
            "mode": "fixedpoint",
            "system": {"lam": 0.7, "mu": 1.0, "capacity": 4, "d": 3},
        }))
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["fixedpoint", "--config", str(cfg_path), "--out", str(out1)]) == EXIT_OK
        assert main(["fixedpoint", "--config", str(cfg_path), "--out", str(out2)]) == EXIT_OK
        assert (out1 / "fixedpoint.csv").read_bytes() == (out2 / "fixedpoint.csv").read_bytes()

    def test_config_error_exit_code(self, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"mode": "fixedpoint", "system": {"lam": 1.0}}))
        assert main(["fixedpoint", "--config", str(cfg_path)]) == EXIT_CONFIG
        assert main(["fixedpoint", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG

    def test_mode_mismatch_is_config_error(self, tmp_path):
        cfg_path = tmp_path / "fp.json"
        cfg_path.write_text(json.dumps(MINIMAL_FIXEDPOINT))
        assert main(["ode_exp", "--config", str(cfg_path)]) == EXIT_CONFIG

    def test_seed_override_changes_hash(self, tmp_path):
        cfg_path = tmp_path / "sim.json"
        cfg_path.write_text(json.dumps({
            "mode": "simulate",
            "system": {"lam": 1.0, "mu": 1.0, "capacity": 1, "d": 1,
                       "distribution": {"kind": "exponential", "rate": 1.0}},
            "run": {"n_servers": 5, "t_total": 5.0, "seed": 1},
            "output": {"out_dir": str(tmp_path / "a")},
        }))
        assert main(["simulate", "--config", str(cfg_path)]) == EXIT_OK
        assert main(["simulate", "--config", str(cfg_path), "--seed", "2",
                     "--out", str(tmp_path / "b")]) == EXIT_OK
        meta_a = ResultTable.read_csv(tmp_path / "a" / "sim_summary.csv").metadata
        meta_b = ResultTable.read_csv(tmp_path / "b" / "sim_summary.csv").metadata
        assert meta_a["seed"] != meta_b["seed"]
        assert meta_a["config_hash"] != meta_b["config_hash"]
