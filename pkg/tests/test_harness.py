"""Config grammar, scaling fits, sweep orchestration, CLI plumbing."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from rcx.harness.config import ConfigError, format_config, parse_config, validate_config
from rcx.harness.experiments import composite_reduced_field, run_experiment
from rcx.harness.fits import fit_reconnection_scaling
from rcx.spectral import Grid, ParameterError, SpectralField
from rcx.topology import eval_field_at


class TestConfigGrammar:
    def test_scalar_types(self):
        cfg = parse_config(
            'experiment = advdiff_rate\n'
            'seed = 3\n'
            'dt = 0.5\n'
            'name = "hello world"\n'
            'flag = true\n'
        )
        assert cfg == {"experiment": "advdiff_rate", "seed": 3, "dt": 0.5,
                       "name": "hello world", "flag": True}

    def test_lists(self):
        cfg = parse_config("eta_list = 1e-2, 3e-3, 1e-3\nns = 1, 2, 3\n")
        assert cfg["eta_list"] == [1e-2, 3e-3, 1e-3]
        assert cfg["ns"] == [1, 2, 3]

    def test_comments_and_blanks(self):
        cfg = parse_config("# header\n\nexperiment = sns_energy  # trailing\n")
        assert cfg == {"experiment": "sns_energy"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("experiment advdiff_rate\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("a = 1\na = 2\n")

    def test_roundtrip(self):
        cfg = {"experiment": "advdiff_rate", "seed": 7, "eta_list": [0.01, 0.001],
               "flow": "kolmogorov", "amplitude": 1.5, "dealias": True}
        assert parse_config(format_config(cfg)) == cfg


class TestConfigSchema:
    def base(self):
        return {"experiment": "advdiff_rate", "eta_list": [1e-1, 1e-2, 1e-3, 1e-4]}

    def test_defaults_filled(self):
        out = validate_config(self.base())
        assert out["grid_n"] == 128
        assert out["flow"] == "kolmogorov"
        assert out["threads"] == 1

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="experiment"):
            validate_config({"experiment": "nope"})

    def test_missing_required_named(self):
        with pytest.raises(ConfigError, match="eta_list"):
            validate_config({"experiment": "advdiff_rate"})

    def test_unknown_key_named(self):
        cfg = self.base()
        cfg["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            validate_config(cfg)

    def test_bad_type_named(self):
        cfg = self.base()
        cfg["grid_n"] = "big"
        with pytest.raises(ConfigError, match="grid_n"):
            validate_config(cfg)

    def test_power_of_two_guard(self):
        cfg = self.base()
        cfg["grid_n"] = 100
        with pytest.raises(ConfigError, match="grid_n"):
            validate_config(cfg)

    def test_log_uniform_guard(self):
        cfg = self.base()
        cfg["eta_list"] = [1e-1, 9e-2, 8e-2, 1e-5]
        with pytest.raises(ConfigError, match="log-uniform"):
            validate_config(cfg)


class TestScalingFits:
    def test_exact_accelerated(self):
        etas = np.array([1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
        t = 3.0 * np.abs(np.log(etas)) / np.sqrt(etas)
        fit = fit_reconnection_scaling(etas, t)
        assert fit.best_model == "accelerated"
        assert fit.coefficients["accelerated"] == pytest.approx(3.0, abs=1e-10)
        assert fit.r2["accelerated"] == pytest.approx(1.0, abs=1e-12)
        assert fit.accelerated_check

    def test_exact_diffusive(self):
        etas = np.array([1e-2, 3e-3, 1e-3, 3e-4])
        t = math.log(2.0) / etas
        fit = fit_reconnection_scaling(etas, t)
        assert fit.best_model == "diffusive"
        assert not fit.fast_checks[0.25]

    def test_exact_fast(self):
        etas = np.array([1e-2, 1e-3, 1e-4, 1e-5])
        t = 5.0 + 2.0 * np.abs(np.log(etas))
        fit = fit_reconnection_scaling(etas, t)
        assert fit.best_model == "fast"
        assert fit.coefficients["fast"] == pytest.approx(2.0, abs=1e-10)
        assert fit.fast_checks[0.5] and fit.fast_checks[0.25]

    def test_too_few_points(self):
        with pytest.raises(ParameterError):
            fit_reconnection_scaling([1e-2, 1e-3], [1.0, 2.0])


def _explode_below_1em3(args):
    eta, _cfg = args
    if eta < 1e-3:
        raise RuntimeError("boom")
    return {"ok": 1.0}


class TestRunExperiment:
    def heat_cfg(self, out):
        return {
            "experiment": "advdiff_rate",
            "eta_list": [1e-1, 1e-2, 1e-3, 1e-4],
            "flow": "none",
            "grid_n": 32,
            "out_dir": str(out),
        }

    def test_heat_exponent_one(self, tmp_path):
        res = run_experiment(self.heat_cfg(tmp_path))
        assert len(res.ok_rows()) == 4
        assert abs(res.fits["exponent"] - 1.0) <= 0.02

    def test_determinism_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        r1 = run_experiment(self.heat_cfg(tmp_path))
        r1.provenance["wall_seconds"] = 0.0
        r1.write(a)
        r2 = run_experiment(self.heat_cfg(tmp_path))
        r2.provenance["wall_seconds"] = 0.0
        r2.write(b)
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
        assert (a / "config.resolved").read_bytes() == (b / "config.resolved").read_bytes()

    def test_failure_isolation(self):
        from rcx.harness.experiments import _run_rows
        rows = _run_rows(_explode_below_1em3, [1e-1, 1e-2, 1e-4], {"threads": 1})
        assert [r.error is None for r in rows] == [True, True, False]
        assert "RuntimeError" in rows[2].error
        rows_par = _run_rows(_explode_below_1em3, [1e-1, 1e-2, 1e-4], {"threads": 2})
        assert [r.error is None for r in rows_par] == [True, True, False]

    def test_resolved_config_roundtrip(self, tmp_path):
        res = run_experiment(self.heat_cfg(tmp_path))
        cfg2 = parse_config(res.config_text)
        assert cfg2["experiment"] == "advdiff_rate"
        assert cfg2["eta_list"] == [1e-1, 1e-2, 1e-3, 1e-4]

    def test_threads_match_serial(self, tmp_path):
        cfg = self.heat_cfg(tmp_path)
        serial = run_experiment(cfg)
        cfg2 = dict(cfg)
        cfg2["threads"] = 2
        parallel = run_experiment(cfg2)
        for r1, r2 in zip(serial.rows, parallel.rows):
            assert r1.eta == r2.eta
            assert r1.values["t_dis"] == pytest.approx(r2.values["t_dis"], rel=1e-12)


class TestCompositeField:
    def test_matches_analytic(self):
        g2 = Grid((32, 32))
        x1, _ = g2.meshgrid()
        M, eps = 1.0, 0.01
        x_star = (1.1, 2.2, 0.7)
        rho = SpectralField.from_physical(
            g2, M - 2 * M * np.cos(x1 - math.pi / 3 - x_star[0]))
        b = composite_reduced_field(rho, eps, x_star)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.uniform(0, 2 * math.pi, size=3)
            val, _ = eval_field_at(b, x)
            expect = np.array([
                eps * math.sin(x[1] - x_star[1]),
                eps * math.sin(x[2] - x_star[2]),
                M - 2 * M * math.cos(x[0] - math.pi / 3 - x_star[0]),
            ])
            np.testing.assert_allclose(val, expect, atol=1e-12)


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "rcx.harness.cli", *args],
                              capture_output=True, text=True)

    def test_selftest_passes(self):
        out = self.run_cli("spectral", "selftest")
        assert out.returncode == 0, out.stdout + out.stderr
        assert "PASS" in out.stdout
        assert "FAIL" not in out.stdout

    def test_config_error_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("experiment = advdiff_rate\n")  # missing eta_list
        out = self.run_cli("advdiff", "sweep", "--config", str(cfg))
        assert out.returncode == 2
        assert "eta_list" in out.stderr

    def test_advdiff_run_writes_trace(self, tmp_path):
        out = self.run_cli("advdiff", "run", "--eta", "0.1", "--n", "32",
                           "--dt", "0.02", "--T", "0.2", "--out", str(tmp_path))
        assert out.returncode == 0, out.stderr
        files = list(tmp_path.glob("trace_*.csv"))
        assert len(files) == 1

    def test_sweep_cli_end_to_end(self, tmp_path):
        cfg = tmp_path / "heat.cfg"
        cfg.write_text(
            "experiment = advdiff_rate\n"
            "eta_list = 1e-1, 1e-2, 1e-3, 1e-4\n"
            'flow = "none"\n'
            "grid_n = 32\n"
        )
        out = self.run_cli("advdiff", "sweep", "--config", str(cfg),
                           "--out", str(tmp_path / "res"))
        assert out.returncode == 0, out.stderr
        assert (tmp_path / "res" / "sweep.csv").exists()
        assert (tmp_path / "res" / "summary.txt").exists()
        assert (tmp_path / "res" / "config.resolved").exists()

    def test_fit_subcommand(self, tmp_path):
        etas = np.array([1e-2, 3e-3, 1e-3, 3e-4])
        t = 3.0 * np.abs(np.log(etas)) / np.sqrt(etas)
        csv = tmp_path / "rows.csv"
        csv.write_text("\n".join(f"{e},{v}" for e, v in zip(etas, t)) + "\n")
        out = self.run_cli("fit", str(csv))
        assert out.returncode == 0
        assert "best model: accelerated" in out.stdout

    def test_topo_scan_roundtrip(self, tmp_path):
        from rcx.mhd3d import NullPointData, make_null_point_data
        from rcx.spectral import Grid as G, save_field
        g = G((16, 16, 16))
        _, b = make_null_point_data(NullPointData(x_star=(1.1, 2.7, 0.4)), g)
        paths = []
        for i in range(3):
            p = tmp_path / f"b{i}.rcxf"
            save_field(p, b.component(i))
            paths.append(str(p))
        out = self.run_cli("topo", "scan", *paths, "--out", str(tmp_path / "z"))
        assert out.returncode == 0, out.stderr
        assert "zero(s) found" in out.stdout
        assert (tmp_path / "z" / "zeros.jsonl").exists()
