"""Config validation, deterministic emission, and the CLI surface."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from storus.cli import main
from storus.config import ConfigError, config_hash, load_config, parse_config
from storus.storage import format_value, load_field, save_field, write_csv, write_json
from storus import workflows


def base_config(out_dir, **updates):
    data = {
        "system": "homogeneous",
        "grid": {"dim": 2, "n": 16},
        "time": {"dt": 1e-3, "n_steps": 10},
        "noise": {"amplitude": 0.2, "n_modes": 2},
        "initial": {"kind": "taylor_green", "amplitude": 0.4},
        "ensemble": {"paths": 2, "seed": 5},
        "output": {"directory": str(out_dir)},
    }
    data.update(updates)
    return data


def write_yaml(path, data):
    Path(path).write_text(yaml.safe_dump(data))
    return str(path)


class TestConfigParsing:
    def test_minimal_roundtrip(self, tmp_path):
        config = parse_config(base_config(tmp_path / "run"))
        assert config.system == "homogeneous"
        assert config.grid().n == 16
        assert config.family().n_modes == 2
        assert config.paths == 2
        assert config.horizon() == pytest.approx(0.01)

    def test_nonpositive_dt_names_field(self):
        data = base_config("x")
        data["time"]["dt"] = -1e-3
        with pytest.raises(ConfigError, match="time.dt"):
            parse_config(data)

    def test_unknown_field_rejected(self):
        data = base_config("x")
        data["gird"] = {}
        with pytest.raises(ConfigError, match="gird"):
            parse_config(data)

    def test_missing_grid_named(self):
        data = base_config("x")
        del data["grid"]
        with pytest.raises(ConfigError, match="grid"):
            parse_config(data)

    def test_grid_power_of_two(self):
        data = base_config("x")
        data["grid"]["n"] = 48
        with pytest.raises(ConfigError, match="grid.n"):
            parse_config(data)

    def test_noise_kind_must_match_system(self):
        data = base_config("x")
        data["noise"]["kind"] = "inhomogeneous"
        with pytest.raises(ConfigError, match="noise.kind"):
            parse_config(data)

    def test_density_contrast_bound(self):
        data = base_config("x", system="inhomogeneous")
        data["noise"] = None
        data["density"] = {"kind": "cosine", "base": 1.0, "contrast": 1.2}
        with pytest.raises(ConfigError, match="density.contrast"):
            parse_config(data)

    def test_inhomogeneous_needs_density(self):
        data = base_config("x", system="inhomogeneous")
        data["noise"] = None
        with pytest.raises(ConfigError, match="density"):
            parse_config(data)

    def test_taylor_green_needs_two_dimensions(self):
        data = base_config("x")
        data["grid"] = {"dim": 1, "n": 64}
        with pytest.raises(ConfigError, match="initial.kind"):
            parse_config(data)

    def test_hash_changes_with_content(self, tmp_path):
        a = parse_config(base_config(tmp_path))
        changed = base_config(tmp_path)
        changed["ensemble"]["seed"] = 6
        b = parse_config(changed)
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(parse_config(base_config(tmp_path)))

    def test_load_config_file(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", base_config(tmp_path / "out"))
        config = load_config(path)
        assert config.n == 16

    def test_empty_file_rejected(self, tmp_path):
        target = tmp_path / "empty.yaml"
        target.write_text("")
        with pytest.raises(ConfigError, match="file"):
            load_config(target)


class TestStorage:
    def test_format_value(self):
        assert format_value(0.1) == "0.1"
        assert format_value(np.float64(1.0) / 3.0) == "0.3333333333333333"
        assert format_value(7) == "7"
        assert format_value(True) == "true"
        assert format_value("x") == "x"

    def test_csv_layout(self, tmp_path):
        out = write_csv(tmp_path / "t.csv", ("a", "b"), [(1, 0.5), (2, 0.25)])
        assert out.read_text() == "a,b\n1,0.5\n2,0.25\n"

    def test_csv_row_width_checked(self, tmp_path):
        with pytest.raises(ValueError, match="width"):
            write_csv(tmp_path / "t.csv", ("a", "b"), [(1,)])

    def test_json_sorted_and_stable(self, tmp_path):
        path = write_json(tmp_path / "r.json", {"b": np.float64(0.5), "a": np.int64(3)})
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": 3, "b": 0.5}

    def test_field_roundtrip(self, tmp_path):
        samples = np.random.default_rng(0).standard_normal((2, 8, 8))
        save_field(tmp_path / "f.npy", samples)
        loaded = load_field(tmp_path / "f.npy")
        assert np.array_equal(loaded, samples)


class TestBuilders:
    def test_initial_kinds(self, tmp_path):
        for kind in ("taylor_green", "shear_flow", "zero", "random_divergence_free"):
            data = base_config(tmp_path)
            data["initial"] = {"kind": kind, "amplitude": 0.5, "seed": 3}
            field = workflows.build_initial(parse_config(data))
            assert field.samples.shape == (2, 16, 16)
        assert np.all(workflows.build_initial(parse_config(base_config(tmp_path))).samples <= 0.4 + 1e-12)

    def test_density_kinds(self, tmp_path):
        data = base_config(tmp_path, system="inhomogeneous")
        data["noise"] = None
        for kind, lo in (("constant", 1.0), ("cosine", 0.7), ("cosine_2d", 0.7)):
            data["density"] = {"kind": kind, "base": 1.0, "contrast": 0.3}
            rho = workflows.build_density(parse_config(data))
            assert float(np.min(rho.samples)) == pytest.approx(lo, abs=1e-12)


class TestSimulateWorkflow:
    def test_manifest_and_files(self, tmp_path):
        config = parse_config(base_config(tmp_path / "run"))
        manifest = workflows.run_simulate(config, render=True)
        out = tmp_path / "run"
        assert (out / "manifest.json").exists()
        assert (out / "energy.csv").exists()
        assert (out / "final_velocity_0000.npy").exists()
        assert (out / "final_velocity_0001.npy").exists()
        assert (out / "energy.png").exists()
        assert manifest["config_hash"] == config_hash(config)
        assert len(manifest["path_records"]) == 2
        header = (out / "energy.csv").read_text().splitlines()[0]
        assert header == "path,time,kinetic"

    def test_no_render_skips_figures(self, tmp_path):
        config = parse_config(base_config(tmp_path / "run"))
        workflows.run_simulate(config, render=False)
        assert not (tmp_path / "run" / "energy.png").exists()
        assert (tmp_path / "run" / "energy.csv").exists()

    def test_rerun_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            config = parse_config(base_config(tmp_path / sub))
            workflows.run_simulate(config, render=False)
        for name in ("energy.csv",):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        a = json.loads((tmp_path / "a" / "manifest.json").read_text())
        b = json.loads((tmp_path / "b" / "manifest.json").read_text())
        a["config"]["output"]["directory"] = b["config"]["output"]["directory"]
        del a["config_hash"], b["config_hash"]
        assert a == b

    def test_inhomogeneous_outputs(self, tmp_path):
        data = base_config(tmp_path / "run", system="inhomogeneous")
        data["noise"] = {"amplitude": 0.1, "n_modes": 2}
        data["noise"]["kind"] = "inhomogeneous"
        data["density"] = {"kind": "cosine", "base": 1.0, "contrast": 0.3, "floor": 0.5}
        config = parse_config(data)
        workflows.run_simulate(config, render=False)
        out = tmp_path / "run"
        header = (out / "energy.csv").read_text().splitlines()[0]
        assert header == "path,time,kinetic,mass,min_density"
        for label in ("density", "velocity", "momentum", "pressure"):
            assert (out / f"final_{label}_0000.npy").exists()


class TestBudgetWorkflow:
    def ensemble_config(self, tmp_path, paths=8):
        data = base_config(tmp_path / "run")
        data["ensemble"] = {"paths": paths, "seed": 3}
        data["time"] = {"dt": 1e-3, "n_steps": 25}
        return parse_config(data)

    def test_replay_ledger_and_stats(self, tmp_path):
        config = self.ensemble_config(tmp_path)
        workflows.run_simulate(config, render=False)
        summary = workflows.run_budget(tmp_path / "run", render=True)
        out = tmp_path / "run"
        assert (out / "ledger.csv").exists()
        assert (out / "martingale.csv").exists()
        assert (out / "ledger.png").exists()
        assert (out / "martingale.png").exists()
        assert summary["max_relative_residual"] <= 1e-9
        assert summary["martingale"]["max_abs_z"] < 4.0
        header = (out / "ledger.csv").read_text().splitlines()[0]
        assert header == "path,time,kinetic,ito_term,martingale_term,discrete_remainder,residual"

    def test_budget_rerun_byte_identical(self, tmp_path):
        config = self.ensemble_config(tmp_path)
        workflows.run_simulate(config, render=False)
        workflows.run_budget(tmp_path / "run", out_dir=tmp_path / "b1", render=False)
        workflows.run_budget(tmp_path / "run", out_dir=tmp_path / "b2", render=False)
        for name in ("ledger.csv", "martingale.csv", "budget_summary.json"):
            assert (tmp_path / "b1" / name).read_bytes() == (tmp_path / "b2" / name).read_bytes()

    def test_manifest_hash_guard(self, tmp_path):
        config = self.ensemble_config(tmp_path)
        workflows.run_simulate(config, render=False)
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        manifest["config"]["ensemble"]["seed"] = 99
        (tmp_path / "run" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError, match="hash"):
            workflows.run_budget(tmp_path / "run", render=False)

    def test_weighted_budget_outputs(self, tmp_path):
        data = base_config(tmp_path / "run", system="inhomogeneous")
        data["noise"] = {"kind": "inhomogeneous", "amplitude": 0.1, "n_modes": 2}
        data["density"] = {"kind": "cosine", "base": 1.0, "contrast": 0.3, "floor": 0.5}
        data["time"] = {"dt": 2e-3, "n_steps": 40}
        data["ensemble"] = {"paths": 1, "seed": 2}
        data["experiment"] = {
            "pairs": [
                {"theta_center": 0.04, "theta_width": 0.02},
                {"theta_center": 0.04, "theta_width": 0.02, "psi_center": [0.5, 0.5], "psi_radius": 0.3},
            ]
        }
        config = parse_config(data)
        workflows.run_simulate(config, render=False)
        summary = workflows.run_budget(tmp_path / "run", render=True)
        out = tmp_path / "run"
        header = (out / "weighted_budget.csv").read_text().splitlines()[0]
        assert header == "pair,time,transport_term,flux_term,ito_term,martingale_term,residual"
        assert (out / "weighted_budget.png").exists()
        assert len(summary["pairs"]) == 2
        assert summary["max_relative_mass_drift"] <= 1e-10
        assert summary["min_density"] >= 0.5


class TestScanWorkflows:
    def scan_config(self, tmp_path, **extra):
        data = base_config(tmp_path / "scan")
        data["grid"] = {"dim": 1, "n": 256}
        data["initial"] = {"kind": "zero"}
        data["noise"] = None
        spec = {
            "map": "square",
            "alpha": 0.4,
            "beta": 0.6,
            "octaves": 5,
            "epsilons": [1 / 16, 1 / 32, 1 / 64, 1 / 128],
        }
        spec.update(extra)
        data["experiment"] = {"commutator": spec}
        return parse_config(data)

    def test_scalar_scan(self, tmp_path):
        summary = workflows.run_commutator_scan(self.scan_config(tmp_path), render=True)
        out = tmp_path / "scan"
        assert (out / "scan.csv").exists()
        assert (out / "scan_summary.json").exists()
        assert (out / "scan.png").exists()
        assert summary["fitted_slope"] > 0
        header = (out / "scan.csv").read_text().splitlines()[0]
        assert header == "epsilon,seed,value"

    def test_missing_epsilons_named(self, tmp_path):
        config = self.scan_config(tmp_path)
        del config.experiment["commutator"]["epsilons"]
        with pytest.raises(ConfigError, match="epsilons"):
            workflows.run_commutator_scan(config, render=False)

    def test_advection_scan(self, tmp_path):
        data = base_config(tmp_path / "scan")
        data["grid"] = {"dim": 2, "n": 128}
        data["initial"] = {"kind": "zero"}
        data["noise"] = None
        data["experiment"] = {
            "commutator": {
                "map": "advection_pairing",
                "alpha": 0.45,
                "octaves": 4,
                "seeds": 3,
                "epsilons": [1 / 16, 1 / 12, 1 / 8, 1 / 6],
            }
        }
        summary = workflows.run_commutator_scan(parse_config(data), render=False)
        assert len(summary["mean_magnitude"]) == 4
        lines = (tmp_path / "scan" / "scan.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 4

    def test_besov_synthetic_report(self, tmp_path):
        data = base_config(tmp_path / "besov")
        data["grid"] = {"dim": 1, "n": 256}
        data["initial"] = {"kind": "zero"}
        data["noise"] = None
        data["experiment"] = {"besov": {"alpha": 0.4, "octaves": 6, "seed": 3}}
        report = workflows.run_besov(parse_config(data), render=True)
        out = tmp_path / "besov"
        assert (out / "besov.json").exists()
        assert (out / "besov.csv").exists()
        assert (out / "besov.png").exists()
        assert 0.3 <= report["fitted_alpha"] <= 0.5
        assert report["seminorm"] > 0
        assert len(report["per_shift"]) >= 4

    def test_besov_field_file(self, tmp_path):
        data = base_config(tmp_path / "besov")
        data["grid"] = {"dim": 1, "n": 64}
        data["initial"] = {"kind": "zero"}
        data["noise"] = None
        config = parse_config(data)
        x = np.arange(64) / 64
        save_field(tmp_path / "field.npy", np.sin(2 * np.pi * x)[np.newaxis])
        report = workflows.run_besov(config, field_path=tmp_path / "field.npy", render=False)
        assert report["fitted_alpha"] >= 0.9

    def test_besov_shape_mismatch(self, tmp_path):
        data = base_config(tmp_path / "besov")
        data["grid"] = {"dim": 1, "n": 64}
        data["noise"] = None
        data["initial"] = {"kind": "zero"}
        config = parse_config(data)
        save_field(tmp_path / "bad.npy", np.zeros((1, 32)))
        with pytest.raises(ValueError, match="shape"):
            workflows.run_besov(config, field_path=tmp_path / "bad.npy", render=False)

    def test_noise_check_report(self, tmp_path):
        data = base_config(tmp_path / "noise")
        data["noise"] = {"amplitude": 0.25, "n_modes": 4}
        config = parse_config(data)
        report = workflows.run_noise_check(config, n_samples=4000, render=True)
        out = tmp_path / "noise"
        assert report["passed"] is True
        assert report["growth"]["passed"] is True
        assert report["increments"]["passed"] is True
        assert (out / "noise_check.json").exists()
        assert (out / "weights.csv").exists()
        assert (out / "weights.png").exists()
        lines = (out / "weights.csv").read_text().splitlines()
        assert lines[0] == "mode,weight"
        assert len(lines) == 5


class TestCommandLine:
    def invoke(self, *args):
        return CliRunner().invoke(main, list(args))

    def test_simulate_and_budget(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", base_config(tmp_path / "out"))
        result = self.invoke("simulate", "--config", path, "--no-figures")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "manifest.json").exists()
        result = self.invoke("budget", "--manifest", str(tmp_path / "out"), "--no-figures")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "budget_summary.json").exists()

    def test_budget_via_config(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", base_config(tmp_path / "out"))
        assert self.invoke("simulate", "--config", path, "--no-figures").exit_code == 0
        result = self.invoke("budget", "--config", path, "--no-figures")
        assert result.exit_code == 0, result.output

    def test_malformed_config_error_record(self, tmp_path):
        data = base_config(tmp_path / "out")
        data["time"]["dt"] = -0.5
        path = write_yaml(tmp_path / "bad.yaml", data)
        result = self.invoke("simulate", "--config", path)
        assert result.exit_code == 2
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] == "config"
        assert record["field"] == "time.dt"

    def test_missing_config_file(self, tmp_path):
        result = self.invoke("simulate", "--config", str(tmp_path / "nope.yaml"))
        assert result.exit_code == 2
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] == "missing_input"

    def test_missing_manifest(self, tmp_path):
        result = self.invoke("budget", "--manifest", str(tmp_path / "nowhere"))
        assert result.exit_code == 2
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] == "missing_input"

    def test_seed_override_changes_hash(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", base_config(tmp_path / "out"))
        assert self.invoke("simulate", "--config", path, "--no-figures").exit_code == 0
        first = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert (
            self.invoke(
                "simulate", "--config", path, "--seed", "9", "--out", str(tmp_path / "out2"), "--no-figures"
            ).exit_code
            == 0
        )
        second = json.loads((tmp_path / "out2" / "manifest.json").read_text())
        assert first["config_hash"] != second["config_hash"]
        assert second["seed"] == 9

    def test_noise_check_command(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", base_config(tmp_path / "out"))
        result = self.invoke("noise-check", "--config", path, "--samples", "2000", "--no-figures")
        assert result.exit_code == 0, result.output
        assert "pass" in result.output

    def test_figures_rendered_by_default(self, tmp_path):
        path = write_yaml(tmp_path / "run.yaml", base_config(tmp_path / "out"))
        assert self.invoke("simulate", "--config", path).exit_code == 0
        assert (tmp_path / "out" / "energy.png").exists()

    def test_commutator_scan_command(self, tmp_path):
        data = base_config(tmp_path / "out")
        data["grid"] = {"dim": 1, "n": 256}
        data["initial"] = {"kind": "zero"}
        data["noise"] = None
        data["experiment"] = {
            "commutator": {
                "map": "square",
                "alpha": 0.4,
                "beta": 0.6,
                "octaves": 5,
                "epsilons": [1 / 16, 1 / 32, 1 / 64, 1 / 128],
            }
        }
        path = write_yaml(tmp_path / "run.yaml", data)
        result = self.invoke("commutator-scan", "--config", path, "--no-figures")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "scan_summary.json").exists()
        assert "slope" in result.output

    def test_besov_command(self, tmp_path):
        data = base_config(tmp_path / "out")
        data["grid"] = {"dim": 1, "n": 256}
        data["initial"] = {"kind": "zero"}
        data["noise"] = None
        data["experiment"] = {"besov": {"alpha": 0.4, "octaves": 6, "seed": 3}}
        path = write_yaml(tmp_path / "run.yaml", data)
        result = self.invoke("besov", "--config", path, "--no-figures")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "besov.json").exists()
