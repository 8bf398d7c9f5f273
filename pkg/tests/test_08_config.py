"""
Config Tests - RunConfig parsing and validation.
"""

from pathlib import Path

import numpy as np
import pytest

from sps_grf.config import RunConfig, load_run_config, parse_domain, run_config_from_dict, stop_criteria
from sps_grf.errors import ConfigError


class TestRunConfig:
    """Defaults and validation."""

    def test_defaults(self):
        cfg = run_config_from_dict({})
        assert cfg.test_fraction == 0.1
        assert cfg.method == "sps" and cfg.blocks == "none"
        assert cfg.true_params().as_vector().tolist() == [4.0, 8.0, 4.0]
        assert cfg.stage1_config().alpha is None
        assert cfg.replications == 100 and cfg.hull_bins == 10

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="theta_p"):
            run_config_from_dict({"theta_p": 3})

    def test_not_a_mapping(self):
        with pytest.raises(ConfigError):
            run_config_from_dict([1, 2])

    @pytest.mark.parametrize("raw", [
        {"test_fraction": 1.0},
        {"test_fraction": 0.0},
        {"R": 0},
        {"method": "pic"},
        {"design": "torus"},
        {"kernel": "gaussian"},
        {"theta_v": -1.0},
        {"eps_grid": [0.1, 2.0]},
        {"stationary": "maybe"},
        {"replications": 0},
        {"hull_bins": 0},
    ])
    def test_rejected(self, raw):
        with pytest.raises(ConfigError):
            run_config_from_dict(raw)

    def test_input_needs_observed_mspe(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"input": "data.csv"})
        cfg = run_config_from_dict({"input": "data.csv", "mspe_against": "observed"})
        assert cfg.input == "data.csv"

    def test_coercions(self):
        cfg = run_config_from_dict({
            "theta_rho": 3,
            "n_grid": [10, 100, 1000],
            "alpha": "auto",
            "nugget": "off",
            "stationary": "on",
            "domain": [-50, 50],
        })
        assert cfg.theta_rho == (3,)
        assert cfg.n_grid == (10, 100, 1000)
        assert cfg.alpha is None
        assert cfg.nugget is False and cfg.stationary is True
        assert cfg.domain == (-50.0, 50.0)

    def test_curve_grid_mapping(self):
        cfg = run_config_from_dict({"curve_grid": {"start": 1, "stop": 100, "num": 3}})
        np.testing.assert_allclose(cfg.curve_values(), [1.0, 10.0, 100.0])
        with pytest.raises(ConfigError):
            run_config_from_dict({"curve_grid": {"start": 1}})

    def test_default_curve_brackets_truth(self):
        values = RunConfig(theta_rho=(4.0,)).curve_values()
        assert values[0] == pytest.approx(0.4) and values[-1] == pytest.approx(40.0)
        assert values.size == 41

    def test_stop_criteria_scale_with_problem_size(self):
        crit = stop_criteria(RunConfig(n=1000, eps_primal=1e-4), [400, 100])
        assert crit["block_sizes"] == [400, 100]
        assert crit["tol_primal"] == pytest.approx([0.04, 0.01])
        assert crit["tol_dual"] == pytest.approx([4e-3, 1e-3])
        assert crit["alpha"] == pytest.approx([0.05, 0.1])

    def test_stop_criteria_fixed_alpha(self):
        crit = stop_criteria(RunConfig(alpha=0.3), [50, 60])
        assert crit["alpha"] == [0.3, 0.3]

    def test_stop_criteria_need_sizes(self):
        with pytest.raises(ConfigError):
            stop_criteria(RunConfig(), [])


class TestDomain:
    def test_string_and_pair(self):
        assert parse_domain("0:100") == (0.0, 100.0)
        assert parse_domain("-50:50") == (-50.0, 50.0)
        assert parse_domain([1, 2]) == (1.0, 2.0)

    @pytest.mark.parametrize("value", ["100", "5:1", "a:b", 7])
    def test_bad(self, value):
        with pytest.raises(ConfigError):
            parse_domain(value)


class TestLoad:
    """YAML and JSON files."""

    def test_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text('kernel: matern32\ntheta_rho: [10]\ntheta_v: 1\ntheta_0: 0\ndomain: "-50:50"\n'
                        "n_grid: [10, 100]\n", encoding="utf-8")
        cfg = load_run_config(path)
        assert cfg.kernel == "matern32"
        assert cfg.domain == (-50.0, 50.0)
        assert cfg.theta_0 == 0

    def test_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{"method": "mle", "mle_starts": 3, "R": 2}', encoding="utf-8")
        cfg = load_run_config(path)
        assert cfg.method == "mle" and cfg.mle_starts == 3 and cfg.R == 2

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_run_config(path) == RunConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "nope.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("kernel: [se\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(path)


class TestShippedConfigs:
    """Every file under configs/ parses."""

    CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.yaml"))

    def test_present(self):
        names = {p.name for p in self.CONFIGS}
        assert {"extrapolation_sps.yaml", "extrapolation_mle1.yaml", "extrapolation_mle10.yaml",
                "extrapolation_mle100.yaml", "near_sparsity.yaml"} <= names

    @pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
    def test_loads(self, path):
        cfg = load_run_config(path)
        if path.stem.startswith("extrapolation"):
            assert cfg.design == "extrapolation" and cfg.dim == 10
            assert round(cfg.test_fraction * cfg.n) == 10000
