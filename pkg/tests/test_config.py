"""
Tests for environment settings and INI scenario files.
"""
import math
from pathlib import Path

import numpy as np
import pytest

from infobound import config
from infobound.errors import ConfigurationError, UnstableModelError

SETTING_VARS = ["INFOBOUND_OUTPUT_DIR", "INFOBOUND_SEED", "INFOBOUND_K", "INFOBOUND_LAG",
                "INFOBOUND_SHUFFLES", "INFOBOUND_WORKERS"]

LGSSM_SCENARIO = """
[scenario]
name = tracking
length = 300
seeds = 1, 2
p = 1, 2, inf
modes = supervised, semi

[process]
kind = lgssm
state_transition = 0.8
state_noise_cov = 0.5
output_map = 1
output_noise_var = 0.2
input_map = 1
output_input_map = 0.5
input_kind = ar
input_coeff = 0.5

[predictors]
kalman = kalman
blind = kalman use_inputs=false
rls = rls forgetting=0.99 lags=2

[masking]
indices = 3, 4, 5
"""


@pytest.fixture
def clean_env(monkeypatch):
    # setenv before delenv so anything load_dotenv writes is removed afterwards
    for name in SETTING_VARS:
        monkeypatch.setenv(name, "")
        monkeypatch.delenv(name)
    return monkeypatch


def write(tmp_path, text, name="scenario.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestSettings:
    """Test load_settings."""

    def test_defaults(self, clean_env, tmp_path):
        settings = config.load_settings(tmp_path / "missing.env")
        assert settings.seed == 0
        assert settings.k == 5
        assert settings.output_dir == Path(config.DEFAULT_OUTPUT_DIR)

    def test_environment_overrides(self, clean_env, tmp_path):
        clean_env.setenv("INFOBOUND_K", "8")
        clean_env.setenv("INFOBOUND_OUTPUT_DIR", str(tmp_path / "out"))
        settings = config.load_settings(tmp_path / "missing.env")
        assert settings.k == 8
        assert settings.output_dir == tmp_path / "out"

    def test_dotenv_file(self, clean_env, tmp_path):
        env_file = write(tmp_path, "INFOBOUND_SEED=11\nINFOBOUND_SHUFFLES=40\n", ".env")
        settings = config.load_settings(env_file)
        assert settings.seed == 11
        assert settings.shuffles == 40

    def test_invalid_value(self, clean_env, tmp_path):
        clean_env.setenv("INFOBOUND_WORKERS", "0")
        with pytest.raises(ConfigurationError):
            config.load_settings(tmp_path / "missing.env")


class TestValueParsing:
    """Test scalar, list, matrix and predictor parsing."""

    def test_scalars(self):
        assert config.parse_scalar("3") == 3
        assert config.parse_scalar("1e-3") == pytest.approx(0.001)
        assert config.parse_scalar("inf") == math.inf
        assert config.parse_scalar(" yes ") is True
        assert config.parse_scalar("lms") == "lms"

    def test_matrix(self):
        matrix = config.parse_matrix("0.5, 0.1; 0, 0.3", "state_transition")
        np.testing.assert_array_equal(matrix, [[0.5, 0.1], [0.0, 0.3]])
        with pytest.raises(ConfigurationError):
            config.parse_matrix("1, 2; 3", "state_transition")
        with pytest.raises(ConfigurationError):
            config.parse_matrix("1, x", "state_transition")

    def test_predictor_line(self):
        spec = config.parse_predictor("lms", "lms step_size=0.5 lags=1")
        assert spec.tag == "lms"
        assert spec.name == "lms"
        assert spec.params == {"step_size": 0.5, "lags": 1}

    def test_coefficient_lists(self):
        assert config.parse_predictor("plug", "ar coeffs=0.9").params["coeffs"] == [0.9]
        assert config.parse_predictor("plug", "ar coeffs=0.5,-0.3").params["coeffs"] == [0.5, -0.3]

    def test_malformed_predictor(self):
        with pytest.raises(ConfigurationError):
            config.parse_predictor("empty", "")
        with pytest.raises(ConfigurationError):
            config.parse_predictor("lms", "lms step_size")
        with pytest.raises(ConfigurationError):
            config.parse_predictor("lms", "lms step_size=")


class TestLoadScenario:
    """Test load_scenario."""

    def test_packaged_default(self):
        cfg = config.load_scenario(config.DEFAULT_SCENARIO)
        assert cfg.name == "ar1-gaussian"
        assert cfg.length == 20000
        assert cfg.p_values == [2.0]
        assert cfg.process.coeffs == [0.9]
        assert [spec.name for spec in cfg.predictors] == ["plug_in", "zero", "lms", "mismatched_kalman"]
        assert cfg.estimator.lag == 2

    def test_state_space_scenario(self, tmp_path):
        cfg = config.load_scenario(write(tmp_path, LGSSM_SCENARIO))
        assert cfg.seeds == [1, 2]
        assert cfg.p_values == [1.0, 2.0, math.inf]
        assert cfg.modes == ["supervised", "semi"]
        model = cfg.process.model
        assert model.input_dim == 1
        assert model.initial_state_cov[0, 0] == pytest.approx(0.5 / 0.36)
        assert cfg.process.input_process.kind == "ar"
        assert cfg.predictors[1].params == {"use_inputs": False}
        assert cfg.masking.indices == [3, 4, 5]

    def test_settings_fill_estimator_defaults(self, tmp_path):
        path = write(tmp_path, "[scenario]\nlength = 10\n[process]\ncoeffs = 0.5\n")
        cfg = config.load_scenario(path, config.Settings(k=9, lag=3, seed=4))
        assert cfg.estimator.k == 9
        assert cfg.estimator.lag == 3
        assert cfg.seeds == [4]
        assert cfg.name == "scenario"

    def test_explicit_initial_covariance(self, tmp_path):
        text = LGSSM_SCENARIO.replace("input_coeff = 0.5", "input_coeff = 0.5\ninitial_state_cov = 2")
        cfg = config.load_scenario(write(tmp_path, text))
        assert cfg.process.model.initial_state_cov[0, 0] == 2.0

    @pytest.mark.parametrize("text", [
        "[scenario]\nlength = 10\n",
        "[scenario]\n[process]\ncoeffs = 0.5\n",
        "[scenario]\nlength = 10\nmodes = generalization\n[process]\ncoeffs = 0.5\n",
        "[scenario]\nlength = 10\nmodes = batch\n[process]\ncoeffs = 0.5\n",
        "[scenario]\nlength = 10\np = 0.5\n[process]\ncoeffs = 0.5\n",
        "[scenario]\nlength = 10\n[process]\nkind = lgssm\n",
        "[scenario]\nlength = 10\n[process]\ncoeffs = 0.5\n[predictors]\nbad = lms step_size\n",
        "not an ini file",
    ])
    def test_invalid_scenarios(self, tmp_path, text):
        with pytest.raises(ConfigurationError):
            config.load_scenario(write(tmp_path, text))

    def test_unstable_state_space(self, tmp_path):
        text = LGSSM_SCENARIO.replace("state_transition = 0.8", "state_transition = 1.5")
        with pytest.raises(UnstableModelError):
            config.load_scenario(write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            config.load_scenario(tmp_path / "nope.ini")
