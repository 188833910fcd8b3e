"""
Unit tests for configuration management.
"""

import logging

import pytest
from pydantic import ValidationError

from tikhonov_lab.config.settings import Settings, get_settings, reload_settings


@pytest.fixture
def env_file(tmp_path):
    """Point Settings at a temporary .env file for the duration of a test."""
    path = tmp_path / ".env"
    original_config = Settings.model_config['env_file']
    Settings.model_config['env_file'] = path
    yield path
    Settings.model_config['env_file'] = original_config


class TestSettings:
    """Test configuration settings loading and validation."""

    def test_defaults_reproduce_reference_grids(self, env_file):
        env_file.write_text("")
        settings = Settings()
        assert settings.n_per_side == 33
        assert settings.time_steps == 2048
        assert settings.end_time == 0.5
        assert settings.tolerance == 1e-5
        assert settings.max_iterations == 10000
        assert (settings.reduced_n_per_side, settings.reduced_time_steps) == (17, 512)
        assert settings.linear_solver == "direct"
        assert settings.cg_tolerance == 1e-13
        assert settings.residual_tolerance == 1e-12

    def test_env_file_values(self, env_file):
        env_file.write_text("""
REGLAB_N_PER_SIDE=9
REGLAB_TIME_STEPS=64
REGLAB_LINEAR_SOLVER=cg
REGLAB_LOG_LEVEL=debug
        """)
        settings = Settings()
        assert settings.n_per_side == 9
        assert settings.time_steps == 64
        assert settings.linear_solver == "cg"
        assert settings.log_level == "DEBUG"

    def test_environment_variables(self, env_file, monkeypatch):
        env_file.write_text("")
        monkeypatch.setenv("REGLAB_OUTPUT_DIR", "/tmp/tables")
        monkeypatch.setenv("REGLAB_MAX_WORKERS", "4")
        settings = Settings()
        assert settings.output_dir == "/tmp/tables"
        assert settings.max_workers == 4

    def test_keyword_arguments_win(self, env_file, monkeypatch):
        env_file.write_text("")
        monkeypatch.setenv("REGLAB_N_PER_SIDE", "9")
        assert Settings(n_per_side=5).n_per_side == 5

    @pytest.mark.parametrize("field, value", [
        ("linear_solver", "lu"),
        ("log_level", "VERBOSE"),
        ("gauss_order", 1),
        ("n_per_side", 1),
        ("time_steps", 0),
        ("tolerance", 0.0),
        ("end_time", -0.5),
        ("residual_tolerance", -1e-10),
    ])
    def test_invalid_values(self, env_file, field, value):
        env_file.write_text("")
        with pytest.raises(ValidationError):
            Settings(**{field: value})

    def test_setup_logging(self, env_file):
        env_file.write_text("")
        settings = Settings(log_level="WARNING")
        settings.setup_logging()
        assert logging.getLevelName(settings.log_level) == logging.WARNING


class TestConfigurationLoading:
    """Test global configuration loading functions."""

    def test_get_settings_singleton(self):
        """Test that get_settings returns the same instance."""
        reload_settings()

        settings1 = get_settings()
        settings2 = get_settings()

        assert settings1 is settings2

    def test_reload_settings(self):
        """Test that reload_settings creates a new instance."""
        settings1 = get_settings()
        settings2 = reload_settings()

        # Different instances, same configuration
        assert settings1 is not settings2
        assert settings1.n_per_side == settings2.n_per_side

    def test_invalid_environment_fails_fast(self, monkeypatch, capsys):
        monkeypatch.setenv("REGLAB_LINEAR_SOLVER", "lu")
        with pytest.raises(ValidationError):
            reload_settings()
        assert "FATAL" in capsys.readouterr().out
        monkeypatch.delenv("REGLAB_LINEAR_SOLVER")
        reload_settings()
