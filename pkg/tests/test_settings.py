"""Tests for environment settings."""

from pathlib import Path

import pytest

from config.settings import ConfigError, Settings, get_settings


@pytest.mark.unit
class TestSettings:
    def test_defaults(self, monkeypatch):
        for name in ("TRIDET_LOG_LEVEL", "TRIDET_LOG_FILE", "TRIDET_DEBUG", "TRIDET_GRADCHECK_TOL"):
            monkeypatch.delenv(name, raising=False)
        settings = get_settings()
        assert settings.LOG_LEVEL == "INFO"
        assert settings.LOG_FILE is None
        assert settings.DEBUG_MODE is False
        assert settings.SEED is None
        assert settings.GRADCHECK_TOLERANCE == 1e-4

    def test_data_directory_follows_environment(self, tmp_path):
        assert get_settings().DATA_DIRECTORY == Path(str(tmp_path / "data"))

    def test_seed_override(self, monkeypatch):
        monkeypatch.setenv("TRIDET_SEED", "17")
        assert get_settings().SEED == 17

    def test_invalid_tolerance_falls_back(self, monkeypatch):
        monkeypatch.setenv("TRIDET_GRADCHECK_TOL", "tight")
        assert get_settings().GRADCHECK_TOLERANCE == 1e-4

    def test_invalid_seed_is_rejected_at_startup(self, monkeypatch):
        monkeypatch.setenv("TRIDET_SEED", "abc")
        with pytest.raises(ConfigError):
            Settings()

    def test_config_dict(self):
        info = get_settings().get_config_dict()
        assert set(info) == {"log_level", "log_file", "debug_mode", "seed", "data_directory", "gradcheck_tolerance"}
