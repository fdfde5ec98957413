"""Tests for the environment setup script."""

import pytest

import setup
from config.settings import get_settings


@pytest.mark.unit
class TestSetup:
    def test_writes_env_file_once(self, tmp_path):
        env_file = tmp_path / ".env"
        assert setup.setup_environment(env_file) is True
        assert "TRIDET_GRADCHECK_TOL=1e-4" in env_file.read_text()
        env_file.write_text("KEEP=1\n")
        assert setup.setup_environment(env_file) is False
        assert env_file.read_text() == "KEEP=1\n"

    def test_template_keys_are_read_by_settings(self):
        keys = {line.split("=", 1)[0].lstrip("# ") for line in setup.ENV_TEMPLATE.splitlines() if "=" in line}
        assert {"TRIDET_LOG_LEVEL", "TRIDET_SEED", "TRIDET_DATA_DIR", "TRIDET_GRADCHECK_TOL"} <= keys
        assert set(get_settings().get_config_dict()) == {
            "log_level", "log_file", "debug_mode", "seed", "data_directory", "gradcheck_tolerance",
        }

    def test_reports_missing_modules(self, mocker, capsys):
        mocker.patch("setup.importlib.util.find_spec", side_effect=lambda name: None if name == "plotly" else object())
        assert setup.check_dependencies() == ["plotly"]
        assert "❌ plotly" in capsys.readouterr().out

    def test_all_present(self, mocker):
        mocker.patch("setup.importlib.util.find_spec", return_value=object())
        assert setup.check_dependencies(("numpy", "loguru")) == []
