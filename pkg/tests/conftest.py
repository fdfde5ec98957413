"""Shared fixtures for the test suite."""

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from components.gradcheck_suite import toy_config
from components.synthetic_data import generate_synthetic
from utils.data_processor import DataProcessor

settings.register_profile(
    "tridet", deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("tridet")


def pytest_collection_modifyitems(config, items):
    if os.getenv("TRIDET_RUN_ACCEPTANCE") == "1":
        return
    skip = pytest.mark.skip(reason="set TRIDET_RUN_ACCEPTANCE=1 to run acceptance-scale tests")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    monkeypatch.delenv("TRIDET_SEED", raising=False)
    monkeypatch.setenv("TRIDET_DATA_DIR", str(tmp_path / "data"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def processor(tmp_path):
    return DataProcessor(tmp_path)


@pytest.fixture
def small_cfg():
    """Two-level detector over 16 instants of 4 channels."""
    return toy_config()


@pytest.fixture
def tiny_dataset():
    """Four 32-instant videos with 4-channel features and two classes."""
    return generate_synthetic(
        num_videos=4, num_instants=32, num_classes=2, density=1.5, noise_std=0.5, seed=0, feature_dim=4
    )
