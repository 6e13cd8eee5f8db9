"""
Pytest configuration and fixtures.

Registers the ``slow`` marker and a ``--skip-slow`` option, plus shared
fiber and model fixtures.
"""

import pytest

from fiberheom.model import FiberParams, ModelConfig


def pytest_addoption(parser):
    """Add custom command-line options to pytest."""
    parser.addoption(
        "--skip-slow",
        action="store_true",
        default=False,
        help="Skip long HEOM runs (marked with @pytest.mark.slow)",
    )


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "slow: long HEOM acceptance runs (deselect with --skip-slow)"
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests when --skip-slow is given."""
    if not config.getoption("--skip-slow"):
        return

    skip_slow = pytest.mark.skip(reason="--skip-slow given")

    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_model(eta: float = 0.1, lc_km: float = 0.1, **kwargs) -> ModelConfig:
    """ModelConfig with mean birefringence 1e-7 and std = eta * mean."""
    fiber = FiberParams(
        mean_birefringence=1e-7,
        birefringence_std=eta * 1e-7,
        correlation_length_km=lc_km,
    )
    return ModelConfig(fiber=fiber, **kwargs)


@pytest.fixture
def model_factory():
    """Factory (eta, lc_km, **kwargs) -> ModelConfig."""
    return make_model


@pytest.fixture
def anchor_model():
    """eta = 0.1, L_c = 100 m, independent baths, phi_plus."""
    return make_model(0.1, 0.1)


@pytest.fixture
def minimal_config_text():
    """Smallest valid decay document."""
    return (
        "experiment: decay\n"
        "model:\n"
        "  fiber:\n"
        "    mean_birefringence: 1.0e-7\n"
        "    birefringence_std: 1.0e-8\n"
        "    correlation_length_km: 0.1\n"
    )
