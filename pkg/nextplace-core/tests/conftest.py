# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from pathlib import Path

import pytest
from nextplace_core.config import ExperimentConfig

from tests.helpers import golden_sample, synthetic_sequences, write_stays_csv

FIXTURES_DIR = Path(__file__).parent / "fixtures"


def pytest_configure(config):
    """Configure custom markers."""
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests (deselect with '-m \"not integration\"')"
    )
    config.addinivalue_line("markers", "acceptance: marks tests as acceptance tests for CI/CD")
    config.addinivalue_line("markers", "live: marks tests that need a real completion endpoint and API key")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES_DIR


@pytest.fixture
def sample():
    """The golden prompt sample used by the snapshot tests."""
    return golden_sample()


@pytest.fixture
def stays_csv(tmp_path: Path) -> Path:
    """Six synthetic users with 40 stays each."""
    return write_stays_csv(tmp_path / "stays.csv", synthetic_sequences(n_users=6, n_stays=40))


@pytest.fixture
def mock_config(tmp_path: Path, stays_csv: Path) -> ExperimentConfig:
    return ExperimentConfig(
        stays_path=stays_csv,
        predictor="mock",
        output_dir=tmp_path / "out",
        window={"history_len": 10, "context_len": 3},
        backend={"max_in_flight": 3},
    )


@pytest.fixture(autouse=True)
def _no_network_env(monkeypatch):
    monkeypatch.delenv("NO_NETWORK", raising=False)
