# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from pathlib import Path

import pytest
from nextplace_core.config import (
    BackendConfig,
    ExperimentConfig,
    IngestConfig,
    PromptConfig,
    WindowConfig,
    load_experiment_config,
    parse_flat_config,
)
from nextplace_core.utils.exceptions import ErrorCode, NextPlaceException
from pydantic import ValidationError


@pytest.mark.acceptance
def test_defaults():
    """Defaults follow the reference experiment settings."""
    assert WindowConfig().history_len == 40
    assert WindowConfig().context_len == 5
    assert WindowConfig().lookback == 45
    assert PromptConfig().k == 10
    assert PromptConfig().template_id == "main_v1"
    backend = BackendConfig()
    assert backend.temperature == 0.0
    assert backend.max_retries == 5
    assert backend.max_in_flight == 4
    assert backend.model_id == "gpt-3.5-turbo-0613"
    ingest = IngestConfig()
    assert (ingest.stay_radius_m, ingest.stay_min_duration_min, ingest.test_fraction) == (200.0, 30.0, 0.2)


@pytest.mark.parametrize(
    "model, kwargs",
    [
        (PromptConfig, {"k": 0}),
        (PromptConfig, {"include_history": False, "include_context": False}),
        (PromptConfig, {"template_id": "../etc/passwd"}),
        (BackendConfig, {"temperature": -0.1}),
        (BackendConfig, {"max_in_flight": 0}),
        (IngestConfig, {"test_fraction": 1.0}),
        (IngestConfig, {"test_fraction": 0.0}),
        (WindowConfig, {"history_len": 0}),
    ],
)
def test_invalid_values_rejected(model, kwargs):
    """Invariants are enforced at construction."""
    with pytest.raises(ValidationError):
        model(**kwargs)


@pytest.mark.acceptance
def test_config_forbids_extra_fields():
    """Unknown keys are rejected."""
    with pytest.raises(ValidationError) as exc_info:
        PromptConfig(k=1, colour="red")
    assert any(error["type"] == "extra_forbidden" for error in exc_info.value.errors())


def test_experiment_needs_a_data_source():
    """Either a stay table or track points must be configured."""
    with pytest.raises(ValidationError):
        ExperimentConfig()


def test_parse_flat_config_nests_dotted_keys():
    """Dotted keys become nested sections; comments and blank lines are ignored."""
    text = """
    # experiment
    stays_path = data/stays.csv
    window.history_len = 20   # shorter
    backend.temperature = 0.5
    prompt.time_aware = false
    sample_limit = none
    """

    data = parse_flat_config(text)

    assert data == {
        "stays_path": "data/stays.csv",
        "window": {"history_len": "20"},
        "backend": {"temperature": "0.5"},
        "prompt": {"time_aware": False},
        "sample_limit": None,
    }


def test_parse_flat_config_rejects_bad_line():
    """A line without '=' is a configuration error."""
    with pytest.raises(NextPlaceException) as exc_info:
        parse_flat_config("just words")
    assert exc_info.value.code == ErrorCode.COMMON_CONFIG_ERROR


@pytest.mark.acceptance
def test_load_experiment_config_with_overrides(tmp_path: Path):
    """CLI overrides win over file values and strings are coerced by the models."""
    path = tmp_path / "exp.cfg"
    path.write_text("stays_path = s.csv\nprompt.k = 10\nbackend.temperature = 0.5\nrepeats = 5\n")

    cfg = load_experiment_config(path, {"prompt.k": 1, "predictor": "mock", "sample_limit": None})

    assert cfg.prompt.k == 1
    assert cfg.predictor == "mock"
    assert cfg.backend.temperature == 0.5
    assert cfg.repeats == 5
    assert cfg.stays_path == Path("s.csv")


def test_load_experiment_config_wraps_validation_errors(tmp_path: Path):
    """Invalid values surface as COMMON_CONFIG_ERROR."""
    path = tmp_path / "exp.cfg"
    path.write_text("stays_path = s.csv\npredictor = oracle\n")

    with pytest.raises(NextPlaceException) as exc_info:
        load_experiment_config(path)
    assert exc_info.value.code == ErrorCode.COMMON_CONFIG_ERROR


def test_check_paths(tmp_path: Path):
    """Missing inputs are reported; the output directory is created."""
    missing = ExperimentConfig(stays_path=tmp_path / "nope.csv", output_dir=tmp_path / "out")
    with pytest.raises(NextPlaceException):
        missing.check_paths()

    present = tmp_path / "stays.csv"
    present.write_text("user_id,start_ts,duration_min,place_id\n")
    ExperimentConfig(stays_path=present, output_dir=tmp_path / "out").check_paths()
    assert (tmp_path / "out").is_dir()
