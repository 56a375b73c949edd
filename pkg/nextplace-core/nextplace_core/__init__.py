# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from .backends import CompletionBackend, backend_registry, get_backend
from .config import (
    BackendConfig,
    ExperimentConfig,
    IngestConfig,
    PromptConfig,
    WindowConfig,
    load_experiment_config,
)
from .models import (
    DayOfWeek,
    MetricsReport,
    PredictionSample,
    PromptText,
    RankedPrediction,
    RawResponse,
    SampleRecord,
    ScoredSample,
    Stay,
    TargetSlot,
    UserSequence,
)
from .runner import evaluate, run_experiment
from .utils.exceptions import ErrorCode, NextPlaceException

__version__ = "0.1.0"
__all__ = [
    "BackendConfig",
    "CompletionBackend",
    "DayOfWeek",
    "ErrorCode",
    "ExperimentConfig",
    "IngestConfig",
    "MetricsReport",
    "NextPlaceException",
    "PredictionSample",
    "PromptConfig",
    "PromptText",
    "RankedPrediction",
    "RawResponse",
    "SampleRecord",
    "ScoredSample",
    "Stay",
    "TargetSlot",
    "UserSequence",
    "WindowConfig",
    "backend_registry",
    "evaluate",
    "get_backend",
    "load_experiment_config",
    "run_experiment",
]
