# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .utils.exceptions import ErrorCode, NextPlaceException

PredictorName = Literal["llm", "mock", "1mmc", "topfreq"]


class WindowConfig(BaseModel):
    """Lengths of the historical and context windows."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    history_len: int = Field(default=40, ge=1, description="M: number of historical stays")
    context_len: int = Field(default=5, ge=1, description="N: number of most recent (context) stays")

    @property
    def lookback(self) -> int:
        """Q = M + N."""
        return self.history_len + self.context_len


class IngestConfig(BaseModel):
    """Stay detection, place clustering and split parameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    stay_radius_m: float = Field(default=200.0, gt=0, description="Anchor radius for stay detection (meters)")
    stay_min_duration_min: float = Field(default=30.0, gt=0, description="Minimum stay duration (minutes)")
    place_cluster_radius_m: float = Field(default=200.0, gt=0, description="Leader clustering radius (meters)")
    test_fraction: float = Field(default=0.2, gt=0.0, lt=1.0, description="Trailing fraction of stays used as targets")
    min_stays_per_user: int = Field(default=10, ge=1, description="Users with fewer stays are dropped")
    utc_offset_hours: float = Field(default=0.0, ge=-14.0, le=14.0, description="Fixed offset for local time fields")


class PromptConfig(BaseModel):
    """Everything that determines the rendered prompt besides the sample."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    k: int = Field(default=10, ge=1, description="Number of places to request")
    time_aware: bool = Field(default=True, description="Include the target time slot")
    include_history: bool = Field(default=True, description="Include historical stays")
    include_context: bool = Field(default=True, description="Include context stays")
    include_guidance: bool = Field(default=True, description="Include the 'think about' guidance")
    ask_reason: bool = Field(default=True, description="Ask for a reason alongside the prediction")
    template_id: str = Field(default="main_v1", description="Template file name without extension")
    template_dir: Optional[Path] = Field(default=None, description="Directory overriding shipped templates")

    @field_validator("template_id")
    @classmethod
    def validate_template_id(cls, v):
        """Template ids are bare file stems."""
        if not v or "/" in v or "\\" in v or v.startswith("."):
            raise ValueError(f"Invalid template id '{v}'")
        return v

    @model_validator(mode="after")
    def validate_data_blocks(self):
        if not (self.include_history or self.include_context):
            raise ValueError("At least one of include_history / include_context must be enabled")
        return self


class BackendConfig(BaseModel):
    """Completion backend settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    endpoint_url: str = Field(default="https://api.openai.com/v1", description="Base URL of the chat API")
    model_id: str = Field(default="gpt-3.5-turbo-0613", description="Model identifier sent with each request")
    temperature: float = Field(default=0.0, ge=0.0, description="Sampling temperature")
    max_retries: int = Field(default=5, ge=0, description="Retries on 429/5xx/timeout")
    timeout_s: float = Field(default=60.0, gt=0, description="Per-request timeout in seconds")
    max_in_flight: int = Field(default=4, ge=1, description="Concurrent request bound")
    cache_dir: Optional[Path] = Field(default=None, description="Response cache directory; disabled if unset")
    api_key_env: str = Field(default="OPENAI_API_KEY", description="Environment variable holding the API key")
    requests_per_minute: Optional[float] = Field(
        default=None, gt=0, description="Token-bucket rate; unlimited if unset"
    )
    backoff_base_s: float = Field(default=1.0, ge=0, description="First retry delay")
    backoff_max_s: float = Field(default=60.0, ge=0, description="Retry delay ceiling")


class ExperimentConfig(BaseModel):
    """A complete experiment: data, windows, prompt, backend and predictor."""

    model_config = ConfigDict(extra="forbid")

    stays_path: Optional[Path] = Field(default=None, description="Stay table (csv or jsonl)")
    tracks_path: Optional[Path] = Field(default=None, description="Track-point CSV, used when no stay table is given")
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    window: WindowConfig = Field(default_factory=WindowConfig)
    prompt: PromptConfig = Field(default_factory=PromptConfig)
    backend: BackendConfig = Field(default_factory=BackendConfig)
    backend_name: str = Field(default="llm", description="Registry name of the backend used by the llm predictor")
    predictor: PredictorName = Field(default="llm")
    output_dir: Path = Field(default=Path("outputs"))
    seed: int = Field(default=0, description="Seed for drawing the sample_limit subset")
    sample_limit: Optional[int] = Field(
        default=None, ge=1, description="Process a seeded random subset of N samples, kept in sample_id order"
    )
    repeats: int = Field(default=1, ge=1, description="Independent repeats (robustness runs)")

    @model_validator(mode="after")
    def validate_sources(self):
        if self.stays_path is None and self.tracks_path is None:
            raise ValueError("One of stays_path / tracks_path is required")
        return self

    def check_paths(self) -> None:
        """Verify referenced paths exist and output_dir is writable."""
        for source in (self.stays_path, self.tracks_path):
            if source is not None and not source.exists():
                raise NextPlaceException(
                    ErrorCode.COMMON_CONFIG_ERROR, message_args={"config_error": f"{source} does not exist"}
                )
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise NextPlaceException(
                ErrorCode.COMMON_CONFIG_ERROR, message_args={"config_error": f"{self.output_dir}: {e}"}
            ) from e


# ==================== Flat key-value files ====================


def _coerce_scalar(value: str) -> Any:
    lowered = value.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    return value


def parse_flat_config(text: str) -> Dict[str, Any]:
    """Parse ``key = value`` lines; dotted keys nest (``backend.temperature = 0.5``)."""
    result: Dict[str, Any] = {}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise NextPlaceException(
                ErrorCode.COMMON_CONFIG_ERROR,
                message_args={"config_error": f"line {line_number} is not 'key = value': {raw_line!r}"},
            )
        node = result
        parts = [part.strip() for part in key.strip().split(".")]
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _coerce_scalar(value.strip())
    return result


def load_experiment_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """Build an ExperimentConfig from a flat key-value file plus dotted-key overrides."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = parse_flat_config(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise NextPlaceException(
                ErrorCode.COMMON_CONFIG_ERROR, message_args={"config_error": f"cannot read {path}: {e}"}
            ) from e
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise NextPlaceException(ErrorCode.COMMON_CONFIG_ERROR, message_args={"config_error": str(e)}) from e

