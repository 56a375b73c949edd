# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from typing import Optional

from nextplace_core.config import BackendConfig
from pydantic import ConfigDict, Field


class OpenAIBackendConfig(BackendConfig):
    """Chat-completions specific configuration."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    api_key: Optional[str] = Field(
        default=None,
        description="API key; read from the api_key_env variable when unset",
        json_schema_extra={"input_type": "password"},
    )
    max_tokens: Optional[int] = Field(default=None, ge=1, description="Completion length cap sent with each request")
