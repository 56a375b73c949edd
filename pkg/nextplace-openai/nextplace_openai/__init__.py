# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

from .backend import OpenAIChatBackend
from .config import OpenAIBackendConfig
from .ratelimit import TokenBucket

__version__ = "0.1.0"
__all__ = ["OpenAIChatBackend", "OpenAIBackendConfig", "TokenBucket", "register"]


def register():
    """Register the chat-completions backend with the NextPlace registry."""
    from nextplace_core.backends import backend_registry

    backend_registry.register("llm", OpenAIChatBackend, config_class=OpenAIBackendConfig)
