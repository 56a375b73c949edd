# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import threading
from abc import ABC, abstractmethod
from typing import Optional, Union

from pydantic import BaseModel

from ..config import BackendConfig
from ..models import PromptText, RawResponse
from ..utils.loggings import get_logger
from .cache import ResponseCache

logger = get_logger(__name__)


class UsageCounters(BaseModel):
    """Per-backend request accounting, reported in the run summary."""

    requests: int = 0
    attempts: int = 0
    cache_hits: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


class CompletionBackend(ABC):
    """Base class for completion backends.

    Subclasses implement :meth:`_send`. :meth:`complete` wraps it with the
    response cache, the in-flight bound and usage accounting, and is safe to
    call from several threads.
    """

    config_class = BackendConfig

    def __init__(self, config: Union[BackendConfig, dict]):
        if isinstance(config, dict):
            config = self.config_class(**config)
        elif isinstance(config, BackendConfig):
            if not isinstance(config, self.config_class):
                config = self.config_class(**config.model_dump())
        else:
            raise TypeError(f"config must be {self.config_class.__name__} or dict, got {type(config)}")
        self.config = config
        self.cache: Optional[ResponseCache] = ResponseCache(config.cache_dir) if config.cache_dir else None
        self.usage = UsageCounters()
        self._usage_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    @property
    def model_id(self) -> str:
        return self.config.model_id

    def cache_key(self, prompt: PromptText) -> str:
        return ResponseCache.key(self.model_id, self.config.temperature, prompt.prompt_hash)

    def complete(self, prompt: PromptText, use_cache: bool = True) -> RawResponse:
        """Return the assistant text for ``prompt``.

        Args:
            prompt: Rendered prompt
            use_cache: When False the cache is neither read nor written

        Raises:
            NextPlaceException: BACKEND_* codes from the transport
        """
        key = self.cache_key(prompt)
        if self.cache is not None and use_cache:
            cached = self.cache.get(key)
            if cached is not None:
                logger.debug(f"Cache hit for prompt {prompt.prompt_hash[:12]}")
                with self._usage_lock:
                    self.usage.cache_hits += 1
                return RawResponse(text=cached, model_id=self.model_id, from_cache=True, attempt_count=0)

        with self._slots:
            response = self._send(prompt)

        with self._usage_lock:
            self.usage.requests += 1
            self.usage.attempts += response.attempt_count
            self.usage.prompt_tokens += response.prompt_tokens or 0
            self.usage.completion_tokens += response.completion_tokens or 0

        if self.cache is not None and use_cache:
            self.cache.put(key, response.text)
        return response

    @abstractmethod
    def _send(self, prompt: PromptText) -> RawResponse:
        """Send one request (with retries) and return the assistant text."""
        raise NotImplementedError

    def close(self) -> None:
        """Release transport resources."""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
