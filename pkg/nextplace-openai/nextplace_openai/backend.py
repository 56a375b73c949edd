# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import os
import time
from typing import Any, Dict, Optional, Union

import httpx
from nextplace_core.backends import CompletionBackend
from nextplace_core.config import BackendConfig
from nextplace_core.models import PromptText, RawResponse
from nextplace_core.utils.exceptions import ErrorCode, NextPlaceException
from nextplace_core.utils.loggings import get_logger
from tenacity import RetryCallState, Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from .config import OpenAIBackendConfig
from .ratelimit import TokenBucket

logger = get_logger(__name__)

RETRIABLE_STATUS = frozenset({429, 500, 502, 503, 504})
AUTH_STATUS = frozenset({401, 403})


class TransientError(Exception):
    """A failure worth retrying: HTTP 429/5xx, a timeout or a dropped connection."""

    def __init__(self, message: str, status_code: Optional[int] = None):
        super().__init__(message)
        self.status_code = status_code


def _handle_http_exception(e: Exception, attempts: int = 1) -> NextPlaceException:
    """Map transport failures to NextPlace exceptions."""
    if isinstance(e, NextPlaceException):
        return e
    error_message = str(e) or type(e).__name__
    if isinstance(e, TransientError):
        if e.status_code == 429:
            return NextPlaceException(
                ErrorCode.BACKEND_RATE_LIMITED, message_args={"attempts": attempts, "error_message": error_message}
            )
        return NextPlaceException(
            ErrorCode.BACKEND_TRANSPORT_ERROR,
            message_args={"error_message": f"{error_message} (after {attempts} attempts)"},
        )
    if isinstance(e, httpx.HTTPStatusError):
        status = e.response.status_code
        if status in AUTH_STATUS:
            return NextPlaceException(
                ErrorCode.BACKEND_AUTH_FAILED, message_args={"error_message": f"HTTP {status}: {e.response.text[:200]}"}
            )
        return NextPlaceException(
            ErrorCode.BACKEND_TRANSPORT_ERROR, message_args={"error_message": f"HTTP {status}: {e.response.text[:200]}"}
        )
    if isinstance(e, (httpx.HTTPError, ValueError)):
        return NextPlaceException(ErrorCode.BACKEND_TRANSPORT_ERROR, message_args={"error_message": error_message})
    return NextPlaceException(
        ErrorCode.BACKEND_TRANSPORT_ERROR, message_args={"error_message": f"{type(e).__name__}: {error_message}"}
    )


def _log_retry(retry_state: RetryCallState) -> None:
    outcome = retry_state.outcome.exception() if retry_state.outcome else None
    delay = retry_state.next_action.sleep if retry_state.next_action else 0.0
    logger.debug(f"Attempt {retry_state.attempt_number} failed ({outcome}); retrying in {delay:.2f}s")


class OpenAIChatBackend(CompletionBackend):
    """OpenAI-compatible ``/chat/completions`` client.

    One user message per request, no system message. Transient failures are
    retried with exponential backoff up to ``max_retries`` times.
    """

    config_class = OpenAIBackendConfig

    def __init__(
        self,
        config: Union[OpenAIBackendConfig, BackendConfig, dict],
        transport: Optional[httpx.BaseTransport] = None,
    ):
        super().__init__(config)
        self.api_key = self.config.api_key or os.environ.get(self.config.api_key_env) or None
        if self.api_key is None:
            logger.warning(f"No API key in ${self.config.api_key_env}; requests are sent without Authorization")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self.client = httpx.Client(
            base_url=self.config.endpoint_url.rstrip("/"),
            headers=headers,
            timeout=self.config.timeout_s,
            limits=httpx.Limits(max_connections=self.config.max_in_flight),
            transport=transport,
        )
        self.rate_limiter = (
            TokenBucket(self.config.requests_per_minute) if self.config.requests_per_minute is not None else None
        )

    def request_body(self, prompt: PromptText) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "model": self.config.model_id,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt.text}],
        }
        if self.config.max_tokens is not None:
            body["max_tokens"] = self.config.max_tokens
        return body

    def backoff(self) -> wait_exponential:
        """Delays base, 2*base, 4*base, ... capped at backoff_max_s."""
        return wait_exponential(multiplier=self.config.backoff_base_s, max=self.config.backoff_max_s)

    def _post(self, body: Dict[str, Any]) -> Dict[str, Any]:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        try:
            response = self.client.post("/chat/completions", json=body)
        except (httpx.TimeoutException, httpx.NetworkError, httpx.RemoteProtocolError) as e:
            raise TransientError(f"{type(e).__name__}: {e}") from e
        if response.status_code in RETRIABLE_STATUS:
            raise TransientError(f"HTTP {response.status_code}: {response.text[:200]}", response.status_code)
        response.raise_for_status()
        return response.json()

    def _send(self, prompt: PromptText) -> RawResponse:
        body = self.request_body(prompt)
        started = time.perf_counter()
        attempts = 0
        retrying = Retrying(
            stop=stop_after_attempt(1 + self.config.max_retries),
            wait=self.backoff(),
            retry=retry_if_exception_type(TransientError),
            before_sleep=_log_retry,
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    attempts = attempt.retry_state.attempt_number
                    payload = self._post(body)
        except Exception as e:
            raise _handle_http_exception(e, attempts) from e

        latency_ms = (time.perf_counter() - started) * 1000.0
        text = self._content(payload)
        usage = payload.get("usage") or {}
        return RawResponse(
            text=text,
            model_id=payload.get("model") or self.config.model_id,
            latency_ms=latency_ms,
            attempt_count=attempts,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )

    @staticmethod
    def _content(payload: Dict[str, Any]) -> str:
        try:
            message = payload["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as e:
            raise NextPlaceException(
                ErrorCode.BACKEND_TRANSPORT_ERROR, message_args={"error_message": f"malformed payload: {e!r}"}
            ) from e
        content = message.get("content") if isinstance(message, dict) else None
        if not isinstance(content, str) or not content.strip():
            refusal = message.get("refusal") if isinstance(message, dict) else None
            raise NextPlaceException(
                ErrorCode.BACKEND_CONTENT_REFUSAL, message_args={"error_message": refusal or "empty content"}
            )
        return content

    def close(self) -> None:
        try:
            self.client.close()
        except Exception as e:
            logger.warning(f"Error closing HTTP client: {e}")
