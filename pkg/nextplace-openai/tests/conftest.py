# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import json
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Dict, List, Optional, Tuple

import pytest


def pytest_configure(config):
    """Configure custom markers."""
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests (deselect with '-m \"not integration\"')"
    )
    config.addinivalue_line("markers", "acceptance: marks tests as acceptance tests for CI/CD")
    config.addinivalue_line("markers", "live: marks tests that need a real completion endpoint and API key")


def chat_payload(content: Optional[str], model: str = "stub-model", **message_fields) -> Dict[str, Any]:
    """A chat-completions response body carrying ``content``."""
    message = {"role": "assistant", "content": content, **message_fields}
    return {
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "message": message, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 42, "completion_tokens": 7, "total_tokens": 49},
    }


DEFAULT_ANSWER = '{"prediction": [1, 2, 3], "reason": "stub"}'


class StubChatServer:
    """Local chat-completions endpoint with scripted statuses.

    Queued ``(status, payload)`` pairs are served first, then the default
    answer. Request bodies, headers and the peak number of concurrently
    handled requests are recorded.
    """

    def __init__(self):
        self.responses: deque = deque()
        self.requests: List[Dict[str, Any]] = []
        self.delay_s = 0.0
        self.active = 0
        self.peak = 0
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _handler_for(self))
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1"

    def queue(self, status: int, payload: Any = None, times: int = 1) -> None:
        if payload is None:
            payload = {"error": {"message": f"HTTP {status}"}}
        for _ in range(times):
            self.responses.append((status, payload))

    def begin(self, path: str, headers: Dict[str, str], body: Any) -> Tuple[int, Any]:
        with self._lock:
            self.requests.append({"path": path, "headers": headers, "body": body})
            self.active += 1
            self.peak = max(self.peak, self.active)
            if self.responses:
                return self.responses.popleft()
        return 200, chat_payload(DEFAULT_ANSWER)

    def end(self) -> None:
        with self._lock:
            self.active -= 1

    def start(self) -> "StubChatServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


def _handler_for(stub: StubChatServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length) if length else b""
            body = json.loads(raw) if raw else None
            status, payload = stub.begin(self.path, {k.lower(): v for k, v in self.headers.items()}, body)
            try:
                if stub.delay_s:
                    time.sleep(stub.delay_s)
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
            finally:
                stub.end()

        def log_message(self, format, *args):
            pass

    return Handler


@pytest.fixture
def stub_server():
    server = StubChatServer().start()
    yield server
    server.stop()


@pytest.fixture
def stub_config(stub_server, tmp_path):
    """Backend settings pointing at the stub with fast retries."""
    return {
        "endpoint_url": stub_server.url,
        "model_id": "stub-model",
        "api_key": "sk-test",
        "max_retries": 2,
        "backoff_base_s": 0.0,
        "backoff_max_s": 0.0,
        "timeout_s": 5.0,
        "max_in_flight": 3,
    }
