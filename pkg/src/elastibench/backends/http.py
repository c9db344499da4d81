"""HTTP client backend speaking the JSON wire protocol.

POSTs invocation requests to ``<endpoint>/invoke``. 5xx and 429 responses
and transport errors are retryable; 4xx and malformed bodies are not. The
endpoint comes from the backend config or the ``ELASTIBENCH_ENDPOINT``
environment variable.
"""

from __future__ import annotations

import json
import os
import socket
import urllib.error
import urllib.request

from ..errors import ConfigError, InvocationError
from . import (
    Backend,
    InvocationRequest,
    InvocationResponse,
    request_to_wire,
    response_from_wire,
)

ENDPOINT_ENV = "ELASTIBENCH_ENDPOINT"


class HttpBackend(Backend):
    def __init__(
        self,
        endpoint: str | None = None,
        *,
        per_benchmark_timeout_s: float = 20.0,
        in_call_repeats: int = 3,
        deadline_slack_s: float = 30.0,
    ):
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ConfigError(
                f"http backend needs an endpoint (config or ${ENDPOINT_ENV})"
            )
        self.endpoint = endpoint.rstrip("/")
        self._per_benchmark_timeout_s = per_benchmark_timeout_s
        self._in_call_repeats = in_call_repeats
        self._deadline_slack_s = deadline_slack_s

    def _deadline(self, request: InvocationRequest) -> float:
        # Worst legitimate case: every benchmark-version run uses its full timeout.
        runs = len(request.benchmarks) * request.in_call_repeats * 2
        return runs * request.per_benchmark_timeout_s + self._deadline_slack_s

    def invoke(self, request: InvocationRequest) -> InvocationResponse:
        body = json.dumps(request_to_wire(request)).encode("utf-8")
        req = urllib.request.Request(
            f"{self.endpoint}/invoke",
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self._deadline(request)) as resp:
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            retryable = exc.code >= 500 or exc.code == 429
            raise InvocationError(
                f"endpoint answered HTTP {exc.code}", kind="http_status",
                retryable=retryable,
            )
        except (TimeoutError, socket.timeout):
            raise InvocationError("invocation deadline exceeded", kind="timeout", retryable=True)
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (TimeoutError, socket.timeout)):
                raise InvocationError(
                    "invocation deadline exceeded", kind="timeout", retryable=True
                )
            raise InvocationError(f"transport failure: {exc.reason}", kind="transport", retryable=True)
        try:
            data = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InvocationError(f"response is not valid JSON: {exc}", kind="protocol")
        return response_from_wire(data)
