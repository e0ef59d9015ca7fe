"""Minimal chat-completion client with retries.

Requests are POSTed as ``{"model", "messages": [{role, content}], "temperature"}`` and
the first choice's message content is returned. The transport is injectable so tests
never touch the network.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Callable
from urllib.parse import urlparse

import httpx

log = logging.getLogger(__name__)

DEFAULT_KEY_ENV = "SMART_API_KEY"
RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


class RemoteError(RuntimeError):
    pass


class MissingCredential(RemoteError):
    pass


class TransportError(RemoteError):
    pass


class HTTPStatusError(RemoteError):
    def __init__(self, message: str, status_code: int):
        super().__init__(message)
        self.status_code = status_code


class MalformedResponse(RemoteError):
    pass


@dataclass(frozen=True)
class RemoteConfig:
    endpoint_url: str
    model_name: str
    api_key_env: str = DEFAULT_KEY_ENV
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: tuple[float, ...] = (1.0, 2.0, 4.0)

    def __post_init__(self):
        parsed = urlparse(self.endpoint_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"malformed endpoint URL {self.endpoint_url!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def backoff(self, attempt: int) -> float:
        if not self.retry_backoff:
            return 0.0
        return self.retry_backoff[min(attempt, len(self.retry_backoff) - 1)]


def _redact(text: str, secret: str) -> str:
    return text.replace(secret, "***") if secret else text


def chat_complete(
    config: RemoteConfig,
    system_message: str,
    user_message: str,
    transport: httpx.BaseTransport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Send one chat request; ``max_retries`` extra attempts on transient failures."""
    api_key = os.environ.get(config.api_key_env, "")
    if not api_key:
        raise MissingCredential(f"environment variable {config.api_key_env} is not set")

    body = {
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": system_message},
            {"role": "user", "content": user_message},
        ],
        "temperature": config.temperature,
    }
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
    log.debug("POST %s body=%s", config.endpoint_url, json.dumps(body))

    last_error: Exception | None = None
    with httpx.Client(transport=transport, timeout=config.timeout) as client:
        for attempt in range(config.max_retries + 1):
            if attempt:
                sleep(config.backoff(attempt - 1))
            try:
                response = client.post(config.endpoint_url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last_error = TransportError(_redact(f"transport failure: {exc}", api_key))
                log.debug("attempt %d failed: %s", attempt + 1, last_error)
                continue
            log.debug("attempt %d status=%d body=%s", attempt + 1, response.status_code,
                      _redact(response.text, api_key))
            if response.status_code in RETRYABLE_STATUS:
                last_error = HTTPStatusError(
                    f"endpoint returned status {response.status_code}", response.status_code
                )
                continue
            if not 200 <= response.status_code < 300:
                raise HTTPStatusError(
                    f"endpoint returned status {response.status_code}: "
                    f"{_redact(response.text[:200], api_key)}",
                    response.status_code,
                )
            return _extract_content(response, api_key)

    if isinstance(last_error, HTTPStatusError):
        raise last_error
    raise TransportError(f"giving up after {config.max_retries + 1} attempts: {last_error}")


def _extract_content(response: httpx.Response, api_key: str) -> str:
    try:
        payload = response.json()
        content = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise MalformedResponse(
            f"unexpected response body: {_redact(response.text[:200], api_key)}"
        ) from None
    if not isinstance(content, str):
        raise MalformedResponse("response content is not a string")
    return content
