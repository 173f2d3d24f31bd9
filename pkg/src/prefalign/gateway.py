"""Thin JSON-over-HTTP client for chat-completions endpoints.

One entry point (complete) with retry, exponential backoff, and a
content-addressed disk cache. Requests are canonicalized and hashed so a
cache hit returns byte-identical responses; sampled requests (temperature
above zero) skip the cache unless replay is explicitly enabled.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import httpx


class GatewayError(RuntimeError):
    """Raised when the endpoint rejects a request or retries are exhausted."""


class MissingLogprobsError(GatewayError):
    """Raised when logprobs were requested but absent from the response."""


_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class LlmRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    want_logprobs: bool = False
    top_logprobs: int = 0

    def __post_init__(self) -> None:
        if not self.model:
            raise ValueError("model must be non-empty")
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if not math.isfinite(self.temperature) or self.temperature < 0:
            raise ValueError(f"temperature must be finite and >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.want_logprobs and self.top_logprobs < 1:
            raise ValueError("want_logprobs requires top_logprobs >= 1")

    def payload(self) -> dict:
        body: dict = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.want_logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = self.top_logprobs
        return body


@dataclass(frozen=True)
class LlmResponse:
    text: str
    first_token_logprobs: Mapping[str, float] | None = None
    usage: Mapping[str, int] = field(default_factory=dict)


def cache_key(request: LlmRequest) -> str:
    canonical = json.dumps(request.payload(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    api_key: str = ""
    timeout: float = 60.0
    max_retries: int = 4
    backoff_base: float = 0.5
    cache_dir: str | Path | None = None
    replay_sampled: bool = False


_RETRY_STATUSES = {429, 500, 502, 503, 504}


class Gateway:
    """Synchronous client. A custom transport can be injected for tests."""

    def __init__(self, config: GatewayConfig, transport: httpx.BaseTransport | None = None):
        self._config = config
        headers = {}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "Gateway":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _cache_path(self, key: str) -> Path | None:
        if self._config.cache_dir is None:
            return None
        return Path(self._config.cache_dir) / f"{key}.json"

    def _cacheable(self, request: LlmRequest) -> bool:
        if self._config.cache_dir is None:
            return False
        return request.temperature == 0 or self._config.replay_sampled

    def complete(self, request: LlmRequest) -> LlmResponse:
        path = self._cache_path(cache_key(request)) if self._cacheable(request) else None
        if path is not None and path.exists():
            return _response_from_json(json.loads(path.read_text(encoding="utf-8")))

        data = self._post_with_retries(request.payload())
        if "error" in data:
            raise GatewayError(f"provider error: {data['error']!r}")
        response = _parse_completion(data)
        if request.want_logprobs and not response.first_token_logprobs:
            raise MissingLogprobsError(
                "response carries no first-token logprobs; "
                "does the endpoint support top_logprobs?"
            )
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".tmp.{os.getpid()}")
            tmp.write_text(
                json.dumps(_response_to_json(response), ensure_ascii=False), encoding="utf-8"
            )
            tmp.replace(path)
        return response

    def _post_with_retries(self, payload: dict) -> dict:
        last_error = "no attempts made"
        for attempt in range(self._config.max_retries + 1):
            if attempt and self._config.backoff_base > 0:
                time.sleep(self._config.backoff_base * 2 ** (attempt - 1))
            try:
                reply = self._client.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if reply.status_code in _RETRY_STATUSES:
                last_error = f"status {reply.status_code}"
                continue
            if reply.status_code != 200:
                raise GatewayError(f"status {reply.status_code}: {reply.text[:500]}")
            try:
                return reply.json()
            except json.JSONDecodeError as exc:
                raise GatewayError(f"non-JSON response body: {exc}") from exc
        raise GatewayError(
            f"giving up after {self._config.max_retries + 1} attempts ({last_error})"
        )


def _parse_completion(data: dict) -> LlmResponse:
    try:
        choice = data["choices"][0]
        text = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise GatewayError(f"malformed completion payload: {exc!r}") from exc
    logprobs = None
    lp = choice.get("logprobs")
    if lp and lp.get("content"):
        first = lp["content"][0]
        logprobs = {
            entry["token"]: float(entry["logprob"])
            for entry in first.get("top_logprobs", [])
        }
        # some endpoints omit the sampled token from its own top list
        if "token" in first and first["token"] not in logprobs:
            logprobs[first["token"]] = float(first["logprob"])
    usage = {k: int(v) for k, v in data.get("usage", {}).items()}
    return LlmResponse(text=text, first_token_logprobs=logprobs, usage=usage)


def _response_to_json(response: LlmResponse) -> dict:
    return {
        "text": response.text,
        "first_token_logprobs": dict(response.first_token_logprobs)
        if response.first_token_logprobs is not None
        else None,
        "usage": dict(response.usage),
    }


def _response_from_json(obj: dict) -> LlmResponse:
    logprobs = obj.get("first_token_logprobs")
    return LlmResponse(
        text=obj["text"],
        first_token_logprobs=dict(logprobs) if logprobs is not None else None,
        usage={k: int(v) for k, v in obj.get("usage", {}).items()},
    )
