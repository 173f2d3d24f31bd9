"""Deterministic stand-in for a chat-completions endpoint.

Used by the test suite and by offline CLI runs: a responder function maps
the request payload to a scripted reply (text, optional first-token
logprobs) or to an HTTP status for failure injection. The stub can be
mounted in-process as an httpx transport or served over real HTTP.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping, Sequence

import httpx


@dataclass(frozen=True)
class StubReply:
    text: str
    first_token_logprobs: Mapping[str, float] | None = None


# A responder returns a StubReply, plain text, or an int HTTP status to fail with.
Responder = Callable[[dict], "StubReply | str | int"]


class StubLlm:
    def __init__(self, responder: Responder):
        self._responder = responder
        self._lock = threading.Lock()

    def handle(self, payload: dict) -> tuple[int, dict]:
        with self._lock:
            reply = self._responder(payload)
        if isinstance(reply, int):
            return reply, {"error": {"message": f"injected status {reply}", "code": reply}}
        if isinstance(reply, str):
            reply = StubReply(text=reply)
        return 200, _completion_json(payload, reply)

    def as_transport(self) -> httpx.MockTransport:
        def handler(request: httpx.Request) -> httpx.Response:
            status, body = self.handle(json.loads(request.content.decode("utf-8")))
            return httpx.Response(status, json=body)

        return httpx.MockTransport(handler)

    def serve(self, host: str = "127.0.0.1", port: int = 0) -> "StubServer":
        return StubServer(self, host, port)


def _completion_json(payload: dict, reply: StubReply) -> dict:
    logprobs = None
    if reply.first_token_logprobs is not None:
        entries = [
            {"token": token, "logprob": float(lp)}
            for token, lp in reply.first_token_logprobs.items()
        ]
        logprobs = {
            "content": [
                {
                    "token": entries[0]["token"] if entries else "",
                    "logprob": entries[0]["logprob"] if entries else 0.0,
                    "top_logprobs": entries,
                }
            ]
        }
    prompt_tokens = sum(len(m.get("content", "").split()) for m in payload.get("messages", []))
    return {
        "id": "stub",
        "object": "chat.completion",
        "model": payload.get("model", "stub"),
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": reply.text},
                "finish_reason": "stop",
                "logprobs": logprobs,
            }
        ],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": max(1, len(reply.text.split())),
            "total_tokens": prompt_tokens + max(1, len(reply.text.split())),
        },
    }


def user_text(payload: dict) -> str:
    """Concatenated user-role content of the request, for prompt matching."""
    return "\n".join(
        m.get("content", "") for m in payload.get("messages", []) if m.get("role") == "user"
    )


def fixed(text: str) -> Responder:
    return lambda payload: text


def sequence(replies: Sequence["StubReply | str | int"]) -> Responder:
    """Pop scripted replies in order; raises when the script runs dry."""
    remaining = list(replies)

    def responder(payload: dict) -> "StubReply | str | int":
        if not remaining:
            raise AssertionError("stub script exhausted")
        return remaining.pop(0)

    return responder


def digit_logprobs(mass: Mapping[int, float]) -> StubReply:
    """Reply whose first-token distribution puts the given mass on digit tokens."""
    if not mass:
        raise ValueError("mass must be non-empty")
    logprobs = {str(score): math.log(p) for score, p in mass.items() if p > 0}
    top = max(mass, key=lambda s: mass[s])
    return StubReply(text=str(top), first_token_logprobs=logprobs)


def rotating_by_marker(pools: Mapping[str, Sequence[str]], fallback: str = "") -> Responder:
    """Cycle through a text pool chosen by which marker appears in the prompt.

    Gives offline demos distinct 'samples' from repeated identical requests.
    """
    counters: dict[str, int] = {}

    def responder(payload: dict) -> str:
        prompt = user_text(payload)
        for marker, pool in pools.items():
            if marker in prompt:
                i = counters.get(marker, 0)
                counters[marker] = i + 1
                return pool[i % len(pool)]
        if fallback:
            return fallback
        raise AssertionError(f"no marker matched prompt: {prompt[:120]!r}")

    return responder


class _Handler(BaseHTTPRequestHandler):
    stub: StubLlm  # set by StubServer

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except json.JSONDecodeError:
            self._send(400, {"error": {"message": "invalid JSON"}})
            return
        status, body = self.stub.handle(payload)
        self._send(status, body)

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args: object) -> None:
        pass


class StubServer:
    """Real-HTTP wrapper around a StubLlm, bound to an ephemeral port."""

    def __init__(self, stub: StubLlm, host: str, port: int):
        handler = type("BoundHandler", (_Handler,), {"stub": stub})
        self._server = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "StubServer":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
