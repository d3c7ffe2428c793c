"""Minimal client for OpenAI-compatible chat-completions and embeddings endpoints."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any

import httpx

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """A remote backend call failed; ``attempts`` counts the tries made."""

    def __init__(self, message: str, *, url: str, attempts: int):
        super().__init__(f"{message} [{url}, {attempts} attempt(s)]")
        self.url = url
        self.attempts = attempts


class TransportFailure(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class MalformedPayload(BackendError):
    pass


@dataclass
class Endpoint:
    """Where and how to reach a remote model.

    ``token_env`` names the environment variable holding the bearer token;
    the token itself never appears in configs.
    """

    url: str
    model: str = "default"
    token_env: str | None = None
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    sampling: dict = field(default_factory=dict)
    transport: Any = field(default=None, repr=False, compare=False)

    @classmethod
    def from_json(cls, obj: dict) -> "Endpoint":
        allowed = {"url", "model", "token_env", "timeout", "retries", "backoff", "sampling"}
        unknown = set(obj) - allowed - {"kind"}
        if unknown:
            raise ValueError(f"unknown endpoint keys {sorted(unknown)}")
        return cls(**{k: v for k, v in obj.items() if k in allowed})

    def to_json(self) -> dict:
        return {
            "url": self.url, "model": self.model, "token_env": self.token_env,
            "timeout": self.timeout, "retries": self.retries, "backoff": self.backoff,
            "sampling": dict(self.sampling),
        }

    def headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.token_env:
            token = os.environ.get(self.token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers


def _post(endpoint: Endpoint, path: str, payload: dict) -> dict:
    url = endpoint.url.rstrip("/") + path
    attempts = 0
    last: Exception | None = None
    with httpx.Client(timeout=endpoint.timeout, transport=endpoint.transport) as client:
        for attempt in range(endpoint.retries + 1):
            attempts = attempt + 1
            try:
                resp = client.post(url, json=payload, headers=endpoint.headers())
            except httpx.TimeoutException as exc:
                last = exc
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code >= 500:
                    last = httpx.HTTPStatusError(f"server error {resp.status_code}", request=resp.request, response=resp)
                elif resp.status_code >= 400:
                    raise TransportFailure(f"HTTP {resp.status_code}: {resp.text[:200]}", url=url, attempts=attempts)
                else:
                    try:
                        return resp.json()
                    except ValueError:
                        raise MalformedPayload("response body is not JSON", url=url, attempts=attempts) from None
            log.warning("request to %s failed (attempt %d): %s", url, attempts, last)
            if attempt < endpoint.retries and endpoint.backoff:
                time.sleep(endpoint.backoff * (attempt + 1))
    if isinstance(last, httpx.TimeoutException):
        raise BackendTimeout(f"timed out: {last}", url=url, attempts=attempts)
    raise TransportFailure(f"transport failure: {last}", url=url, attempts=attempts)


def chat_completion(endpoint: Endpoint, messages: list[dict], tools: list[dict] | None = None) -> dict:
    """POST a chat request and return the first choice's message object."""
    payload = {"model": endpoint.model, "messages": messages, **endpoint.sampling}
    if tools:
        payload["tools"] = tools
    body = _post(endpoint, "/chat/completions", payload)
    try:
        message = body["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        raise MalformedPayload("no choices[0].message in response", url=endpoint.url, attempts=1) from None
    if not isinstance(message, dict):
        raise MalformedPayload("choices[0].message is not an object", url=endpoint.url, attempts=1)
    return message


def embeddings(endpoint: Endpoint, texts: list[str]) -> list[list[float]]:
    body = _post(endpoint, "/embeddings", {"model": endpoint.model, "input": list(texts)})
    try:
        vectors = [list(map(float, item["embedding"])) for item in body["data"]]
    except (KeyError, TypeError, ValueError):
        raise MalformedPayload("embeddings response lacks data[].embedding", url=endpoint.url, attempts=1) from None
    if len(vectors) != len(texts):
        raise MalformedPayload(f"expected {len(texts)} embeddings, got {len(vectors)}", url=endpoint.url, attempts=1)
    return vectors
