"""Chat-completions HTTP client with bounded retries, plus fixture record/replay."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Any, Callable

import httpx

from ..errors import BackendError, BackendTimeout, MalformedResponse, RemoteRefusal
from .base import BackendConfig, ChatExchange, Completion, Role

logger = logging.getLogger(__name__)

TRANSIENT_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


def completions_url(endpoint: str) -> str:
    url = endpoint.rstrip("/")
    return url if url.endswith("/chat/completions") else f"{url}/chat/completions"


def wire_messages(exchange: ChatExchange) -> list[dict[str, str]]:
    # Tool output is inlined by the orchestrator, not produced by a model tool
    # call, so there is no tool_call_id to attach. Send it as user content.
    out = []
    for m in exchange.messages:
        if m.role is Role.TOOL:
            out.append({"role": "user", "content": f"[tool output]\n{m.content}"})
        else:
            out.append({"role": m.role.value, "content": m.content})
    return out


def build_payload(exchange: ChatExchange, model: str) -> dict[str, Any]:
    return {
        "model": model,
        "messages": wire_messages(exchange),
        "temperature": exchange.temperature,
        "max_tokens": exchange.max_output,
    }


def extract_text(body: Any) -> tuple[str, dict[str, Any]]:
    try:
        message = body["choices"][0]["message"]
        text = message["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"no choices[0].message.content in response: {exc!r}") from exc
    if not isinstance(text, str):
        raise MalformedResponse("assistant content is not a string")
    usage = body.get("usage") if isinstance(body, dict) else None
    return text, dict(usage) if isinstance(usage, dict) else {}


class RemoteBackend:
    kind = "remote"

    def __init__(
        self,
        config: BackendConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self._sleep = sleep
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, exchange: ChatExchange, agent: str | None = None) -> Completion:
        model = self.config.model_for(agent)
        payload = build_payload(exchange, model or "")
        url = completions_url(self.config.endpoint or "")
        last_error: BackendError | None = None
        attempts = 0
        with self._slots:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
                attempts += 1
                logger.debug("POST %s attempt %d model=%s", url, attempts, model)
                try:
                    resp = self._client.post(url, json=payload, headers=self._headers())
                except httpx.TimeoutException as exc:
                    last_error = BackendTimeout(f"request timed out after {self.config.timeout}s")
                    last_error.__cause__ = exc
                    continue
                except httpx.TransportError as exc:
                    last_error = BackendError(f"transport error: {exc}")
                    continue
                if resp.status_code // 100 == 2:
                    try:
                        body = resp.json()
                    except json.JSONDecodeError as exc:
                        raise MalformedResponse(f"response is not JSON: {exc}") from exc
                    text, usage = extract_text(body)
                    usage.update({"backend": "remote", "model": model, "attempts": attempts})
                    return Completion(text, usage)
                last_error = RemoteRefusal(resp.status_code, resp.text)
                if resp.status_code not in TRANSIENT_STATUS:
                    break
        assert last_error is not None
        last_error.attempts = attempts  # type: ignore[attr-defined]
        raise last_error


class ReplayTransport(httpx.BaseTransport):
    """Serves the responses of a recorded fixture, one per request, in order."""

    def __init__(self, fixture: dict[str, Any]) -> None:
        self.fixture = fixture
        self.requests: list[dict[str, Any]] = []
        self._responses = list(fixture["responses"])

    @classmethod
    def from_file(cls, path: str | Path) -> ReplayTransport:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(json.loads(request.content or b"null"))
        if not self._responses:
            raise AssertionError("fixture exhausted: more requests than recorded responses")
        entry = self._responses.pop(0)
        if entry.get("timeout"):
            raise httpx.ReadTimeout("recorded timeout", request=request)
        if "json" in entry:
            return httpx.Response(entry["status"], json=entry["json"], request=request)
        return httpx.Response(entry["status"], text=entry.get("text", ""), request=request)


class RecordingTransport(httpx.BaseTransport):
    """Wraps a live transport and keeps every exchange for writing a fixture.

    Authorization headers are not recorded.
    """

    def __init__(self, inner: httpx.BaseTransport | None = None) -> None:
        self.inner = inner or httpx.HTTPTransport()
        self.request_body: Any = None
        self.responses: list[dict[str, Any]] = []

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        self.request_body = json.loads(request.content or b"null")
        try:
            resp = self.inner.handle_request(request)
        except httpx.TimeoutException:
            self.responses.append({"timeout": True})
            raise
        resp.read()
        try:
            self.responses.append({"status": resp.status_code, "json": resp.json()})
        except json.JSONDecodeError:
            self.responses.append({"status": resp.status_code, "text": resp.text})
        return resp

    def fixture(self, completion: Completion | None, description: str = "") -> dict[str, Any]:
        return {
            "description": description,
            "request": self.request_body,
            "responses": self.responses,
            "capture": {
                "text": completion.text if completion else None,
                "attempts": len(self.responses),
            },
        }


def record_fixture(
    config: BackendConfig, exchange: ChatExchange, path: str | Path, description: str = ""
) -> Completion:
    """Run one live completion and save it as a replayable fixture."""
    recorder = RecordingTransport()
    completion = RemoteBackend(config, transport=recorder).complete(exchange)
    Path(path).write_text(
        json.dumps(recorder.fixture(completion, description), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return completion
