"""Backend-independent message and configuration types."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol

from ..errors import BackendConfigError

DEFAULT_API_KEY_ENV = "PEST_ADVISOR_API_KEY"


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    TOOL = "tool"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class ChatExchange:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output: int = 4096

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role is Role.USER for m in self.messages):
            raise ValueError("an exchange needs at least one user message")
        if self.max_output < 1:
            raise ValueError("max_output must be positive")

    def to_json(self) -> dict[str, Any]:
        return {
            "messages": [{"role": m.role.value, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_output": self.max_output,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> ChatExchange:
        return cls(
            tuple(ChatMessage(Role(m["role"]), m["content"]) for m in data["messages"]),
            temperature=float(data.get("temperature", 0.0)),
            max_output=int(data.get("max_output", 4096)),
        )

    def text(self) -> str:
        return "\n\n".join(m.content for m in self.messages)

    def digest(self, replace: Mapping[str, str] | None = None) -> str:
        """SHA-256 of the canonical JSON form, after literal substitutions.

        The orchestrator passes ``{workspace_root: "$WORKSPACE"}`` so digests
        do not depend on where a run happened to be stored.
        """
        payload = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)
        for old, new in (replace or {}).items():
            payload = payload.replace(old, new)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Completion:
    text: str
    usage: dict[str, Any] = field(default_factory=dict)


class Backend(Protocol):
    kind: str

    def complete(self, exchange: ChatExchange, agent: str | None = None) -> Completion: ...


class BackendKind(str, enum.Enum):
    SCRIPTED = "scripted"
    REMOTE = "remote"


@dataclass(frozen=True)
class BackendConfig:
    """How agents get their text. The API key itself is never stored here."""

    kind: BackendKind = BackendKind.SCRIPTED
    endpoint: str | None = None
    model_name: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0
    max_output: int = 4096
    max_in_flight: int = 4
    backoff_base: float = 0.5
    agent_models: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", BackendKind(self.kind))
        except ValueError as exc:
            raise BackendConfigError(str(exc)) from exc
        object.__setattr__(self, "agent_models", dict(self.agent_models))
        if self.kind is BackendKind.REMOTE and not (self.endpoint and self.model_name):
            raise BackendConfigError("remote backend requires endpoint and model_name")
        if self.max_retries < 0:
            raise BackendConfigError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise BackendConfigError("timeout must be > 0")
        if self.max_in_flight < 1:
            raise BackendConfigError("max_in_flight must be >= 1")

    def model_for(self, agent: str | None) -> str | None:
        if agent and agent in self.agent_models:
            return self.agent_models[agent]
        return self.model_name

    def to_json(self) -> dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        data["agent_models"] = dict(self.agent_models)
        return data

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> BackendConfig:
        secret_keys = {k for k in data if k.lower() in ("api_key", "apikey", "key", "token")}
        if secret_keys:
            raise BackendConfigError(
                f"config must not contain secrets ({', '.join(sorted(secret_keys))}); "
                "name an environment variable in api_key_env instead"
            )
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise BackendConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def load(cls, path: str | Path) -> BackendConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise BackendConfigError(f"cannot read backend config {path}: {exc}") from exc
        return cls.from_json(data)
