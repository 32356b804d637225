"""Text-generation backends for the agents."""

from __future__ import annotations

from .base import (
    Backend,
    BackendConfig,
    BackendKind,
    ChatExchange,
    ChatMessage,
    Completion,
    Role,
)


def make_backend(config: BackendConfig, **kwargs) -> Backend:
    if config.kind is BackendKind.SCRIPTED:
        from .scripted import ScriptedBackend

        return ScriptedBackend()
    from .remote import RemoteBackend

    return RemoteBackend(config, **kwargs)


def complete(config: BackendConfig, exchange: ChatExchange, agent: str | None = None) -> Completion:
    return make_backend(config).complete(exchange, agent)


__all__ = [
    "Backend",
    "BackendConfig",
    "BackendKind",
    "ChatExchange",
    "ChatMessage",
    "Completion",
    "Role",
    "complete",
    "make_backend",
]
