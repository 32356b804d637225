"""Exception hierarchy shared across the advisory pipeline."""

from __future__ import annotations


class AdvisorError(Exception):
    """Base class for every error raised by this package."""


# --- quantities and units ---------------------------------------------------


class UnparsableQuantity(AdvisorError, ValueError):
    pass


class UnknownUnit(AdvisorError, ValueError):
    pass


class UnitMismatch(AdvisorError, ValueError):
    def __init__(self, left: str, right: str, reason: str = "") -> None:
        self.left = left
        self.right = right
        msg = f"incomparable units {left!r} and {right!r}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class ScenarioInvalid(AdvisorError, ValueError):
    pass


# --- advisory documents -----------------------------------------------------


class PmaParseError(AdvisorError, ValueError):
    pass


class MissingSection(PmaParseError):
    pass


class MissingDecisionMarker(PmaParseError):
    pass


class DuplicateSection(PmaParseError):
    pass


# --- knowledge base ---------------------------------------------------------


class CorpusNotFound(AdvisorError, FileNotFoundError):
    pass


class MalformedDoc(AdvisorError, ValueError):
    def __init__(self, path: str, cause: object) -> None:
        self.path = path
        self.cause = cause
        super().__init__(f"{path}: {cause}")


# --- model backends ---------------------------------------------------------


class BackendError(AdvisorError):
    pass


class BackendConfigError(BackendError, ValueError):
    pass


class BackendTimeout(BackendError, TimeoutError):
    pass


class RemoteRefusal(BackendError):
    def __init__(self, status: int, body: str) -> None:
        self.status = status
        self.body = body
        super().__init__(f"remote returned HTTP {status}: {body[:500]}")


class MalformedResponse(BackendError, ValueError):
    pass


class UnrecognizedScriptedTask(BackendError, ValueError):
    pass


# --- agents, tasks and tools ------------------------------------------------


class MissingArtifact(AdvisorError, FileNotFoundError):
    def __init__(self, placeholder: str, path: str) -> None:
        self.placeholder = placeholder
        self.path = path
        super().__init__(f"missing artifact {placeholder}: {path}")


class NoStructuredBlock(AdvisorError, ValueError):
    pass


class SchemaViolation(AdvisorError, ValueError):
    def __init__(self, field: str, cause: object) -> None:
        self.field = field
        self.cause = cause
        super().__init__(f"{field}: {cause}")


class ToolNotAllowed(AdvisorError, PermissionError):
    def __init__(self, agent: str, kind: str) -> None:
        self.agent = agent
        self.kind = kind
        super().__init__(f"agent {agent} may not use tool {kind}")


class ToolIoError(AdvisorError, OSError):
    pass


# --- orchestration and evaluation -------------------------------------------


class StageFailure(AdvisorError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")


class LengthMismatch(AdvisorError, ValueError):
    pass


class EmptyInput(AdvisorError, ValueError):
    pass


class SpecInvalid(AdvisorError, ValueError):
    pass


class DatasetError(AdvisorError, ValueError):
    def __init__(self, message: str, row: int | None = None) -> None:
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)
