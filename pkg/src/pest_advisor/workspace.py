"""Per-run directory holding the files handed from one stage to the next."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import MissingArtifact

# placeholder name -> canonical file name
ARTIFACTS = {
    "query_path": "query.json",
    "example_path": "example.json",
    "example_pma_path": "example_pma.md",
    "initial_pma_path": "initial_pma.md",
    "custom_plan_path": "custom_plan.json",
    "retrieved_info_path": "retrieved_info.md",
    "custom_pma_path": "custom_pma.md",
}
VALIDATION_FILE = "validation.json"
VALIDATED_PMA_FILE = "validated_pma.md"
TRACE_FILE = "run.json"

# Trace keys that vary between otherwise identical runs.
# Timestamps vary per run; prompt sizes vary with the absolute workspace path.
VOLATILE_TRACE_KEYS = frozenset({"started", "ended", "prompt_chars", "prompt_tokens", "total_tokens"})


@dataclass(frozen=True)
class Workspace:
    root: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", Path(self.root).resolve())

    def path(self, placeholder: str) -> Path:
        return self.root / ARTIFACTS[placeholder]

    def file(self, name: str) -> Path:
        return self.root / name

    def paths(self) -> dict[str, str]:
        return {ph: str(self.path(ph)) for ph in ARTIFACTS}

    def require(self, placeholder: str) -> Path:
        path = self.path(placeholder)
        if not path.is_file():
            raise MissingArtifact("{" + placeholder + "}", str(path))
        return path

    def read(self, placeholder: str) -> str:
        return self.require(placeholder).read_text(encoding="utf-8")

    def write_once(self, name: str, text: str) -> Path:
        """Create ``name``; an existing file is an error (artifacts are write-once)."""
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        with path.open("x", encoding="utf-8") as fh:
            fh.write(text)
        return path

    def write_json_once(self, name: str, data: Any) -> Path:
        return self.write_once(name, json.dumps(data, indent=2, ensure_ascii=False) + "\n")

    def read_json(self, name: str, placeholder: str | None = None) -> Any:
        path = self.root / name
        if not path.is_file():
            raise MissingArtifact(placeholder or name, str(path))
        return json.loads(path.read_text(encoding="utf-8"))


def canonical_trace(data: dict[str, Any]) -> dict[str, Any]:
    """Trace without timestamps or path-dependent sizes, for digests and reproducible output."""

    def strip(obj: Any) -> Any:
        if isinstance(obj, dict):
            return {k: strip(v) for k, v in obj.items() if k not in VOLATILE_TRACE_KEYS}
        if isinstance(obj, list):
            return [strip(v) for v in obj]
        return obj

    return strip(data)


def workspace_digest(root: str | Path) -> str:
    """SHA-256 over every file in a workspace, ignoring trace timestamps."""
    base = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in base.rglob("*") if p.is_file()):
        rel = path.relative_to(base).as_posix()
        data = path.read_bytes()
        if rel == TRACE_FILE:
            data = json.dumps(canonical_trace(json.loads(data)), sort_keys=True).encode("utf-8")
        h.update(rel.encode("utf-8") + b"\0" + hashlib.sha256(data).digest())
    return h.hexdigest()
