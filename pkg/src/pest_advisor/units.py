"""Quantities with normalized units and the free-text parser that produces them.

A unit token has the shape ``<count-kind>/<denominator>``, for example
``nematodes/litre-soil``. The set of valid tokens is closed and comes from an
alias table (``data/units.json`` by default) so that free-text phrases such as
"egg and larvae per gram of soil" map onto exactly one token.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import UnitMismatch, UnknownUnit, UnparsableQuantity

_NUMBER = re.compile(r"^\s*(\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)(?![\d,])")
_WS = re.compile(r"\s+")


def _norm_phrase(text: str) -> str:
    return _WS.sub(" ", text.strip().lower().rstrip(".")).strip()


class UnitRegistry:
    """Closed alias table mapping unit phrases to canonical tokens."""

    def __init__(
        self,
        count_kinds: dict[str, list[str]],
        denominators: dict[str, list[str]],
        wildcard_denominators: dict[str, dict[str, Any]] | None = None,
    ) -> None:
        self.count_kinds = {k: tuple(v) for k, v in count_kinds.items()}
        self.denominators = {k: tuple(v) for k, v in denominators.items()}
        self.wildcards: dict[str, frozenset[str]] = {}
        wildcard_aliases: dict[str, tuple[str, ...]] = {}
        for token, entry in (wildcard_denominators or {}).items():
            unknown = set(entry["matches"]) - set(self.denominators)
            if unknown:
                raise ValueError(f"wildcard {token} matches unknown denominators {sorted(unknown)}")
            self.wildcards[token] = frozenset(entry["matches"])
            wildcard_aliases[token] = tuple(entry.get("aliases", ()))

        self._kind_alias: dict[str, str] = {}
        for token, aliases in self.count_kinds.items():
            for alias in (token, token.replace("-", " "), *aliases):
                self._kind_alias[_norm_phrase(alias)] = token
        self._denom_alias: dict[str, str] = {}
        for token, aliases in {**self.denominators, **wildcard_aliases}.items():
            for alias in (token, token.replace("-", " "), *aliases):
                self._denom_alias[_norm_phrase(alias)] = token
        # longest alias first so "eggs and larvae" wins over "larvae"
        self._kind_by_length = sorted(self._kind_alias, key=lambda a: (-len(a), a))

    @classmethod
    def from_file(cls, path: str | Path) -> UnitRegistry:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["count_kinds"], data["denominators"], data.get("wildcard_denominators"))

    def tokens(self) -> set[str]:
        denoms = set(self.denominators) | set(self.wildcards)
        return {f"{k}/{d}" for k in self.count_kinds for d in denoms}

    def is_token(self, unit: str) -> bool:
        kind, sep, denom = unit.partition("/")
        return bool(sep) and kind in self.count_kinds and (
            denom in self.denominators or denom in self.wildcards
        )

    def split(self, unit: str) -> tuple[str, str]:
        if not self.is_token(unit):
            raise UnknownUnit(f"not a registered unit token: {unit!r}")
        kind, _, denom = unit.partition("/")
        return kind, denom

    def is_wildcard(self, unit: str) -> bool:
        return self.split(unit)[1] in self.wildcards

    def count_kind(self, phrase: str) -> str:
        """Resolve the count-kind named at the end of ``phrase``.

        Leading qualifier words are allowed ("Trichodorus nematodes").
        """
        text = _norm_phrase(phrase)
        for alias in self._kind_by_length:
            if text == alias or text.endswith(" " + alias):
                return self._kind_alias[alias]
        raise UnknownUnit(f"unknown count kind in {phrase!r}")

    def denominator(self, phrase: str) -> str:
        text = _norm_phrase(phrase)
        try:
            return self._denom_alias[text]
        except KeyError:
            raise UnknownUnit(f"unknown denominator {phrase!r}") from None

    def unit_from_phrase(self, phrase: str) -> str:
        """Turn ``"<kind words> per <denominator>"`` or a token into a token."""
        text = phrase.strip()
        if self.is_token(text):
            return text
        left, sep, right = _norm_phrase(text).rpartition(" per ")
        if not sep:
            if "/" in text:
                left, _, right = text.partition("/")
            else:
                raise UnknownUnit(f"no 'per' clause in unit phrase {phrase!r}")
        return f"{self.count_kind(left)}/{self.denominator(right)}"

    def count_phrase(self, kind: str) -> str:
        return self.count_kinds[kind][0] if self.count_kinds[kind] else kind.replace("-", " ")

    def denominator_phrase(self, denom: str) -> str:
        aliases = self.denominators.get(denom, ())
        return aliases[0] if aliases else denom.replace("-", " ")


_active_registry: UnitRegistry | None = None


def default_registry() -> UnitRegistry:
    global _active_registry
    if _active_registry is None:
        path = resources.files("pest_advisor") / "data" / "units.json"
        _active_registry = UnitRegistry.from_file(str(path))
    return _active_registry


def use_registry(path: str | Path | None) -> UnitRegistry:
    """Replace the process-wide registry; ``None`` restores the bundled table."""
    global _active_registry
    _active_registry = None if path is None else UnitRegistry.from_file(path)
    return default_registry()


def _to_decimal(value: Any) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, bool):
        raise TypeError("boolean is not a quantity value")
    try:
        return Decimal(str(value).replace(",", ""))
    except InvalidOperation:
        raise UnparsableQuantity(f"not a number: {value!r}") from None


@dataclass(frozen=True)
class Quantity:
    value: Decimal
    unit: str

    def __post_init__(self) -> None:
        value = _to_decimal(self.value)
        if not value.is_finite():
            raise ValueError(f"quantity value must be finite, got {value}")
        if value < 0:
            raise ValueError(f"quantity value must be >= 0, got {value}")
        object.__setattr__(self, "value", value)
        if not default_registry().is_token(self.unit):
            raise UnknownUnit(f"unit {self.unit!r} is not in the unit registry")

    def __str__(self) -> str:
        return f"{format_number(self.value)} {self.unit}"

    @classmethod
    def parse_token_form(cls, text: str) -> Quantity:
        """Inverse of ``str(q)``."""
        number, _, unit = text.strip().partition(" ")
        return cls(_to_decimal(number), unit.strip())

    def to_json(self) -> dict[str, Any]:
        return {"value": format_number(self.value), "unit": self.unit}


def format_number(value: Decimal) -> str:
    """Plain (non-scientific) rendering that round-trips through ``Decimal``."""
    return format(value, "f")


def parse_quantity(raw: str, registry: UnitRegistry | None = None) -> Quantity:
    """Parse text like ``"800 Trichodorus nematodes per litre of soil"``.

    ``registry`` only drives phrase lookup; the resulting :class:`Quantity` is
    checked against the active registry, so install a custom table with
    :func:`use_registry` before building quantities in its units.
    """
    if not raw or not raw.strip():
        raise UnparsableQuantity("empty quantity text")
    registry = registry or default_registry()
    m = _NUMBER.match(raw)
    if m is None:
        raise UnparsableQuantity(f"no leading number in {raw!r}")
    value = _to_decimal(m.group(1))
    rest = raw[m.end():].strip()
    if not rest:
        raise UnknownUnit(f"no unit after number in {raw!r}")
    unit = registry.unit_from_phrase(rest)
    return Quantity(value, unit)


def _as_token(unit_or_raw: str, registry: UnitRegistry) -> str:
    text = unit_or_raw.strip()
    if registry.is_token(text):
        return text
    if _NUMBER.match(text):
        return parse_quantity(text, registry).unit
    return registry.unit_from_phrase(text)


def normalize_units(
    a: str, b: str, registry: UnitRegistry | None = None
) -> tuple[str, str]:
    """Return the canonical pair of comparable tokens for ``a`` and ``b``.

    Each argument may be a registry token, a unit phrase, or a full quantity
    text. A wildcard denominator ("per relevant soil volume") takes on the
    counterpart's denominator when the count kinds agree.
    """
    registry = registry or default_registry()
    try:
        ua, ub = _as_token(a, registry), _as_token(b, registry)
    except UnknownUnit as exc:
        raise UnitMismatch(a, b, str(exc)) from exc
    if ua == ub:
        return ua, ub
    kind_a, den_a = registry.split(ua)
    kind_b, den_b = registry.split(ub)
    if kind_a != kind_b:
        raise UnitMismatch(ua, ub, "count kinds differ")
    if den_a in registry.wildcards and den_b in registry.wildcards.get(den_a, ()):
        return ub, ub
    if den_b in registry.wildcards and den_a in registry.wildcards.get(den_b, ()):
        return ua, ua
    raise UnitMismatch(ua, ub, "denominators differ")
