from __future__ import annotations

import json
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pest_advisor.errors import UnitMismatch, UnknownUnit, UnparsableQuantity
from pest_advisor.units import Quantity, UnitRegistry, default_registry, normalize_units, parse_quantity, use_registry


@pytest.mark.parametrize(
    "raw, value, unit",
    [
        ("1 egg and larvae per gram of soil", "1", "eggs-and-larvae/gram-soil"),
        ("800 Trichodorus nematodes per litre of soil", "800", "nematodes/litre-soil"),
        ("0 nematodes per litre of soil", "0", "nematodes/litre-soil"),
        ("1,000 nematodes per litre of soil", "1000", "nematodes/litre-soil"),
        ("2.5 aphids per tiller", "2.5", "aphids/tiller"),
        ("12 pollen beetles per plant", "12", "beetles/plant"),
        ("3 aphids/tiller", "3", "aphids/tiller"),
    ],
)
def test_parse_quantity_examples(raw, value, unit):
    q = parse_quantity(raw)
    assert q == Quantity(Decimal(value), unit)


def test_parse_quantity_rejects_text_without_number():
    with pytest.raises(UnparsableQuantity):
        parse_quantity("heavy infestation")
    with pytest.raises(UnparsableQuantity):
        parse_quantity("   ")


def test_parse_quantity_rejects_unknown_denominator():
    with pytest.raises(UnknownUnit):
        parse_quantity("4 aphids per hectare of moonlight")
    with pytest.raises(UnknownUnit):
        parse_quantity("4")


def test_negative_values_never_parse():
    # The leading-number pattern has no sign, so "-3" is not a number here.
    with pytest.raises(UnparsableQuantity):
        parse_quantity("-3 aphids per tiller")
    with pytest.raises(ValueError):
        Quantity(Decimal(-1), "aphids/tiller")


def test_quantity_rejects_unregistered_unit():
    with pytest.raises(UnknownUnit):
        Quantity(Decimal(1), "aphids/galaxy")


def test_token_form_round_trip():
    q = Quantity(Decimal("12.50"), "nematodes/litre-soil")
    assert Quantity.parse_token_form(str(q)) == q


def test_wildcard_denominator_takes_counterpart():
    pair = normalize_units("eggs-and-larvae/gram-soil", "2 eggs and larvae per relevant soil volume")
    assert pair == ("eggs-and-larvae/gram-soil", "eggs-and-larvae/gram-soil")
    pair = normalize_units("eggs and larvae per relevant volume of soil", "eggs-and-larvae/litre-soil")
    assert pair == ("eggs-and-larvae/litre-soil", "eggs-and-larvae/litre-soil")


def test_identity_and_mismatch():
    assert normalize_units("nematodes/litre-soil", "nematodes/litre-soil") == (
        "nematodes/litre-soil",
        "nematodes/litre-soil",
    )
    with pytest.raises(UnitMismatch):
        normalize_units("nematodes/litre-soil", "eggs-and-larvae/gram-soil")
    with pytest.raises(UnitMismatch):
        normalize_units("aphids/tiller", "aphids/plant")
    # Wildcard only matches soil denominators.
    with pytest.raises(UnitMismatch):
        normalize_units("eggs-and-larvae/relevant-soil-volume", "eggs-and-larvae/plant")


units = st.sampled_from(sorted(default_registry().tokens()))


@given(units, units)
def test_normalization_is_idempotent(a, b):
    try:
        first = normalize_units(a, b)
    except UnitMismatch:
        return
    assert normalize_units(*first) == first


@given(st.decimals(min_value=0, max_value=10**6, places=3))
def test_parsed_values_are_never_negative(value):
    q = parse_quantity(f"{value} slugs per trap")
    assert q.value >= 0 and q.value == value


def test_registry_is_file_configurable(tmp_path):
    table = {
        "count_kinds": {"snails": ["snails", "snail"]},
        "denominators": {"pot": ["pot"]},
        "wildcard_denominators": {},
    }
    path = tmp_path / "units.json"
    path.write_text(json.dumps(table))
    reg = UnitRegistry.from_file(path)
    assert reg.is_token("snails/pot")
    assert reg.unit_from_phrase("snails per pot") == "snails/pot"
    try:
        use_registry(path)
        assert parse_quantity("3 snails per pot") == Quantity(Decimal(3), "snails/pot")
    finally:
        use_registry(None)
    assert not default_registry().is_token("snails/pot")
