"""Seeded generator for labelled scenarios and a matching threshold corpus.

Labels come from the strict-exceeds rule applied to the generated thresholds,
so a correct pipeline can reach 100% when every threshold is retrievable.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from decimal import Decimal

from .domain import PestScenario
from .errors import SpecInvalid
from .evaluation import Dataset
from .knowledge import Corpus, KnowledgeDoc
from .units import parse_quantity


@dataclass(frozen=True)
class PestProfile:
    pest: str
    crops: tuple[str, ...]
    count: str  # phrase, e.g. "aphids"
    per: str  # denominator phrase, e.g. "tiller"
    thresholds: tuple[int, ...]  # plausible published values
    stages: tuple[str, ...] = ("Seedling", "Vegetative", "Flowering")


# A pool of arable and horticultural pests found in the UK. The numbers are
# placeholders in the right order of magnitude, not agronomic guidance.
PEST_POOL: tuple[PestProfile, ...] = (
    PestProfile("Grain Aphid", ("Winter Wheat", "Spring Barley"), "aphids", "tiller", (5, 10)),
    PestProfile("Rose-Grain Aphid", ("Winter Wheat",), "aphids", "tiller", (5, 10)),
    PestProfile("Bird Cherry-Oat Aphid", ("Winter Oats", "Winter Barley"), "aphids", "tiller", (3, 5)),
    PestProfile("Peach-Potato Aphid", ("Oilseed Rape", "Potatoes"), "aphids", "plant", (3, 5, 10)),
    PestProfile("Cabbage Aphid", ("Brussels Sprouts", "Cabbage"), "aphids", "plant", (2, 5)),
    PestProfile("Black Bean Aphid", ("Field Beans",), "aphids", "plant", (5, 10)),
    PestProfile("Pea Aphid", ("Combining Peas", "Vining Peas"), "aphids", "plant", (15, 20)),
    PestProfile("Lettuce Root Aphid", ("Lettuce",), "aphids", "plant", (2, 4)),
    PestProfile("Cabbage Stem Flea Beetle", ("Oilseed Rape",), "larvae", "plant", (2, 5)),
    PestProfile("Pollen Beetle", ("Oilseed Rape",), "beetles", "plant", (3, 7, 15)),
    PestProfile("Cereal Leaf Beetle", ("Spring Oats", "Spring Barley"), "larvae", "plant", (1, 2)),
    PestProfile("Pea and Bean Weevil", ("Field Beans", "Combining Peas"), "beetles", "plant", (2, 5)),
    PestProfile("Seed Weevil", ("Oilseed Rape",), "beetles", "plant", (1, 2)),
    PestProfile("Rape Winter Stem Weevil", ("Oilseed Rape",), "larvae", "plant", (1, 2)),
    PestProfile("Flax Flea Beetle", ("Linseed",), "beetles", "square metre", (10, 20)),
    PestProfile("Orange Wheat Blossom Midge", ("Winter Wheat",), "midges", "ear", (1, 3)),
    PestProfile("Yellow Wheat Blossom Midge", ("Winter Wheat",), "midges", "ear", (1, 2)),
    PestProfile("Brassica Pod Midge", ("Oilseed Rape",), "midges", "plant", (2, 4)),
    PestProfile("Pea Midge", ("Vining Peas",), "midges", "trap", (20, 50)),
    PestProfile("Wheat Bulb Fly", ("Winter Wheat",), "eggs", "square metre", (100, 250)),
    PestProfile("Frit Fly", ("Maize", "Spring Oats"), "larvae", "square metre", (50, 100)),
    PestProfile("Gout Fly", ("Winter Barley", "Winter Wheat"), "eggs", "plant", (1, 2)),
    PestProfile("Cabbage Root Fly", ("Swedes", "Cauliflower"), "eggs", "plant", (10, 20)),
    PestProfile("Carrot Fly", ("Carrots", "Parsnips"), "flies", "trap", (1, 5)),
    PestProfile("Bean Seed Fly", ("Onions",), "flies", "trap", (10, 25)),
    PestProfile("Pea Moth", ("Combining Peas",), "moths", "trap", (10, 30)),
    PestProfile("Diamondback Moth", ("Cabbage", "Brussels Sprouts"), "larvae", "plant", (1, 2)),
    PestProfile("Silver Y Moth", ("Potatoes", "Sugar Beet"), "larvae", "plant", (1, 3)),
    PestProfile("Leek Moth", ("Leeks",), "larvae", "plant", (1, 2)),
    PestProfile("Cutworms", ("Potatoes", "Carrots"), "larvae", "metre of row", (1, 2)),
    PestProfile("Leatherjackets", ("Spring Barley", "Winter Wheat"), "leatherjackets", "square metre", (50, 100)),
    PestProfile("Wireworms", ("Potatoes",), "larvae", "square metre", (30, 60)),
    PestProfile("Field Slugs", ("Winter Wheat", "Oilseed Rape"), "slugs", "trap", (1, 4)),
    PestProfile("Potato Cyst Nematode", ("Potatoes",), "eggs", "gram of soil", (10, 20)),
    PestProfile("Stem Nematode", ("Onions", "Field Beans"), "nematodes", "litre of soil", (10, 30)),
    PestProfile("Needle Nematode", ("Sugar Beet",), "nematodes", "litre of soil", (50, 100)),
    PestProfile("Cereal Cyst Nematode", ("Winter Oats", "Spring Barley"), "eggs and larvae", "gram of soil", (5, 10)),
    PestProfile("Two-Spotted Spider Mite", ("Strawberries", "Raspberries"), "mites", "leaf", (5, 10)),
    PestProfile("Western Flower Thrips", ("Strawberries",), "thrips", "plant", (2, 5)),
    PestProfile("Onion Thrips", ("Leeks", "Onions"), "thrips", "leaf", (5, 10)),
    PestProfile("Raspberry Beetle", ("Raspberries",), "beetles", "trap", (5, 10)),
    PestProfile("Apple Sawfly", ("Apples",), "larvae", "plant", (1, 2)),
    PestProfile("Codling Moth", ("Apples", "Pears"), "moths", "trap", (5, 10)),
    PestProfile("Pear Sucker", ("Pears",), "insects", "leaf", (1, 3)),
    PestProfile("Bean Beetle", ("Field Beans",), "beetles", "plant", (1, 2)),
)

# Severity multipliers against the threshold: below, at, near and above it.
_FACTORS = (
    Decimal("0.2"), Decimal("0.5"), Decimal("0.8"), Decimal(1), Decimal("1.5"), Decimal(2), Decimal(3),
)
_LOCATIONS = (
    "Norfolk", "Lincolnshire", "Suffolk", "Cambridgeshire", "Yorkshire", "Kent",
    "Herefordshire", "Shropshire", "Aberdeenshire", "Fife", "Devon", "Hampshire",
)
_WEATHER = ("Sunny", "Overcast", "Light rain", "Partly cloudy", "Showers", "Dry and warm")
_MONTHS = ("March", "April", "May", "June", "July", "August", "September", "October")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 68
    pests: int = 39
    pool: tuple[PestProfile, ...] = PEST_POOL

    def __post_init__(self) -> None:
        if self.n < 1:
            raise SpecInvalid("n must be at least 1")
        if self.pests < 1:
            raise SpecInvalid("pests must be at least 1")
        if self.pests > self.n:
            raise SpecInvalid(f"cannot cover {self.pests} pests with {self.n} scenarios")
        names = [p.pest for p in self.pool]
        if len(set(names)) != len(names):
            raise SpecInvalid("pest pool has duplicate names")
        if self.pests > len(self.pool):
            raise SpecInvalid(f"pool has {len(self.pool)} pests, {self.pests} requested")
        for p in self.pool:
            if not p.crops or not p.thresholds or any(t <= 0 for t in p.thresholds):
                raise SpecInvalid(f"pool entry {p.pest!r} needs crops and positive thresholds")


@dataclass(frozen=True)
class SyntheticBundle:
    dataset: Dataset
    corpus: Corpus


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def _threshold_doc(profile: PestProfile, crop: str, value: int) -> KnowledgeDoc:
    phrase = f"{value} {profile.count} per {profile.per}"
    body = (
        f"{profile.pest} in {crop}. Monitor the crop regularly and record counts of {profile.count} "
        f"per {profile.per}. Action threshold: treatment of {profile.pest.lower()} in {crop.lower()} "
        f"is justified only when numbers exceed {phrase}. Below this level rely on natural enemies "
        f"and cultural control."
    )
    doc_id = f"ahdb-syn-{_slug(profile.pest)}-{_slug(crop)}"
    return KnowledgeDoc.from_json(
        {
            "doc_id": doc_id,
            "publisher": "AHDB",
            "title": f"{profile.pest} in {crop}: thresholds and control",
            "url": f"corpus://ahdb/synthetic/{_slug(profile.pest)}/{_slug(crop)}",
            "body": body,
            "thresholds": [
                {
                    "pest": profile.pest,
                    "crop": crop,
                    "value": str(value),
                    "unit": parse_quantity(phrase).unit,
                    "raw_text": phrase,
                }
            ],
        }
    )


def generate_synthetic(spec: SyntheticSpec | None = None, seed: int = 0) -> SyntheticBundle:
    """Deterministic dataset plus the corpus its labels were computed against."""
    spec = spec or SyntheticSpec()
    rng = random.Random(f"synthetic:{seed}")
    profiles = rng.sample(list(spec.pool), spec.pests)
    # Every chosen pest appears at least once; the rest are drawn with replacement.
    picks = profiles + [rng.choice(profiles) for _ in range(spec.n - spec.pests)]
    rng.shuffle(picks)

    thresholds: dict[tuple[str, str], int] = {}
    docs: dict[tuple[str, str], KnowledgeDoc] = {}
    scenarios = []
    for i, profile in enumerate(picks, start=1):
        crop = rng.choice(profile.crops)
        key = (profile.pest, crop)
        if key not in thresholds:
            thresholds[key] = rng.choice(profile.thresholds)
            docs[key] = _threshold_doc(profile, crop, thresholds[key])
        value = (Decimal(thresholds[key]) * rng.choice(_FACTORS)).quantize(Decimal(1))
        severity = f"{value} {profile.count} per {profile.per}"
        scenario = PestScenario(
            pest=profile.pest,
            severity_text=severity,
            crop_name=crop,
            crop_growth_stage=rng.choice(profile.stages),
            temperature=Decimal(rng.randint(4, 24)),
            weather=rng.choice(_WEATHER),
            humidity=Decimal(rng.randint(45, 95)),
            precipitation=Decimal(rng.randint(0, 40)),
            time=rng.choice(_MONTHS),
            location=rng.choice(_LOCATIONS),
            ground_truth_pmd=value > thresholds[key],
            scenario_id=f"syn-{seed}-{i:03d}",
        )
        scenarios.append(scenario)
    dataset = Dataset(tuple(scenarios), name=f"synthetic-{spec.n}-seed{seed}", source="synthetic")
    return SyntheticBundle(dataset, Corpus(tuple(docs.values())))


def generate_synthetic_dataset(spec: SyntheticSpec | None = None, seed: int = 0) -> Dataset:
    return generate_synthetic(spec, seed).dataset


def generate_synthetic_corpus(spec: SyntheticSpec | None = None, seed: int = 0) -> Corpus:
    return generate_synthetic(spec, seed).corpus


def removable_flip_candidates(dataset: Dataset) -> list[str]:
    """Scenarios whose threshold can be withdrawn without touching any other row,
    and where the Editor's unaided estimate already matches the label.

    Flipping such a scenario and removing its threshold leaves the Validator
    nothing to check against, so the flip survives to the final decision.
    """
    from .llm.scripted import intrinsic_estimate

    pairs: dict[tuple[str, str], int] = {}
    for s in dataset.scenarios:
        key = (s.pest.lower(), s.crop_name.lower())
        pairs[key] = pairs.get(key, 0) + 1
    return sorted(
        s.scenario_id or ""
        for s in dataset.scenarios
        if pairs[(s.pest.lower(), s.crop_name.lower())] == 1 and intrinsic_estimate(s) == s.ground_truth_pmd
    )


@dataclass(frozen=True)
class FaultPlan:
    """Scenario ids to flip, and the subset whose thresholds get removed."""

    flips: tuple[str, ...]
    withdrawn: tuple[str, ...]

    def withdrawn_pairs(self, dataset: Dataset) -> list[tuple[str, str]]:
        chosen = set(self.withdrawn)
        return [(s.pest, s.crop_name) for s in dataset.scenarios if s.scenario_id in chosen]


def plan_faults(dataset: Dataset, flips: int, withdrawn: int = 0, seed: int = 0) -> FaultPlan:
    if not 0 <= withdrawn <= flips <= len(dataset):
        raise SpecInvalid("need 0 <= withdrawn <= flips <= dataset size")
    rng = random.Random(f"faults:{seed}")
    candidates = removable_flip_candidates(dataset)
    if withdrawn > len(candidates):
        raise SpecInvalid(f"only {len(candidates)} scenarios can have their threshold withdrawn")
    gone = sorted(rng.sample(candidates, withdrawn))
    rest = sorted(s.scenario_id or "" for s in dataset.scenarios if s.scenario_id not in set(gone))
    return FaultPlan(tuple(sorted(gone + rng.sample(rest, flips - withdrawn))), tuple(gone))
