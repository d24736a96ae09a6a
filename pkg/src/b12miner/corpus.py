"""Recipe corpus, term lexicons, nutrient table and reference tables.

Everything loads from CSV/JSONL files; the package ships defaults under
``b12miner/data``.  Loaded objects are immutable and safe to share.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

# Canonical food order. Every 12-vector in the package (counts, nutrient
# contents, model coefficients) is aligned to this tuple.
FOOD_ITEMS = (
    "shellfish", "mackerel", "trout", "salmon", "tuna", "pork",
    "beef", "turkey", "chicken", "egg", "milk", "tomatoes",
)
FOOD_INDEX = {f: i for i, f in enumerate(FOOD_ITEMS)}
N_FOODS = len(FOOD_ITEMS)

FOOD_GROUPS = ("beef", "pork", "poultry", "fish and seafood", "eggs", "milk")

TARGET_CATEGORIES = frozenset({
    "antidepressants", "neuropathic drugs", "other pharmaceuticals",
    "pain descriptions", "acid disorders", "otc antacids",
    "psychotherapy", "medical cannabis",
})
CONTROL_CATEGORY = "control"


def default_data_path(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(resources.files("b12miner").joinpath("data", name))


def _open_maybe_default(path, default_name: str):
    p = Path(path) if path else default_data_path(default_name)
    if not p.exists():
        raise ConfigError(f"data file not found: {p}")
    return p


# ---------------------------------------------------------------------------
# tokenisation shared with the classifier
# ---------------------------------------------------------------------------

def tokenize(text: str) -> list[str]:
    """Lowercase, ASCII-fold, split on non-alphanumerics; "b-12"/"b 12" -> b12."""
    import re
    import unicodedata

    folded = unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode()
    folded = folded.lower()
    folded = re.sub(r"\bb[\s\-]*12\b", "b12", folded)
    return re.findall(r"[a-z0-9]+", folded)


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecipeDoc:
    title: str                    # normalized (token-joined) title
    tokens: tuple[str, ...]
    foods: frozenset[str]         # subset of FOOD_ITEMS, non-empty


@dataclass
class RecipeCorpus:
    recipes: list[RecipeDoc]
    token_index: dict[str, set[int]] = field(default_factory=dict)
    title_map: dict[str, int] = field(default_factory=dict)
    skipped_untracked: int = 0
    skipped_empty_title: int = 0

    def __len__(self) -> int:
        return len(self.recipes)


class SynonymTable:
    """Maps free-text ingredient strings onto tracked foods."""

    def __init__(self, rows: list[tuple[str, str]]):
        self.single: dict[str, str] = {}
        self.multi: dict[tuple[str, ...], str] = {}
        for syn, food in rows:
            if food not in FOOD_INDEX:
                raise ConfigError(f"synonym table names unknown food '{food}'")
            toks = tuple(tokenize(syn))
            if len(toks) == 1:
                self.single[toks[0]] = food
            elif toks:
                self.multi[toks] = food

    def foods_in(self, ingredient: str) -> set[str]:
        toks = tokenize(ingredient)
        found = {self.single[t] for t in toks if t in self.single}
        for seq, food in self.multi.items():
            k = len(seq)
            if any(tuple(toks[i:i + k]) == seq for i in range(len(toks) - k + 1)):
                found.add(food)
        return found


def load_synonyms(path=None) -> SynonymTable:
    p = _open_maybe_default(path, "ingredient_synonyms.csv")
    rows = []
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            rows.append((row["synonym"], row["food"]))
    return SynonymTable(rows)


def load_recipe_corpus(path=None, synonyms: SynonymTable | None = None) -> RecipeCorpus:
    """Load JSONL recipes, map ingredients to tracked foods, index titles.

    Recipes with no tracked food are excluded; recipes with an empty title are
    skipped and counted.
    """
    p = _open_maybe_default(path, "recipes.jsonl")
    if synonyms is None:
        synonyms = load_synonyms()
    recipes: list[RecipeDoc] = []
    skipped_untracked = 0
    skipped_empty = 0
    seen_titles: set[str] = set()
    with p.open() as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                title = str(obj["title"])
                ingredients = list(obj["ingredients"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{p}:{lineno}: bad recipe record: {exc}") from exc
            tokens = tuple(tokenize(title))
            if not tokens:
                skipped_empty += 1
                continue
            foods: set[str] = set()
            for ing in ingredients:
                foods |= synonyms.foods_in(str(ing))
            if not foods:
                skipped_untracked += 1
                continue
            title = " ".join(tokens)
            if title in seen_titles:   # keep first; duplicates would break tie-breaking
                continue
            seen_titles.add(title)
            recipes.append(RecipeDoc(title, tokens, frozenset(foods)))

    corpus = RecipeCorpus(recipes, skipped_untracked=skipped_untracked,
                          skipped_empty_title=skipped_empty)
    for i, r in enumerate(corpus.recipes):
        corpus.title_map.setdefault(r.title, i)
        for t in set(r.tokens):
            corpus.token_index.setdefault(t, set()).add(i)
    return corpus


# ---------------------------------------------------------------------------
# nutrient table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NutrientTable:
    """B12 content in mcg per 100 g, aligned to FOOD_ITEMS."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_FOODS,):
            raise ConfigError(f"nutrient table needs {N_FOODS} foods, got shape {v.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigError("nutrient contents must be finite and non-negative")
        if v[FOOD_INDEX["tomatoes"]] != 0.0:
            raise ConfigError("tomatoes content is fixed at 0")
        object.__setattr__(self, "values", v)

    def content(self, food: str) -> float:
        return float(self.values[FOOD_INDEX[food]])

    def scaled(self, serving_grams: float) -> "NutrientTable":
        if serving_grams <= 0:
            raise ConfigError("serving_grams must be positive")
        return NutrientTable(self.values * (serving_grams / 100.0))


def load_nutrient_table(path=None) -> NutrientTable:
    p = _open_maybe_default(path, "nutrients.csv")
    seen: dict[str, float] = {}
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            food = row["food"].strip().lower()
            if food not in FOOD_INDEX:
                raise ConfigError(f"nutrient table names unknown food '{food}'")
            if food in seen:
                raise ConfigError(f"nutrient table repeats food '{food}'")
            seen[food] = float(row["mcg_per_100g"])
    missing = set(FOOD_ITEMS) - set(seen) - {"tomatoes"}
    if missing:
        raise ConfigError(f"nutrient table missing foods: {sorted(missing)}")
    values = np.array([seen.get(f, 0.0) for f in FOOD_ITEMS])
    return NutrientTable(values)


# ---------------------------------------------------------------------------
# term lexicons
# ---------------------------------------------------------------------------

@dataclass
class TermLexicon:
    kind: str                           # "target" | "control"
    entries: dict[str, str]             # term -> category
    term_tokens: dict[str, tuple[str, ...]] = field(default_factory=dict)
    first_token_index: dict[str, list[str]] = field(default_factory=dict)
    duplicate_rows: int = 0

    def __post_init__(self):
        for term in self.entries:
            toks = tuple(tokenize(term))
            self.term_tokens[term] = toks
            if toks:
                self.first_token_index.setdefault(toks[0], []).append(term)

    def __len__(self) -> int:
        return len(self.entries)


def load_term_lexicon(path, kind: str) -> TermLexicon:
    if kind not in ("target", "control"):
        raise ConfigError(f"unknown lexicon kind '{kind}'")
    default = "target_terms.csv" if kind == "target" else "control_terms.csv"
    p = _open_maybe_default(path, default)
    allowed = TARGET_CATEGORIES if kind == "target" else {CONTROL_CATEGORY}
    entries: dict[str, str] = {}
    duplicates = 0
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            term = row["term"].strip().lower()
            category = row["category"].strip().lower()
            if not term:
                continue
            if category not in allowed:
                raise ConfigError(f"{p}: unknown category '{category}' for term '{term}'")
            if term in entries:
                duplicates += 1
                continue
            entries[term] = category
    return TermLexicon(kind, entries, duplicate_rows=duplicates)


# ---------------------------------------------------------------------------
# reference tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpenditureTable:
    # dollars[region][group]
    dollars: dict[str, dict[str, float]]

    def fraction_matrix(self, regions) -> np.ndarray:
        """Within-region expenditure fractions, rows ordered like `regions`."""
        out = np.zeros((len(regions), len(FOOD_GROUPS)))
        for i, r in enumerate(regions):
            row = np.array([self.dollars[r][g] for g in FOOD_GROUPS])
            out[i] = row / row.sum()
        return out


@dataclass(frozen=True)
class CostTable:
    dollars: dict[str, float]           # group -> price per unit


@dataclass(frozen=True)
class ConsumptionTable:
    quantity: dict[str, float]          # group -> per-capita quantity


@dataclass(frozen=True)
class IndicationsTable:
    counts: dict[str, tuple[int, int]]  # term -> (n_indications, n_pain)


def load_food_groups(path=None) -> dict[str, str]:
    """FoodItem -> FoodGroup; foods without a group (tomatoes) are absent."""
    p = _open_maybe_default(path, "food_groups.csv")
    mapping: dict[str, str] = {}
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            food = row["food"].strip().lower()
            group = row["group"].strip().lower()
            if food not in FOOD_INDEX:
                raise ConfigError(f"food-group map names unknown food '{food}'")
            if group not in FOOD_GROUPS:
                raise ConfigError(f"food-group map names unknown group '{group}'")
            mapping[food] = group
    return mapping


REGIONS = ("Northeast", "Midwest", "South", "West")


def load_expenditure(path=None) -> ExpenditureTable:
    p = _open_maybe_default(path, "expenditure.csv")
    dollars: dict[str, dict[str, float]] = {}
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            region = row["region"].strip()
            group = row["group"].strip().lower()
            if region not in REGIONS:
                raise ConfigError(f"expenditure table names unknown region '{region}'")
            if group not in FOOD_GROUPS:
                raise ConfigError(f"expenditure table names unknown group '{group}'")
            v = float(row["dollars"])
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"expenditure cell ({region}, {group}) not finite/non-negative")
            dollars.setdefault(region, {})[group] = v
    for region in REGIONS:
        for group in FOOD_GROUPS:
            if group not in dollars.get(region, {}):
                raise ConfigError(f"expenditure table missing cell ({region}, {group})")
    return ExpenditureTable(dollars)


def _load_group_value_csv(path, default_name, column) -> dict[str, float]:
    p = _open_maybe_default(path, default_name)
    out: dict[str, float] = {}
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            group = row["group"].strip().lower()
            if group not in FOOD_GROUPS:
                raise ConfigError(f"{p}: unknown group '{group}'")
            v = float(row[column])
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{p}: bad value for group '{group}'")
            out[group] = v
    missing = set(FOOD_GROUPS) - set(out)
    if missing:
        raise ConfigError(f"{p}: missing groups {sorted(missing)}")
    return out


def load_costs(path=None) -> CostTable:
    return CostTable(_load_group_value_csv(path, "costs.csv", "dollars_per_pound"))


def load_consumption(path=None) -> ConsumptionTable:
    return ConsumptionTable(_load_group_value_csv(path, "consumption.csv", "per_capita_pounds"))


def load_indications(path=None) -> IndicationsTable:
    p = _open_maybe_default(path, "indications.csv")
    counts: dict[str, tuple[int, int]] = {}
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            term = row["term"].strip().lower()
            n_ind = int(row["n_indications"])
            n_pain = int(row["n_pain_indications"])
            if n_ind < 0 or n_pain < 0:
                raise ConfigError(f"indications for '{term}' must be non-negative")
            if n_pain > n_ind:
                raise ConfigError(f"'{term}': pain indications exceed total indications")
            counts[term] = (n_ind, n_pain)
    return IndicationsTable(counts)


@dataclass
class ReferenceTables:
    expenditure: ExpenditureTable
    costs: CostTable
    consumption: ConsumptionTable
    indications: IndicationsTable
    food_groups: dict[str, str]


def load_reference_tables(expenditure=None, costs=None, consumption=None,
                          indications=None, food_groups=None) -> ReferenceTables:
    return ReferenceTables(
        expenditure=load_expenditure(expenditure),
        costs=load_costs(costs),
        consumption=load_consumption(consumption),
        indications=load_indications(indications),
        food_groups=load_food_groups(food_groups),
    )
