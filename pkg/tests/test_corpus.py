"""Corpus, lexicon and reference-table loading tests."""

from pathlib import Path

import numpy as np
import pytest

from b12miner.corpus import (
    FOOD_GROUPS,
    FOOD_INDEX,
    FOOD_ITEMS,
    NutrientTable,
    load_consumption,
    load_costs,
    load_expenditure,
    load_food_groups,
    load_indications,
    load_nutrient_table,
    load_recipe_corpus,
    load_synonyms,
    load_term_lexicon,
)
from b12miner.errors import ConfigError

FIXTURES = Path(__file__).parent / "data"


def test_canonical_food_order_is_fixed():
    # every 12-vector in the package hangs off this exact ordering
    assert FOOD_ITEMS == (
        "shellfish", "mackerel", "trout", "salmon", "tuna", "pork",
        "beef", "turkey", "chicken", "egg", "milk", "tomatoes",
    )
    assert all(FOOD_INDEX[f] == i for i, f in enumerate(FOOD_ITEMS))


def test_nutrient_table_matches_published_contents():
    table = load_nutrient_table()
    assert table.content("shellfish") == 98.89
    assert table.content("mackerel") == 19.0
    assert table.content("beef") == 6.0
    assert table.content("trout") == 3.8
    assert table.content("salmon") == 2.4
    assert table.content("tuna") == 1.6
    assert table.content("milk") == 0.9
    assert table.content("turkey") == 0.8
    assert table.content("egg") == 0.6
    assert table.content("pork") == 0.4
    assert table.content("chicken") == 0.3
    assert table.content("tomatoes") == 0.0


def test_nutrient_table_enforces_completeness(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("food,mcg_per_100g\nbeef,6\n")
    with pytest.raises(ConfigError):
        load_nutrient_table(p)


def test_nutrient_table_rejects_unknown_food(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("food,mcg_per_100g\nvenison,3\n")
    with pytest.raises(ConfigError):
        load_nutrient_table(p)


def test_nutrient_scaling():
    table = load_nutrient_table()
    half = table.scaled(50.0)
    assert half.content("beef") == 3.0
    assert half.content("tomatoes") == 0.0


def test_recipe_corpus_synonym_mapping():
    corpus = load_recipe_corpus()
    stew = corpus.recipes[corpus.title_map["beef stew"]]
    assert stew.foods == frozenset({"beef", "tomatoes"})
    # "pig"/"bacon"/"ham" style aliases land on pork
    chowder = corpus.recipes[corpus.title_map["clam chowder"]]
    assert chowder.foods == frozenset({"shellfish", "milk", "pork"})


def test_recipe_corpus_invariants():
    corpus = load_recipe_corpus()
    assert len(corpus) > 0
    for r in corpus.recipes:
        assert r.foods
        assert r.foods <= set(FOOD_ITEMS)


def test_fixture_corpus_counts():
    # 50-recipe fixture, 41 with at least one tracked ingredient (hand count)
    corpus = load_recipe_corpus(FIXTURES / "recipes_fixture.jsonl")
    assert len(corpus) == 41
    assert corpus.skipped_untracked == 9


def test_untracked_recipe_excluded(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text('{"title":"Fruit Salad","ingredients":["apple","banana"]}\n'
                 '{"title":"Beef Stew","ingredients":["beef","tomatoes","water"]}\n')
    corpus = load_recipe_corpus(p)
    assert len(corpus) == 1
    assert corpus.skipped_untracked == 1
    assert corpus.recipes[0].title == "beef stew"


def test_synonyms_are_token_level():
    syn = load_synonyms()
    assert syn.foods_in("2 lbs ground beef") == {"beef"}
    assert syn.foods_in("eggplant") == set()      # no substring matches
    assert syn.foods_in("smoked salmon") == {"salmon"}


# ---------------------------------------------------------------------------
# lexicons
# ---------------------------------------------------------------------------

def test_target_lexicon_has_212_terms():
    lex = load_term_lexicon(None, "target")
    assert len(lex) == 212
    assert lex.entries["gabapentin"] == "neuropathic drugs"
    assert {c for c in lex.entries.values()} == {
        "antidepressants", "neuropathic drugs", "other pharmaceuticals",
        "pain descriptions", "acid disorders", "otc antacids",
        "psychotherapy", "medical cannabis",
    }


def test_control_lexicon_has_27_terms():
    lex = load_term_lexicon(None, "control")
    assert len(lex) == 27
    assert set(lex.entries.values()) == {"control"}


def test_lexicon_case_fold_dedup(tmp_path):
    p = tmp_path / "lex.csv"
    p.write_text("term,category\ngabapentin,neuropathic drugs\n"
                 "Gabapentin,neuropathic drugs\n")
    lex = load_term_lexicon(p, "target")
    assert len(lex) == 1
    assert lex.duplicate_rows == 1


def test_lexicon_empty_file(tmp_path):
    p = tmp_path / "lex.csv"
    p.write_text("term,category\n")
    lex = load_term_lexicon(p, "control")
    assert len(lex) == 0


def test_lexicon_unknown_category_fatal(tmp_path):
    p = tmp_path / "lex.csv"
    p.write_text("term,category\nfoo,made up category\n")
    with pytest.raises(ConfigError):
        load_term_lexicon(p, "target")


# ---------------------------------------------------------------------------
# reference tables
# ---------------------------------------------------------------------------

def test_expenditure_completeness():
    exp = load_expenditure()
    for region in ("Northeast", "Midwest", "South", "West"):
        for group in FOOD_GROUPS:
            assert exp.dollars[region][group] >= 0
    frac = exp.fraction_matrix(("Northeast", "South"))
    assert frac.shape == (2, 6)
    assert np.allclose(frac.sum(axis=1), 1.0)


def test_expenditure_missing_cell_fatal(tmp_path):
    p = tmp_path / "e.csv"
    lines = ["region,group,dollars"]
    exp = load_expenditure()
    for region in ("Northeast", "Midwest", "South", "West"):
        for group in FOOD_GROUPS:
            if (region, group) == ("West", "eggs"):
                continue
            lines.append(f"{region},{group},{exp.dollars[region][group]}")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ConfigError):
        load_expenditure(p)


def test_costs_and_consumption_cover_groups():
    assert set(load_costs().dollars) == set(FOOD_GROUPS)
    assert set(load_consumption().quantity) == set(FOOD_GROUPS)


def test_food_groups_mapping():
    groups = load_food_groups()
    assert groups["beef"] == "beef"
    assert groups["chicken"] == "poultry"
    assert groups["turkey"] == "poultry"
    assert groups["shellfish"] == "fish and seafood"
    assert "tomatoes" not in groups


def test_indications_table():
    ind = load_indications()
    assert ind.counts["tramadol"] == (14, 6)
    for term, (n, p) in ind.counts.items():
        assert 0 <= p <= n


def test_indications_rejects_pain_over_total(tmp_path):
    p = tmp_path / "i.csv"
    p.write_text("term,n_indications,n_pain_indications\nfoo,3,5\n")
    with pytest.raises(ConfigError):
        load_indications(p)
