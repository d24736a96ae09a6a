"""Classifier tests: normalisation, recipe matching, term matching, flags."""

import numpy as np
import pytest

from b12miner.classify import (
    MatcherConfig,
    classify_query,
    evaluate_matcher_precision,
    match_recipe,
    match_terms,
    normalize_query,
)
from b12miner.corpus import default_data_path, load_recipe_corpus, load_term_lexicon
from b12miner.errors import StatError
from b12miner.ingest import QueryRecord


@pytest.fixture(scope="module")
def corpus():
    return load_recipe_corpus()


@pytest.fixture(scope="module")
def lexicons():
    return [load_term_lexicon(None, "target"), load_term_lexicon(None, "control")]


def test_normalize_basic():
    assert normalize_query("Beef Stew Recipe!") == ["beef", "stew", "recipe"]
    assert normalize_query("") == []


def test_normalize_b12_folding():
    assert normalize_query("B-12 deficiency") == ["b12", "deficiency"]
    assert normalize_query("b 12 shots") == ["b12", "shots"]
    assert normalize_query("vitamin B12") == ["vitamin", "b12"]


def test_normalize_is_deterministic_and_ascii():
    assert normalize_query("Crème brûlée recipe") == ["creme", "brulee", "recipe"]


def test_match_recipe_cue_and_containment(corpus):
    m = match_recipe(["beef", "stew", "recipe"], corpus)
    assert m is not None and m[0].title == "beef stew"
    assert m[1] == 1.0


def test_match_recipe_exact_title_without_cue(corpus):
    m = match_recipe(normalize_query("beef stew"), corpus)
    assert m is not None and m[0].title == "beef stew"


def test_match_recipe_no_cue_no_title(corpus):
    assert match_recipe(["weather", "tomorrow"], corpus) is None


def test_match_recipe_below_threshold(corpus):
    # covers 2 of 3 title tokens = 0.67 < 0.8
    assert match_recipe(normalize_query("chicken pie recipe"), corpus) is None


def test_match_recipe_tie_breaks_to_shorter_title(corpus):
    m = match_recipe(normalize_query("irish beef stew recipe"), corpus)
    assert m is not None and m[0].title == "beef stew"


def test_match_recipe_theta_configurable(corpus):
    loose = MatcherConfig(theta=0.5)
    m = match_recipe(normalize_query("chicken pie recipe"), corpus, loose)
    assert m is not None and m[0].title == "chicken pot pie"


def test_match_recipe_monotone_under_corpus_growth(corpus, tmp_path):
    # adding recipes never un-matches a previously matched query
    import json

    src = default_data_path("recipes.jsonl").read_text().strip().split("\n")
    rng = np.random.default_rng(3)
    half_ix = sorted(rng.choice(len(src), size=len(src) // 2, replace=False))
    small_path = tmp_path / "small.jsonl"
    small_path.write_text("\n".join(src[i] for i in half_ix) + "\n")
    small = load_recipe_corpus(small_path)

    queries = [list(small.recipes[i].tokens) + ["recipe"]
               for i in range(0, len(small.recipes), 5)]
    for q in queries:
        matched_small = match_recipe(q, small) is not None
        matched_full = match_recipe(q, corpus) is not None
        if matched_small:
            assert matched_full


def test_match_terms_single_and_multiword(lexicons):
    targets = lexicons[0]
    assert match_terms(["gabapentin", "dosage"], targets) == {"gabapentin"}
    assert match_terms(["gaba"], targets) == set()
    assert match_terms(["chronic", "pain", "treatment"], targets) == {"chronic pain"}
    # tokens present but not contiguous
    assert match_terms(["pain", "in", "my", "back"], targets) == set()
    assert match_terms(["low", "back", "pain"], targets) == {"low back pain", "back pain"}


def test_classify_query_flags(corpus, lexicons):
    def classify(text):
        return classify_query(QueryRecord("u", text, None, 0), corpus, lexicons)

    qc = classify("b12 deficiency symptoms")
    assert qc.is_b12 and qc.is_b12_deficiency and not qc.is_b12_supplement

    qc = classify("grilled salmon recipe")
    assert qc.is_recipe and qc.recipe_title == "grilled salmon"
    assert qc.recipe_foods == ("salmon",)

    qc = classify("b12 injections near me")
    assert qc.is_b12 and qc.is_b12_supplement and not qc.is_b12_deficiency

    qc = classify("tramadol and gabapentin together")
    assert qc.matched_terms == {"tramadol", "gabapentin"}
    assert not qc.is_recipe and not qc.is_b12


def test_bare_food_query_matches_single_token_title(tmp_path, lexicons):
    # "salmon recipe" resolves when the corpus carries a recipe titled "salmon"
    p = tmp_path / "r.jsonl"
    p.write_text('{"title":"Salmon","ingredients":["salmon"]}\n')
    tiny = load_recipe_corpus(p)
    qc = classify_query(QueryRecord("u", "salmon recipe", None, 0), tiny, lexicons)
    assert qc.is_recipe and qc.recipe_title == "salmon"


def test_classification_is_pure(corpus, lexicons):
    rec = QueryRecord("u", "Grilled Salmon recipe", "10001", 5)
    a = classify_query(rec, corpus, lexicons)
    b = classify_query(rec, corpus, lexicons)
    assert a == b


def test_flag_implications_hold_on_fuzz(corpus, lexicons):
    rng = np.random.default_rng(0)
    vocab = ["b12", "deficiency", "supplements", "recipe", "beef", "stew",
             "low", "pills", "weather", "gabapentin", "salmon"]
    for _ in range(300):
        k = int(rng.integers(1, 6))
        text = " ".join(rng.choice(vocab, size=k))
        qc = classify_query(QueryRecord("u", text, None, 0), corpus, lexicons)
        if qc.recipe_title is not None:
            assert qc.is_recipe
        if qc.is_b12_deficiency or qc.is_b12_supplement:
            assert qc.is_b12


# ---------------------------------------------------------------------------
# precision harness
# ---------------------------------------------------------------------------

def test_precision_small_labelled_set(tmp_path, corpus):
    rows = ["query,title"]
    # 9 correct matches and 1 wrong-intent emit -> precision 0.9
    titles = ["beef stew", "grilled salmon", "clam chowder", "roast turkey",
              "deviled eggs", "tomato soup", "mac and cheese", "tuna melt",
              "crab cakes"]
    for t in titles:
        rows.append(f"{t} recipe,{t}")
    rows.append("tomato soup cake recipe,")    # emits tomato soup, gold none
    p = tmp_path / "lab.csv"
    p.write_text("\n".join(rows) + "\n")
    report = evaluate_matcher_precision(p, corpus)
    assert report.n_emitted == 10
    assert report.precision == pytest.approx(0.9)


def test_precision_empty_file_is_error(tmp_path, corpus):
    p = tmp_path / "lab.csv"
    p.write_text("query,title\n")
    with pytest.raises(StatError):
        evaluate_matcher_precision(p, corpus)


def test_precision_zero_emits_is_error(tmp_path, corpus):
    p = tmp_path / "lab.csv"
    p.write_text("query,title\nweather tomorrow,\n")
    with pytest.raises(StatError):
        evaluate_matcher_precision(p, corpus)


def test_shipped_fixture_has_400_rows(corpus):
    report = evaluate_matcher_precision(default_data_path("labeled_queries.csv"), corpus)
    assert report.n_labeled == 400
    assert 0.0 < report.recall <= 1.0
