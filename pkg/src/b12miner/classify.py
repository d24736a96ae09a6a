"""Query classification: recipe matching, term matching, B12 flags.

The proprietary recipe classifier from the original study is replaced by a
documented token-containment matcher plus a labelled-fixture precision
harness, so the replacement stays measurable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import RecipeCorpus, RecipeDoc, TermLexicon, tokenize
from .errors import StatError
from .ingest import QueryRecord

DEFAULT_THETA = 0.8
DEFAULT_CUES = ("recipe", "recipes", "how to make", "cook")
B12_DEFICIENCY_CUES = frozenset({"deficiency", "deficient", "low"})
B12_SUPPLEMENT_CUES = frozenset({"supplement", "supplements", "injection",
                                 "injections", "pills"})


def normalize_query(text: str) -> list[str]:
    """Lowercased, ASCII-folded, punctuation-stripped tokens; b-12 -> b12."""
    return tokenize(text)


@dataclass(frozen=True)
class MatcherConfig:
    theta: float = DEFAULT_THETA
    cues: tuple[str, ...] = DEFAULT_CUES

    def cue_token_sets(self):
        single = set()
        multi = []
        for cue in self.cues:
            toks = tuple(tokenize(cue))
            if len(toks) == 1:
                single.add(toks[0])
            elif toks:
                multi.append(toks)
        return single, multi


@dataclass(frozen=True)
class QueryClass:
    is_recipe: bool = False
    recipe_title: str | None = None
    recipe_foods: tuple[str, ...] = ()
    match_score: float = 0.0
    matched_terms: frozenset[str] = frozenset()
    is_b12: bool = False
    is_b12_deficiency: bool = False
    is_b12_supplement: bool = False


def _find_multiword(tokens: list[str], seq: tuple[str, ...]) -> int:
    k = len(seq)
    for i in range(len(tokens) - k + 1):
        if tuple(tokens[i:i + k]) == seq:
            return i
    return -1


def _strip_cues(tokens: list[str], config: MatcherConfig) -> tuple[bool, list[str]]:
    """Return (cue present, tokens with cue occurrences removed)."""
    single, multi = config.cue_token_sets()
    present = False
    toks = list(tokens)
    for seq in multi:
        while True:
            i = _find_multiword(toks, seq)
            if i < 0:
                break
            present = True
            del toks[i:i + len(seq)]
    kept = []
    for t in toks:
        if t in single:
            present = True
        else:
            kept.append(t)
    return present, kept


def match_recipe(tokens: list[str], corpus: RecipeCorpus,
                 config: MatcherConfig = MatcherConfig()) -> tuple[RecipeDoc, float] | None:
    """Resolve a tokenised query to the best-scoring corpus recipe, if any.

    A query is eligible when it carries a recipe-intent cue or exactly equals
    a recipe title.  The score of a candidate is the fraction of its title
    tokens covered by the query's non-cue tokens; candidates below theta are
    rejected.  Ties break by shorter title, then lexicographic title.
    """
    cue_present, content = _strip_cues(tokens, config)
    exact = corpus.title_map.get(" ".join(tokens))
    if not cue_present and exact is None:
        return None
    query_set = set(content) if content else set(tokens)

    candidate_ids: set[int] = set()
    for t in query_set:
        candidate_ids |= corpus.token_index.get(t, set())
    if exact is not None:
        candidate_ids.add(exact)

    best: tuple[float, int, str, RecipeDoc] | None = None
    for i in candidate_ids:
        recipe = corpus.recipes[i]
        title_set = set(recipe.tokens)
        score = len(query_set & title_set) / len(title_set)
        if score < config.theta:
            continue
        key = (-score, len(recipe.title), recipe.title)
        if best is None or key < (-best[0], best[1], best[2]):
            best = (score, len(recipe.title), recipe.title, recipe)
    if best is None:
        return None
    return best[3], best[0]


def match_terms(tokens: list[str], lexicon: TermLexicon) -> set[str]:
    """Terms whose token sequence appears contiguously in the query."""
    found: set[str] = set()
    for t in set(tokens):
        for term in lexicon.first_token_index.get(t, ()):
            seq = lexicon.term_tokens[term]
            if len(seq) == 1 or _find_multiword(tokens, seq) >= 0:
                found.add(term)
    return found


def classify_query(record: QueryRecord, corpus: RecipeCorpus,
                   lexicons: list[TermLexicon],
                   config: MatcherConfig = MatcherConfig()) -> QueryClass:
    """Pure function of (record.text, loaded data)."""
    tokens = normalize_query(record.text)
    match = match_recipe(tokens, corpus, config)
    terms: set[str] = set()
    for lexicon in lexicons:
        terms |= match_terms(tokens, lexicon)
    token_set = set(tokens)
    is_b12 = "b12" in token_set
    return QueryClass(
        is_recipe=match is not None,
        recipe_title=match[0].title if match else None,
        recipe_foods=tuple(sorted(match[0].foods)) if match else (),
        match_score=match[1] if match else 0.0,
        matched_terms=frozenset(terms),
        is_b12=is_b12,
        is_b12_deficiency=is_b12 and bool(token_set & B12_DEFICIENCY_CUES),
        is_b12_supplement=is_b12 and bool(token_set & B12_SUPPLEMENT_CUES),
    )


def classified_to_json(record: QueryRecord, qc: QueryClass) -> str:
    obj = {
        "user": record.user_id,
        "query": record.text,
        "zip": record.zip_code or "",
        "ts": record.timestamp,
        "class": {
            "is_recipe": qc.is_recipe,
            "recipe": qc.recipe_title,
            "foods": list(qc.recipe_foods),
            "score": qc.match_score,
            "terms": sorted(qc.matched_terms),
            "is_b12": qc.is_b12,
            "is_b12_deficiency": qc.is_b12_deficiency,
            "is_b12_supplement": qc.is_b12_supplement,
        },
    }
    return json.dumps(obj, ensure_ascii=False)


# ---------------------------------------------------------------------------
# precision harness
# ---------------------------------------------------------------------------

@dataclass
class PrecisionReport:
    precision: float
    recall: float
    n_labeled: int
    n_emitted: int
    n_correct: int
    n_gold_positive: int
    mistakes: list = field(default_factory=list)


def evaluate_matcher_precision(labeled_path, corpus: RecipeCorpus,
                               config: MatcherConfig = MatcherConfig()) -> PrecisionReport:
    """Precision/recall of the matcher on a (query, gold title) CSV.

    Gold title empty means the query should not match any recipe.  Precision
    is correct matches over emitted matches; an empty file or a matcher that
    emits nothing is an error.
    """
    p = Path(labeled_path)
    rows: list[tuple[str, str]] = []
    with p.open(newline="") as f:
        for row in csv.DictReader(f):
            rows.append((row["query"], row.get("title", "").strip().lower()))
    if not rows:
        raise StatError(f"no labelled rows in {p}")

    n_emitted = n_correct = n_gold = 0
    mistakes = []
    for query, gold in rows:
        gold_tokens = " ".join(tokenize(gold)) if gold else ""
        if gold_tokens:
            n_gold += 1
        match = match_recipe(normalize_query(query), corpus, config)
        if match is None:
            continue
        n_emitted += 1
        if gold_tokens and match[0].title == gold_tokens:
            n_correct += 1
        else:
            mistakes.append((query, gold_tokens, match[0].title))
    if n_emitted == 0:
        raise StatError("matcher emitted no matches on the labelled fixture")
    recall = n_correct / n_gold if n_gold else 0.0
    return PrecisionReport(
        precision=n_correct / n_emitted,
        recall=recall,
        n_labeled=len(rows),
        n_emitted=n_emitted,
        n_correct=n_correct,
        n_gold_positive=n_gold,
        mistakes=mistakes,
    )
