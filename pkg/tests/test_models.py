"""Per-term model fitting, CoB12, rankings, comparisons, indications model."""

import numpy as np
import pytest

from b12miner.corpus import FOOD_ITEMS, IndicationsTable, load_nutrient_table, load_term_lexicon
from b12miner.errors import StatError
from b12miner.models import (
    TermModelResult,
    cob12,
    fit_selected_terms,
    fit_term_model,
    indications_model,
    rank_terms,
    select_modeled_terms,
    target_vs_control,
)
from b12miner.profiles import UserProfile
from b12miner.synth import make_indications_world


@pytest.fixture(scope="module")
def table():
    return load_nutrient_table()


def _make_profiles(rng, n, term_prob_fn=None, term="gabapentin", aware_rate=0.0):
    """Users with Poisson food counts; term flag drawn from term_prob_fn(m)."""
    profiles = {}
    values = load_nutrient_table().values
    for i in range(n):
        counts = rng.poisson(1.2, size=12).astype(np.int64)
        p = UserProfile(f"u{i:05d}", counts)
        total = counts.sum()
        if term_prob_fn is not None and total > 0:
            m = float(np.dot(values, counts)) / float(total)
            if rng.random() < term_prob_fn(m):
                p.terms.add(term)
        if aware_rate and rng.random() < aware_rate:
            p.asked_b12 = True
        profiles[p.user_id] = p
    return profiles


def test_select_modeled_terms_boundary():
    lex = load_term_lexicon(None, "target")
    profiles = {}
    for i in range(10):
        p = UserProfile(f"u{i}", np.zeros(12, dtype=np.int64))
        if i < 4:
            p.terms.add("gabapentin")
        if i < 3:
            p.terms.add("tramadol")
        profiles[p.user_id] = p
    # "4 or more" includes the boundary; 3 askers misses it
    selected = dict(select_modeled_terms(profiles, lex, threshold=4))
    assert selected == {"gabapentin": 4}
    selected = dict(select_modeled_terms(profiles, lex, threshold=3))
    assert selected == {"gabapentin": 4, "tramadol": 3}


def test_cob12_trivial_directions(table):
    assert cob12(table.values.copy(), table) == pytest.approx(1.0)
    assert cob12(-table.values, table) == pytest.approx(-1.0)
    with pytest.raises(StatError):
        cob12(np.zeros(12), table)


def test_cob12_scaling_invariance(table):
    rng = np.random.default_rng(2)
    coef = rng.normal(size=12)
    base = cob12(coef, table, "pearson")
    from b12miner.corpus import NutrientTable

    scaled = NutrientTable(table.values * 4.5)
    assert cob12(coef, scaled, "pearson") == pytest.approx(base, abs=1e-12)


def test_fit_term_model_recovers_negative_dependence(table):
    rng = np.random.default_rng(11)
    m_bar = 11.0
    profiles = _make_profiles(
        rng, 6000, lambda m: min(1.0, max(0.0, 0.3 - 0.003 * (m - m_bar))))
    res = fit_term_model(profiles, "gabapentin", "target", table,
                         cohort_filter="all")
    assert not res.degenerate
    assert res.cob12 < 0


def test_fit_term_model_no_askers_degenerate(table):
    rng = np.random.default_rng(1)
    profiles = _make_profiles(rng, 50)
    res = fit_term_model(profiles, "gabapentin", "target", table,
                         cohort_filter="all")
    assert res.degenerate
    assert np.isnan(res.cob12)
    assert res.r2_i == 0.0


def test_fit_term_model_cohort_filter_excludes_aware(table):
    rng = np.random.default_rng(5)
    profiles = _make_profiles(rng, 400, lambda m: 0.3, aware_rate=0.5)
    res_all = fit_term_model(profiles, "gabapentin", "target", table,
                             cohort_filter="all")
    res_unaware = fit_term_model(profiles, "gabapentin", "target", table,
                                 cohort_filter="unaware")
    assert res_unaware.n_fit < res_all.n_fit


def test_fit_term_model_too_few_users(table):
    rng = np.random.default_rng(0)
    profiles = _make_profiles(rng, 10, lambda m: 0.5)
    with pytest.raises(StatError):
        fit_term_model(profiles, "gabapentin", "target", table, cohort_filter="all")


def test_fit_invariant_to_user_ordering(table):
    rng = np.random.default_rng(21)
    profiles = _make_profiles(rng, 300, lambda m: 0.25)
    res_a = fit_term_model(profiles, "gabapentin", "target", table, cohort_filter="all")
    shuffled = dict(reversed(list(profiles.items())))
    res_b = fit_term_model(shuffled, "gabapentin", "target", table, cohort_filter="all")
    assert res_a.coefficients.tolist() == res_b.coefficients.tolist()
    assert res_a.r2_i == res_b.r2_i


def test_fit_selected_terms_threaded_matches_serial(table):
    rng = np.random.default_rng(3)
    lex = load_term_lexicon(None, "target")
    profiles = _make_profiles(rng, 400, lambda m: 0.4)
    serial = fit_selected_terms(profiles, lex, table, threshold=5, threads=1)
    threaded = fit_selected_terms(profiles, lex, table, threshold=5, threads=4)
    assert [r.term for r in serial] == [r.term for r in threaded]
    for a, b in zip(serial, threaded):
        assert a.coefficients.tolist() == b.coefficients.tolist()
        assert a.r2_i == b.r2_i


# ---------------------------------------------------------------------------
# rankings and comparison
# ---------------------------------------------------------------------------

def _result(term, r2, cob=0.0, n_askers=100, kind="target", degenerate=False):
    return TermModelResult(term=term, kind=kind, n_askers=n_askers,
                           coefficients=np.arange(12.0) * (1 + r2),
                           r2_i=r2, cob12=cob, cob12_spearman=cob,
                           n_fit=1000, degenerate=degenerate)


def test_rank_terms_ordering_and_ties():
    results = [_result("a", 0.01), _result("b", 0.03),
               _result("c", 0.02, n_askers=50), _result("d", 0.02, n_askers=70)]
    ranked = rank_terms(results, top_k=0)
    assert [r.term for r in ranked] == ["b", "d", "c", "a"]


def test_rank_terms_is_a_permutation():
    rng = np.random.default_rng(7)
    results = [_result(f"t{i}", float(rng.random())) for i in range(20)]
    ranked = rank_terms(results, top_k=0)
    assert sorted(r.term for r in ranked) == sorted(r.term for r in results)


def test_rank_terms_excludes_degenerate():
    results = [_result("a", 0.5, degenerate=True), _result("b", 0.01)]
    assert [r.term for r in rank_terms(results)] == ["b"]
    with pytest.raises(StatError):
        rank_terms([_result("a", 0.5, degenerate=True)])


def test_target_vs_control_symmetric_lists():
    targets = [_result(f"t{i}", 0.01 * (i + 1), cob=-0.1) for i in range(10)]
    controls = [_result(f"c{i}", 0.01 * (i + 1), cob=-0.1, kind="control")
                for i in range(10)]
    cmp = target_vs_control(targets, controls)
    assert cmp.median_r2_ratio == pytest.approx(1.0)
    assert cmp.r2_ranksum_p == pytest.approx(1.0)
    assert cmp.cob12_ranksum_p == pytest.approx(1.0)


def test_target_vs_control_shortfall_uses_available():
    targets = [_result(f"t{i}", 0.01 + 0.01 * i, cob=-0.4) for i in range(4)]
    controls = [_result(f"c{i}", 0.005, cob=0.02, kind="control") for i in range(6)]
    cmp = target_vs_control(targets, controls)
    assert cmp.top_k_used == 4


def test_target_vs_control_tomato_contrast(table):
    rng = np.random.default_rng(13)
    targets = []
    for i in range(10):
        coef = rng.normal(size=12) * 0.01
        coef[FOOD_ITEMS.index("tomatoes")] = 1e-5
        targets.append(TermModelResult(
            term=f"t{i}", kind="target", n_askers=100, coefficients=coef,
            r2_i=0.01, cob12=-0.3, cob12_spearman=-0.3, n_fit=100,
            degenerate=False))
    controls = [_result("c0", 0.005, cob=0.0, kind="control")]
    cmp = target_vs_control(targets, controls)
    assert cmp.min_food_to_tomato_ratio > 2.0


# ---------------------------------------------------------------------------
# indications model
# ---------------------------------------------------------------------------

def test_indications_model_needs_five_rows():
    results = [_result("gabapentin", 0.01, cob=-0.4)]
    table = IndicationsTable({"gabapentin": (10, 5)})
    with pytest.raises(StatError, match="5"):
        indications_model(results, table)


def test_indications_model_recovers_planted_signs():
    results, ind_table, (s_ind, s_pain) = make_indications_world(seed=1)
    fit = indications_model(results, ind_table)
    assert np.sign(fit.slope_indications) == np.sign(s_ind)
    assert np.sign(fit.slope_pain) == np.sign(s_pain)
    assert fit.n == len(results)


def test_indications_model_weight_scale_invariance():
    results, ind_table, _ = make_indications_world(seed=3)
    base = indications_model(results, ind_table)
    boosted = [TermModelResult(
        term=r.term, kind=r.kind, n_askers=r.n_askers,
        coefficients=r.coefficients, r2_i=5.0 * r.r2_i, cob12=r.cob12,
        cob12_spearman=r.cob12_spearman, n_fit=r.n_fit, degenerate=False)
        for r in results]
    scaled = indications_model(boosted, ind_table)
    assert scaled.slope_indications == pytest.approx(base.slope_indications, abs=1e-10)
    assert scaled.slope_pain == pytest.approx(base.slope_pain, abs=1e-10)


def test_indications_model_equal_weights_equals_unweighted():
    results, ind_table, _ = make_indications_world(seed=5)
    flat = [TermModelResult(
        term=r.term, kind=r.kind, n_askers=r.n_askers,
        coefficients=r.coefficients, r2_i=1.0, cob12=r.cob12,
        cob12_spearman=r.cob12_spearman, n_fit=r.n_fit, degenerate=False)
        for r in results]
    weighted = indications_model(flat, ind_table)

    from b12miner.stats import rank_regression

    askers = np.array([float(r.n_askers) for r in sorted(flat, key=lambda r: r.term)])
    rows = sorted(flat, key=lambda r: r.term)
    X = np.column_stack([
        askers,
        [float(ind_table.counts[r.term][0]) for r in rows],
        [float(ind_table.counts[r.term][1]) for r in rows],
    ])
    y = np.array([r.cob12 for r in rows])
    unweighted = rank_regression(X, y, None)
    assert weighted.slope_indications == pytest.approx(
        unweighted.coefficients[1], abs=1e-10)


def test_indications_model_interaction_flag():
    results, ind_table, _ = make_indications_world(seed=9)
    fit = indications_model(results, ind_table, with_interaction=True)
    assert fit.slope_interaction is not None
