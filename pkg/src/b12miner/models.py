"""Per-term linear probability models, CoB12, rankings and the indications model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import FOOD_ITEMS, IndicationsTable, NutrientTable, TermLexicon
from .errors import StatError
from .profiles import UserProfile, is_b12_aware
from .stats import (
    CorrelationResult,
    RegressionResult,
    fsum,
    ols_fit,
    pearson,
    rank_regression,
    ranksum,
    spearman,
)

DEFAULT_ASKER_THRESHOLD = 1000
MIN_FIT_USERS = 13          # 12 food features + intercept


@dataclass(frozen=True)
class TermModelResult:
    term: str
    kind: str                      # "target" | "control"
    n_askers: int
    coefficients: np.ndarray       # 12-vector aligned to FOOD_ITEMS
    r2_i: float
    cob12: float                   # nan when degenerate
    cob12_spearman: float
    n_fit: int
    degenerate: bool


def select_modeled_terms(profiles, lexicon: TermLexicon,
                         threshold: int = DEFAULT_ASKER_THRESHOLD) -> list[tuple[str, int]]:
    """Lexicon terms asked by at least `threshold` users, with asker counts."""
    counts = {t: 0 for t in lexicon.entries}
    for prof in _iter(profiles):
        for t in prof.terms:
            if t in counts:
                counts[t] += 1
    return [(t, c) for t, c in sorted(counts.items()) if c >= threshold]


def _iter(profiles):
    if isinstance(profiles, dict):
        for user in sorted(profiles):
            yield profiles[user]
    else:
        yield from profiles


def _cohort_matrix(profiles, cohort_filter: str):
    """Design matrix of food counts for the chosen cohort, plus user order."""
    if cohort_filter not in ("unaware", "all"):
        raise StatError(f"unknown cohort filter '{cohort_filter}'")
    rows = []
    users = []
    for prof in _iter(profiles):
        if cohort_filter == "unaware" and is_b12_aware(prof):
            continue
        rows.append(prof.food_counts)
        users.append(prof)
    if not rows:
        raise StatError("cohort filter removed every user")
    return np.array(rows, dtype=float), users


def cob12(coefficients, table: NutrientTable, method: str = "pearson") -> float:
    """Correlation between the 12 food coefficients and the B12 contents."""
    coef = np.asarray(coefficients, dtype=float)
    if coef.shape != (len(FOOD_ITEMS),):
        raise StatError("cob12 needs one coefficient per food")
    if np.all(coef == coef[0]):
        raise StatError("cob12 undefined for a constant coefficient vector")
    if method == "pearson":
        return pearson(coef, table.values).coefficient
    if method == "spearman":
        return spearman(coef, table.values).coefficient
    raise StatError(f"unknown cob12 method '{method}'")


def fit_term_model(profiles, term: str, kind: str, table: NutrientTable,
                   cohort_filter: str = "unaware",
                   cob12_method: str = "pearson",
                   n_askers: int | None = None) -> TermModelResult:
    """Linear probability model of the term flag on the 12 food counts.

    The default cohort excludes users with any B12-awareness flag, since
    aware users tend to change their diet or take supplements, masking the
    dietary signal.  Degenerate fits (no label variance, rank-deficient
    counts) are flagged and carry cob12 = nan.
    """
    X, users = _cohort_matrix(profiles, cohort_filter)
    y = np.array([1.0 if term in u.terms else 0.0 for u in users])
    if n_askers is None:
        n_askers = sum(1 for p in _iter(profiles) if term in p.terms)
    if X.shape[0] < MIN_FIT_USERS:
        raise StatError(f"term '{term}': only {X.shape[0]} users after filtering")

    degenerate = False
    if y.min() == y.max():
        degenerate = True
        fit = None
    else:
        fit = ols_fit(X, y)
        degenerate = fit.degenerate

    if fit is None:
        coef = np.zeros(len(FOOD_ITEMS))
        r2 = 0.0
    else:
        coef = fit.coefficients
        r2 = fit.r_squared

    c_pearson = np.nan
    c_spearman = np.nan
    if not degenerate:
        try:
            c_pearson = cob12(coef, table, "pearson")
            c_spearman = cob12(coef, table, "spearman")
        except StatError:
            degenerate = True
            c_pearson = np.nan
            c_spearman = np.nan

    main = c_pearson if cob12_method == "pearson" else c_spearman
    return TermModelResult(
        term=term,
        kind=kind,
        n_askers=int(n_askers),
        coefficients=coef,
        r2_i=float(r2),
        cob12=float(main),
        cob12_spearman=float(c_spearman),
        n_fit=int(X.shape[0]),
        degenerate=degenerate,
    )


def fit_selected_terms(profiles, lexicon: TermLexicon, table: NutrientTable,
                       threshold: int = DEFAULT_ASKER_THRESHOLD,
                       cohort_filter: str = "unaware",
                       cob12_method: str = "pearson",
                       threads: int = 1) -> list[TermModelResult]:
    """Fit every term passing selection; deterministic regardless of threads."""
    selected = select_modeled_terms(profiles, lexicon, threshold)
    if not selected:
        return []
    kind = lexicon.kind

    def fit_one(item):
        term, n_ask = item
        return fit_term_model(profiles, term, kind, table,
                              cohort_filter=cohort_filter,
                              cob12_method=cob12_method, n_askers=n_ask)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fit_one, selected))
    return [fit_one(item) for item in selected]


# ---------------------------------------------------------------------------
# rankings and comparisons
# ---------------------------------------------------------------------------

def rank_terms(results, top_k: int = 10) -> list[TermModelResult]:
    """Non-degenerate results sorted by R^2 desc, askers desc, term asc."""
    usable = [r for r in results if not r.degenerate]
    if not usable:
        raise StatError("rank_terms: no non-degenerate results")
    usable.sort(key=lambda r: (-r.r2_i, -r.n_askers, r.term))
    return usable[:top_k] if top_k else usable


@dataclass(frozen=True)
class ComparisonReport:
    n_targets: int
    n_controls: int
    n_degenerate: int
    top_k_used: int                         # min(10, list sizes); labelled shortfall
    median_r2_target: float
    median_r2_control: float
    median_r2_ratio: float
    r2_ranksum_p: float
    spearman_r2_cob12_target: CorrelationResult | None
    spearman_r2_cob12_control: CorrelationResult | None
    spearman_r2_askers_target: CorrelationResult | None
    mean_cob12_target: float
    mean_cob12_control: float
    cob12_ranksum_p: float
    tomato_mean_abs: float
    non_tomato_mean_abs: np.ndarray        # 11-vector, FOOD_ITEMS order minus tomatoes
    min_food_to_tomato_ratio: float        # inf when tomato coefficient mass is 0


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


def _safe_spearman(x, y) -> CorrelationResult | None:
    try:
        return spearman(x, y)
    except StatError:
        return None


def target_vs_control(target_results, control_results) -> ComparisonReport:
    """Headline comparisons between target-term and control-term models."""
    targets = [r for r in target_results if not r.degenerate]
    controls = [r for r in control_results if not r.degenerate]
    n_degenerate = (len(target_results) - len(targets)) + (len(control_results) - len(controls))
    if not targets or not controls:
        raise StatError("target_vs_control: need non-degenerate results on both sides")

    top_k = min(10, len(targets), len(controls))
    top_targets = rank_terms(targets, top_k)
    top_controls = rank_terms(controls, top_k)
    med_t = _median([r.r2_i for r in top_targets])
    med_c = _median([r.r2_i for r in top_controls])
    ratio = med_t / med_c if med_c > 0 else float("inf")
    r2_p = ranksum([r.r2_i for r in top_targets], [r.r2_i for r in top_controls]).p_value

    cob_t = [r.cob12 for r in targets]
    cob_c = [r.cob12 for r in controls]
    cob_p = ranksum(cob_t, cob_c).p_value

    # mean |coefficient| per food across target models; contrast vs tomatoes
    abs_coef = np.abs(np.array([r.coefficients for r in targets]))
    mean_abs = abs_coef.mean(axis=0)
    tomato_ix = FOOD_ITEMS.index("tomatoes")
    tomato_mean = float(mean_abs[tomato_ix])
    others = np.delete(mean_abs, tomato_ix)
    min_ratio = float(np.min(others) / tomato_mean) if tomato_mean > 0 else float("inf")

    return ComparisonReport(
        n_targets=len(targets),
        n_controls=len(controls),
        n_degenerate=n_degenerate,
        top_k_used=top_k,
        median_r2_target=med_t,
        median_r2_control=med_c,
        median_r2_ratio=ratio,
        r2_ranksum_p=r2_p,
        spearman_r2_cob12_target=_safe_spearman([r.r2_i for r in targets], cob_t),
        spearman_r2_cob12_control=_safe_spearman([r.r2_i for r in controls], cob_c),
        spearman_r2_askers_target=_safe_spearman(
            [r.r2_i for r in targets], [float(r.n_askers) for r in targets]),
        mean_cob12_target=fsum(cob_t) / len(cob_t),
        mean_cob12_control=fsum(cob_c) / len(cob_c),
        cob12_ranksum_p=cob_p,
        tomato_mean_abs=tomato_mean,
        non_tomato_mean_abs=others,
        min_food_to_tomato_ratio=min_ratio,
    )


# ---------------------------------------------------------------------------
# indications model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndicationsModelResult:
    slope_askers: float
    slope_indications: float
    slope_pain: float
    slope_interaction: float | None
    p_askers: float
    p_indications: float
    p_pain: float
    r_squared: float
    n: int
    spearman_askers_indications: CorrelationResult
    spearman_askers_pain: CorrelationResult
    fit: RegressionResult


def indications_model(results, indications: IndicationsTable,
                      with_interaction: bool = False) -> IndicationsModelResult:
    """R^2-weighted rank regression of CoB12 on askers/indications/pain counts.

    Rows are drug terms that have both a non-degenerate model and an
    indications entry.  Main effects on ranks; an optional product-of-ranks
    interaction column is available for sensitivity runs.
    """
    rows = [r for r in results
            if not r.degenerate and r.term in indications.counts]
    if len(rows) < 5:
        raise StatError(f"indications model needs >= 5 drug terms, have {len(rows)}")
    rows.sort(key=lambda r: r.term)

    askers = np.array([float(r.n_askers) for r in rows])
    n_ind = np.array([float(indications.counts[r.term][0]) for r in rows])
    n_pain = np.array([float(indications.counts[r.term][1]) for r in rows])
    y = np.array([r.cob12 for r in rows])
    weights = np.array([r.r2_i for r in rows])
    if not np.any(weights > 0):
        weights = np.ones(len(rows))

    X = np.column_stack([askers, n_ind, n_pain])
    if with_interaction:
        from .stats import rank_transform

        inter = rank_transform(n_ind) * rank_transform(n_pain)
        X = np.column_stack([X, inter])
    fit = rank_regression(X, y, weights)

    return IndicationsModelResult(
        slope_askers=float(fit.coefficients[0]),
        slope_indications=float(fit.coefficients[1]),
        slope_pain=float(fit.coefficients[2]),
        slope_interaction=float(fit.coefficients[3]) if with_interaction else None,
        p_askers=float(fit.p_values[0]),
        p_indications=float(fit.p_values[1]),
        p_pain=float(fit.p_values[2]),
        r_squared=fit.r_squared,
        n=len(rows),
        spearman_askers_indications=spearman(askers, n_ind),
        spearman_askers_pain=spearman(askers, n_pain),
        fit=fit,
    )
