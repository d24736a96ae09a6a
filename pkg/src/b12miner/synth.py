"""Synthetic query-log generation with fully known ground truth.

Every pipeline stage gets an oracle: the generator retains per-user true food
counts and intake, the planted per-term effects, the awareness cohorts and
the per-region count matrix.  Generated queries are restricted to recipes
whose own title resolves back to them through the matcher, so with zero
matcher noise the pipeline's profile store reproduces the truth exactly.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import MatcherConfig, match_recipe
from .corpus import (
    FOOD_INDEX,
    FOOD_ITEMS,
    N_FOODS,
    NutrientTable,
    RecipeCorpus,
    load_nutrient_table,
    load_recipe_corpus,
)
from .errors import ConfigError, FormatError
from .ingest import RegionMap
from .stats import fsum

REGION_ZIPS = {
    "Northeast": ("10001", "02139", "06510", "07030"),
    "Midwest": ("60601", "48201", "55401", "43201"),
    "South": ("30301", "77001", "33101", "37201"),
    "West": ("94105", "98101", "80202", "85001"),
}

TERM_QUERY_TEMPLATES = ("{t}", "{t} dosage", "{t} side effects", "what is {t}")
B12_QUERY = "vitamin b12"
B12_DEFICIENCY_QUERIES = ("b12 deficiency", "b12 deficiency symptoms")
B12_SUPPLEMENT_QUERY = "b12 supplements"


@dataclass(frozen=True)
class TermEffect:
    term: str
    kind: str                 # "target" | "control"
    base_rate: float
    effect_per_mcg: float = 0.0


@dataclass
class SynthConfig:
    n_users: int
    seed: int = 0
    region_weights: dict = field(default_factory=lambda: {
        "Northeast": 0.20, "Midwest": 0.25, "South": 0.30, "West": 0.25})
    food_alpha: tuple = tuple([1.0] * N_FOODS)      # Dirichlet prior on preferences
    regional_food_weights: dict | None = None        # region -> 12 weights (overrides alpha)
    food_noise_sigma: float = 0.0                    # lognormal jitter on regional weights
    recipe_rate: float = 8.0                         # Poisson mean searches per user
    terms: list = field(default_factory=list)        # TermEffect entries
    b12_rate: float = 0.0
    deficiency_rate: float = 0.0
    deficiency_intake_gap: float | None = None       # target relative intake gap
    supplement_rate_aware: float = 0.0
    supplement_rate_unaware: float = 0.0
    matcher_noise: float = 0.0                       # fraction of recipe queries garbled
    single_food_recipes_only: bool = False
    absent_zip_rate: float = 0.0

    def validate(self):
        if self.n_users < 1:
            raise ConfigError("n_users must be at least 1")
        rates = [self.recipe_rate, self.matcher_noise, self.b12_rate,
                 self.deficiency_rate, self.supplement_rate_aware,
                 self.supplement_rate_unaware, self.absent_zip_rate]
        for t in self.terms:
            rates.append(t.base_rate)
        for r in rates[1:]:
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"rate {r} outside [0, 1]")
        if self.recipe_rate < 0:
            raise ConfigError("recipe_rate must be non-negative")
        if self.deficiency_intake_gap is not None and not 0.0 <= self.deficiency_intake_gap < 1.0:
            raise ConfigError("deficiency_intake_gap must be in [0, 1)")
        for region in self.region_weights:
            if region not in REGION_ZIPS:
                raise ConfigError(f"unknown region '{region}'")


@dataclass
class GenerationReport:
    n_users: int
    n_queries: int
    n_recipe_queries: int
    n_garbled: int
    clamped_fraction: dict            # term -> fraction of users clamped
    mean_intake: float


def sampleable_recipes(corpus: RecipeCorpus, single_food_only: bool = False,
                       config: MatcherConfig = MatcherConfig()) -> dict[str, list[int]]:
    """Per food, corpus recipes whose "<title> recipe" query resolves to them."""
    pools: dict[str, list[int]] = {f: [] for f in FOOD_ITEMS}
    for i, recipe in enumerate(corpus.recipes):
        if single_food_only and len(recipe.foods) != 1:
            continue
        tokens = list(recipe.tokens) + ["recipe"]
        match = match_recipe(tokens, corpus, config)
        if match is None or match[0].title != recipe.title:
            continue
        for food in recipe.foods:
            pools[food].append(i)
    return pools


def _plant_gap_cohort(m: np.ndarray, eligible: np.ndarray, n_aware: int,
                      gap: float, rng: np.random.Generator) -> np.ndarray:
    """Pick an aware cohort whose mean intake sits `gap` below the rest.

    Starts from a low-intake-biased random sample, then swaps members until
    the realized relative difference is within 0.002 of the target.  Fully
    deterministic under the generator seed.
    """
    idx = np.flatnonzero(eligible)
    if n_aware < 1 or n_aware >= idx.size:
        raise ConfigError("aware cohort size out of range for gap planting")
    vals = m[idx]
    z = (vals - vals.mean()) / (vals.std() + 1e-12)
    w = np.exp(-z)
    w /= w.sum()
    chosen = rng.choice(idx.size, size=n_aware, replace=False, p=w)
    aware = np.zeros(idx.size, dtype=bool)
    aware[chosen] = True

    sum_a = float(vals[aware].sum())
    sum_all = float(vals.sum())
    n_b = idx.size - n_aware

    # aware-cohort sum that realises the target gap exactly
    target_sum = n_aware * (1.0 - gap) * sum_all / (n_b + n_aware * (1.0 - gap))

    def rel_diff(sa):
        mean_a = sa / n_aware
        mean_b = (sum_all - sa) / n_b
        return (mean_b - mean_a) / mean_b   # positive when aware eats less

    for _ in range(5000):
        if abs(rel_diff(sum_a) - gap) <= 5e-4:
            break
        need = target_sum - sum_a
        aware_ix = np.flatnonzero(aware)
        other_ix = np.flatnonzero(~aware)
        cand_a = rng.choice(aware_ix, size=min(64, aware_ix.size), replace=False)
        cand_o = rng.choice(other_ix, size=min(64, other_ix.size), replace=False)
        # pick the swap whose value shift lands closest to the remaining need
        shift = vals[cand_o][None, :] - vals[cand_a][:, None]
        a_pos, o_pos = np.unravel_index(np.argmin(np.abs(shift - need)), shift.shape)
        out, inc = cand_a[a_pos], cand_o[o_pos]
        new_sum = sum_a - float(vals[out]) + float(vals[inc])
        if abs(new_sum - target_sum) < abs(sum_a - target_sum):
            aware[out] = False
            aware[inc] = True
            sum_a = new_sum

    flags = np.zeros(m.size, dtype=bool)
    flags[idx[aware]] = True
    return flags


def _garble(tokens: list[str], rng: np.random.Generator) -> list[str]:
    """Random token deletion or substitution; exercises the theta threshold."""
    toks = list(tokens)
    if len(toks) > 1 and rng.random() < 0.5:
        del toks[int(rng.integers(len(toks)))]
    else:
        junk = ["easy", "best", "quick", "homemade", "simple"]
        toks[int(rng.integers(len(toks)))] = junk[int(rng.integers(len(junk)))]
    return toks


def generate(config: SynthConfig, log_path, truth_path,
             corpus: RecipeCorpus | None = None,
             table: NutrientTable | None = None) -> GenerationReport:
    """Write a synthetic log and its ground-truth file; byte-stable under seed."""
    config.validate()
    if corpus is None:
        corpus = load_recipe_corpus()
    if table is None:
        table = load_nutrient_table()
    rng = np.random.default_rng(config.seed)
    region_map = RegionMap.load()
    for region, zips in REGION_ZIPS.items():
        for z in zips:
            if region_map.zip_to_region(z) != region:
                raise ConfigError(f"zip {z} does not map to {region}")

    pools = sampleable_recipes(corpus, config.single_food_recipes_only)
    n = config.n_users
    users = [f"u{i:06d}" for i in range(n)]

    regions = sorted(config.region_weights)
    rweights = np.array([config.region_weights[r] for r in regions], dtype=float)
    rweights /= rweights.sum()
    user_region_ix = rng.choice(len(regions), size=n, p=rweights)
    user_region = [regions[i] for i in user_region_ix]
    user_zip = []
    for i in range(n):
        if config.absent_zip_rate > 0 and rng.random() < config.absent_zip_rate:
            user_zip.append("")
        else:
            zips = REGION_ZIPS[user_region[i]]
            user_zip.append(zips[int(rng.integers(len(zips)))])

    # per-user preference over foods
    if config.regional_food_weights is not None:
        base = {}
        for region in regions:
            w = np.asarray(config.regional_food_weights[region], dtype=float)
            if w.shape != (N_FOODS,) or np.any(w < 0) or w.sum() <= 0:
                raise ConfigError(f"bad regional food weights for {region}")
            base[region] = w
        prefs = np.zeros((n, N_FOODS))
        for i in range(n):
            w = base[user_region[i]].copy()
            if config.food_noise_sigma > 0:
                jitter = np.exp(config.food_noise_sigma * rng.standard_normal(N_FOODS))
                w = w * jitter
            prefs[i] = w / w.sum()
    else:
        alpha = np.asarray(config.food_alpha, dtype=float)
        if alpha.shape != (N_FOODS,):
            raise ConfigError("food_alpha needs one entry per food")
        prefs = rng.dirichlet(alpha, size=n)

    # foods with an empty sampleable pool cannot be searched
    pool_sizes = np.array([len(pools[f]) for f in FOOD_ITEMS])
    empty = pool_sizes == 0
    if np.any(empty):
        prefs[:, empty] = 0.0
        row_sums = prefs.sum(axis=1)
        dead = row_sums <= 0
        if np.any(dead):
            raise ConfigError("some users have no searchable food left")
        prefs /= row_sums[:, None]

    # recipe searches
    counts = np.zeros((n, N_FOODS), dtype=np.int64)
    queries: list[tuple[int, str]] = []   # (user index, text)
    n_recipe_queries = 0
    n_garbled = 0
    k_per_user = rng.poisson(config.recipe_rate, size=n)
    for i in range(n):
        k = int(k_per_user[i])
        if k == 0:
            continue
        cdf = np.cumsum(prefs[i])
        draws = np.searchsorted(cdf, rng.random(k), side="right")
        draws = np.minimum(draws, N_FOODS - 1)
        for f_ix in draws:
            food = FOOD_ITEMS[f_ix]
            pool = pools[food]
            recipe = corpus.recipes[pool[int(rng.integers(len(pool)))]]
            counts[i] += np.array([1 if f in recipe.foods else 0 for f in FOOD_ITEMS],
                                  dtype=np.int64)
            tokens = list(recipe.tokens) + ["recipe"]
            if config.matcher_noise > 0 and rng.random() < config.matcher_noise:
                tokens = _garble(tokens, rng)
                n_garbled += 1
            queries.append((i, " ".join(tokens)))
            n_recipe_queries += 1

    # true mean intake
    totals = counts.sum(axis=1)
    m = np.full(n, np.nan)
    defined = totals > 0
    for i in np.flatnonzero(defined):
        m[i] = fsum(table.values * counts[i].astype(float)) / float(totals[i])
    m_bar = fsum(m[defined]) / int(defined.sum()) if np.any(defined) else 0.0

    # awareness
    if config.deficiency_intake_gap is not None:
        n_aware = int(round(config.deficiency_rate * int(defined.sum())))
        aware_def = _plant_gap_cohort(m, defined, n_aware,
                                      config.deficiency_intake_gap, rng)
    else:
        aware_def = (rng.random(n) < config.deficiency_rate)
    aware_b12 = rng.random(n) < config.b12_rate
    supp_draw = rng.random(n)
    aware_supp = np.where(aware_def,
                          supp_draw < config.supplement_rate_aware,
                          supp_draw < config.supplement_rate_unaware)
    for i in range(n):
        if aware_def[i]:
            q = B12_DEFICIENCY_QUERIES[int(rng.integers(len(B12_DEFICIENCY_QUERIES)))]
            queries.append((i, q))
        if aware_b12[i]:
            queries.append((i, B12_QUERY))
        if aware_supp[i]:
            queries.append((i, B12_SUPPLEMENT_QUERY))

    # term searches: P(ask) = clamp(base + effect * (m - m_bar), 0, 1)
    asked: dict[str, np.ndarray] = {}
    clamped: dict[str, float] = {}
    for spec in config.terms:
        delta = np.where(defined, m - m_bar, 0.0)
        raw = spec.base_rate + spec.effect_per_mcg * delta
        clamped[spec.term] = float(np.mean((raw < 0.0) | (raw > 1.0)))
        p = np.clip(raw, 0.0, 1.0)
        hits = rng.random(n) < p
        asked[spec.term] = hits
        if clamped[spec.term] > 0.05:
            warnings.warn(
                f"term '{spec.term}': effect clamps {clamped[spec.term]:.1%} of users; "
                "too large for linear-model recovery", stacklevel=2)
        for i in np.flatnonzero(hits):
            tmpl = TERM_QUERY_TEMPLATES[int(rng.integers(len(TERM_QUERY_TEMPLATES)))]
            queries.append((i, tmpl.format(t=spec.term)))

    # shuffle into a log; timestamps follow final order
    order = rng.permutation(len(queries))
    base_ts = 1600000000
    log_path = Path(log_path)
    with log_path.open("w", encoding="utf-8") as f:
        for pos, qi in enumerate(order):
            i, text = queries[int(qi)]
            obj = {"user": users[i], "query": text, "zip": user_zip[i],
                   "ts": base_ts + pos}
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
    log_sha = hashlib.sha256(log_path.read_bytes()).hexdigest()

    # per-region true count matrix
    region_counts = {r: np.zeros(N_FOODS, dtype=np.int64) for r in regions}
    for i in range(n):
        region_counts[user_region[i]] += counts[i]

    truth_path = Path(truth_path)
    with truth_path.open("w", encoding="utf-8") as f:
        meta = {
            "type": "meta",
            "seed": config.seed,
            "n_users": n,
            "log_sha256": log_sha,
            "m_bar": m_bar,
            "terms": [{"term": t.term, "kind": t.kind, "base_rate": t.base_rate,
                       "effect_per_mcg": t.effect_per_mcg} for t in config.terms],
            "region_food_counts": {r: region_counts[r].tolist() for r in regions},
            "matcher_noise": config.matcher_noise,
        }
        f.write(json.dumps(meta, ensure_ascii=False) + "\n")
        for i in range(n):
            row = {
                "type": "user",
                "user": users[i],
                "region": user_region[i],
                "zip": user_zip[i],
                "counts": counts[i].tolist(),
                "m": None if not defined[i] else m[i],
                "aware_b12": bool(aware_b12[i]),
                "aware_deficiency": bool(aware_def[i]),
                "aware_supplement": bool(aware_supp[i]),
                "asked": sorted(t for t, hits in asked.items() if hits[i]),
            }
            f.write(json.dumps(row, ensure_ascii=False) + "\n")

    return GenerationReport(
        n_users=n,
        n_queries=len(queries),
        n_recipe_queries=n_recipe_queries,
        n_garbled=n_garbled,
        clamped_fraction=clamped,
        mean_intake=m_bar,
    )


# ---------------------------------------------------------------------------
# ground-truth reading and the brute-force oracle
# ---------------------------------------------------------------------------

def read_truth(truth_path):
    """Return (meta, user rows) from a truth file."""
    meta = None
    rows = []
    with Path(truth_path).open(encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("type") == "meta":
                meta = obj
            else:
                rows.append(obj)
    if meta is None:
        raise FormatError(f"{truth_path}: missing meta line")
    return meta, rows


def oracle_expected_effects(truth_path, log_path, costs=None, group_map=None):
    """Brute-force expectations straight from the truth file.

    Recomputes regional shares, cohort intake means and per-term diet
    dependence without touching any pipeline code path.  Verifies that the
    log file is the one the truth was generated with.
    """
    meta, rows = read_truth(truth_path)
    actual = hashlib.sha256(Path(log_path).read_bytes()).hexdigest()
    if actual != meta["log_sha256"]:
        raise FormatError("truth/log mismatch: log hash differs from the truth meta")

    out: dict = {"n_users": meta["n_users"], "m_bar": meta["m_bar"]}

    if costs is not None and group_map is not None:
        from .corpus import FOOD_GROUPS

        shares = {}
        for region, vec in meta["region_food_counts"].items():
            weighted = np.zeros(len(FOOD_GROUPS))
            for i, food in enumerate(FOOD_ITEMS):
                g = group_map.get(food)
                if g is not None and vec[i]:
                    weighted[FOOD_GROUPS.index(g)] += costs.dollars[g] * vec[i]
            total = weighted.sum()
            if total > 0:
                shares[region] = (weighted / total).tolist()
        out["true_shares"] = shares

    m_def = [r["m"] for r in rows if r["m"] is not None]
    aware = [r["m"] for r in rows if r["m"] is not None and r["aware_deficiency"]]
    unaware = [r["m"] for r in rows if r["m"] is not None and not r["aware_deficiency"]]
    if aware and unaware:
        mean_a = fsum(aware) / len(aware)
        mean_b = fsum(unaware) / len(unaware)
        out["cohort"] = {
            "mean_aware": mean_a,
            "mean_unaware": mean_b,
            "relative_diff": abs(mean_a - mean_b) / mean_b,
        }
    out["mean_intake_defined"] = fsum(m_def) / len(m_def) if m_def else None

    term_dependence = {}
    for spec in meta["terms"]:
        term = spec["term"]
        askers = [r["m"] for r in rows if r["m"] is not None and term in r["asked"]]
        others = [r["m"] for r in rows if r["m"] is not None and term not in r["asked"]]
        if askers and others:
            diff = fsum(askers) / len(askers) - fsum(others) / len(others)
        else:
            diff = 0.0
        term_dependence[term] = {
            "planted_effect": spec["effect_per_mcg"],
            "asker_minus_other_intake": diff,
        }
    out["terms"] = term_dependence
    return out


def truth_profiles_match(truth_rows, profiles) -> bool:
    """True when pipeline food counts equal the truth exactly (zero noise)."""
    for row in truth_rows:
        prof = profiles.get(row["user"])
        if prof is None:
            if any(row["counts"]) or row["asked"]:
                return False
            continue
        if prof.food_counts.tolist() != row["counts"]:
            return False
    return True


# ---------------------------------------------------------------------------
# term-level world for the indications model
# ---------------------------------------------------------------------------

def make_indications_world(n_terms: int = 60, seed: int = 0,
                           slope_indications: float = -0.2,
                           slope_pain: float = 0.12,
                           noise_sd: float = 0.05):
    """Synthetic drug-term rows with a planted CoB12 structure.

    CoB12 falls with the (standardised rank of the) indication count and
    rises with the pain-indication count.  Returns (TermModelResult list,
    IndicationsTable, planted slopes).
    """
    from .corpus import IndicationsTable
    from .models import TermModelResult
    from .stats import rank_transform

    rng = np.random.default_rng(seed)
    n_ind = rng.integers(5, 50, size=n_terms).astype(float)
    pain_frac = rng.uniform(0.0, 0.9, size=n_terms)
    n_pain = np.minimum(np.round(n_ind * pain_frac), n_ind)
    askers = rng.integers(1000, 60000, size=n_terms)

    def zrank(v):
        r = rank_transform(v)
        return (r - r.mean()) / r.std()

    cob = (slope_indications * zrank(n_ind)
           + slope_pain * zrank(n_pain)
           + noise_sd * rng.standard_normal(n_terms))
    cob = np.clip(cob, -0.95, 0.95)
    r2 = rng.uniform(0.0005, 0.004, size=n_terms)

    results = []
    counts = {}
    for i in range(n_terms):
        term = f"drug{i:03d}"
        coef = rng.standard_normal(N_FOODS) * 1e-4
        results.append(TermModelResult(
            term=term, kind="target", n_askers=int(askers[i]),
            coefficients=coef, r2_i=float(r2[i]), cob12=float(cob[i]),
            cob12_spearman=float(cob[i]), n_fit=int(askers[i]),
            degenerate=False,
        ))
        counts[term] = (int(n_ind[i]), int(n_pain[i]))
    return results, IndicationsTable(counts), (slope_indications, slope_pain)
