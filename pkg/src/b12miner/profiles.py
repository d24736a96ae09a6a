"""Per-user aggregation, B12 intake estimation and cohort comparisons."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import FOOD_INDEX, FOOD_ITEMS, N_FOODS, NutrientTable
from .errors import FormatError, StatError
from .ingest import RegionMap, UNKNOWN_REGION
from .stats import fsum, ranksum


@dataclass
class UserProfile:
    user_id: str
    food_counts: np.ndarray          # int64[12], searches per food
    terms: set[str] = field(default_factory=set)
    asked_b12: bool = False
    asked_b12_deficiency: bool = False
    asked_b12_supplement: bool = False
    region: str = UNKNOWN_REGION

    @property
    def total_food_searches(self) -> int:
        return int(self.food_counts.sum())


def _new_profile(user_id: str) -> UserProfile:
    return UserProfile(user_id, np.zeros(N_FOODS, dtype=np.int64))


def build_profiles(classified_records) -> dict[str, UserProfile]:
    """Aggregate classified records into one profile per user.

    Counts accumulate per search occurrence; a recipe search with k tracked
    ingredients increments all k food counts.  The user's region is the mode
    of the zip-derived regions over their records, ties resolved by first
    appearance.
    """
    region_map = RegionMap.load()
    profiles: dict[str, UserProfile] = {}
    region_votes: dict[str, dict[str, list[int]]] = {}
    order = 0
    for rec in classified_records:
        user = rec["user"]
        prof = profiles.get(user)
        if prof is None:
            prof = profiles[user] = _new_profile(user)
            region_votes[user] = {}
        qc = rec["class"]
        for food in qc.get("foods", ()):
            prof.food_counts[FOOD_INDEX[food]] += 1
        for term in qc.get("terms", ()):
            prof.terms.add(term)
        if qc.get("is_b12"):
            prof.asked_b12 = True
        if qc.get("is_b12_deficiency"):
            prof.asked_b12_deficiency = True
        if qc.get("is_b12_supplement"):
            prof.asked_b12_supplement = True
        region = region_map.zip_to_region(rec.get("zip") or None)
        votes = region_votes[user].setdefault(region, [0, order])
        votes[0] += 1
        order += 1
    for user, votes in region_votes.items():
        # most votes first; earliest first appearance breaks ties
        best = min(votes.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
        profiles[user].region = best[0]
    return profiles


def read_classified(path):
    """Iterate classified JSONL records."""
    p = Path(path)
    with p.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{p}:{lineno}: bad classified record") from exc


# ---------------------------------------------------------------------------
# persistence (sorted JSONL keyed by user id)
# ---------------------------------------------------------------------------

def write_profiles(profiles: dict[str, UserProfile], path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for user in sorted(profiles):
            prof = profiles[user]
            obj = {
                "user": prof.user_id,
                "counts": prof.food_counts.tolist(),
                "terms": sorted(prof.terms),
                "b12": prof.asked_b12,
                "b12_deficiency": prof.asked_b12_deficiency,
                "b12_supplement": prof.asked_b12_supplement,
                "region": prof.region,
            }
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_profiles(path) -> dict[str, UserProfile]:
    profiles: dict[str, UserProfile] = {}
    p = Path(path)
    with p.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                counts = np.asarray(obj["counts"], dtype=np.int64)
                if counts.shape != (N_FOODS,):
                    raise ValueError("bad counts length")
                profiles[obj["user"]] = UserProfile(
                    user_id=obj["user"],
                    food_counts=counts,
                    terms=set(obj.get("terms", [])),
                    asked_b12=bool(obj.get("b12", False)),
                    asked_b12_deficiency=bool(obj.get("b12_deficiency", False)),
                    asked_b12_supplement=bool(obj.get("b12_supplement", False)),
                    region=obj.get("region", UNKNOWN_REGION),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise FormatError(f"{p}:{lineno}: bad profile record: {exc}") from exc
    return profiles


# ---------------------------------------------------------------------------
# intake estimation
# ---------------------------------------------------------------------------

def estimate_b12(profile: UserProfile, table: NutrientTable, mode: str = "mean") -> float:
    """Estimated intake: sum of content*count, or that sum per food search.

    mode="sum" is the literal accumulation; mode="mean" (default) divides by
    the number of food searches, keeping values on a per-serving scale.
    Raises StatError in mean mode when the user has no food searches.
    """
    counts = profile.food_counts.astype(float)
    total = fsum(table.values * counts)
    if mode == "sum":
        return total
    if mode == "mean":
        n = float(counts.sum())
        if n == 0:
            raise StatError(f"user {profile.user_id}: mean intake undefined with no food searches")
        return total / n
    raise StatError(f"unknown estimate mode '{mode}'")


@dataclass(frozen=True)
class CohortComparison:
    mean_a: float
    mean_b: float
    relative_diff: float      # |mean_a - mean_b| / mean_b
    ranksum_stat: float
    ranksum_p: float
    n_a: int
    n_b: int


def cohort_compare(profiles, predicate, table: NutrientTable,
                   mode: str = "mean", predicate_name: str = "predicate") -> CohortComparison:
    """Compare intake estimates between predicate-true and predicate-false users.

    Users with no food searches are excluded from both cohorts (their mean
    estimate is undefined).
    """
    a_vals: list[float] = []
    b_vals: list[float] = []
    for prof in _iter_profiles(profiles):
        if prof.total_food_searches == 0:
            continue
        est = estimate_b12(prof, table, mode)
        (a_vals if predicate(prof) else b_vals).append(est)
    if not a_vals or not b_vals:
        side = predicate_name if not a_vals else f"not {predicate_name}"
        raise StatError(f"cohort_compare: empty cohort for '{side}'")
    mean_a = fsum(a_vals) / len(a_vals)
    mean_b = fsum(b_vals) / len(b_vals)
    rs = ranksum(a_vals, b_vals)
    return CohortComparison(
        mean_a=mean_a,
        mean_b=mean_b,
        relative_diff=abs(mean_a - mean_b) / mean_b,
        ranksum_stat=rs.statistic,
        ranksum_p=rs.p_value,
        n_a=len(a_vals),
        n_b=len(b_vals),
    )


def _iter_profiles(profiles):
    if isinstance(profiles, dict):
        for user in sorted(profiles):
            yield profiles[user]
    else:
        yield from profiles


@dataclass(frozen=True)
class AwarenessReport:
    n_users: int
    unaware_fraction: float           # no b12 / deficiency / supplement ask at all
    n_deficiency_aware: int
    supplement_rate_aware: float
    supplement_rate_unaware: float
    supplement_ratio: float | None    # None when undefined


def awareness_stats(profiles) -> AwarenessReport:
    n = 0
    n_unaware = 0
    n_def = 0
    n_def_supp = 0
    n_nodef = 0
    n_nodef_supp = 0
    for prof in _iter_profiles(profiles):
        n += 1
        if not (prof.asked_b12 or prof.asked_b12_deficiency or prof.asked_b12_supplement):
            n_unaware += 1
        if prof.asked_b12_deficiency:
            n_def += 1
            if prof.asked_b12_supplement:
                n_def_supp += 1
        else:
            n_nodef += 1
            if prof.asked_b12_supplement:
                n_nodef_supp += 1
    rate_aware = n_def_supp / n_def if n_def else 0.0
    rate_unaware = n_nodef_supp / n_nodef if n_nodef else 0.0
    ratio = rate_aware / rate_unaware if rate_unaware > 0 else None
    return AwarenessReport(
        n_users=n,
        unaware_fraction=n_unaware / n if n else 1.0,
        n_deficiency_aware=n_def,
        supplement_rate_aware=rate_aware,
        supplement_rate_unaware=rate_unaware,
        supplement_ratio=ratio,
    )


def total_food_counts(profiles) -> np.ndarray:
    """Sum of food_counts over all users (conservation check helper)."""
    total = np.zeros(N_FOODS, dtype=np.int64)
    for prof in _iter_profiles(profiles):
        total += prof.food_counts
    return total


def is_b12_aware(prof: UserProfile) -> bool:
    return prof.asked_b12 or prof.asked_b12_deficiency or prof.asked_b12_supplement


__all__ = [
    "UserProfile", "build_profiles", "read_classified", "write_profiles",
    "read_profiles", "estimate_b12", "CohortComparison", "cohort_compare",
    "AwarenessReport", "awareness_stats", "total_food_counts", "is_b12_aware",
    "FOOD_ITEMS",
]
