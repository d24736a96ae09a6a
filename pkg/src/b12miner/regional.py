"""Regional validation of the recipe-search consumption proxy.

Cost-weighted recipe-query shares per region are compared against
within-region expenditure fractions on the same 4x6 grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (
    FOOD_GROUPS,
    FOOD_ITEMS,
    REGIONS,
    CostTable,
    ExpenditureTable,
    ConsumptionTable,
)
from .errors import StatError
from .stats import CorrelationResult, spearman


@dataclass(frozen=True)
class RegionalShareMatrix:
    regions: tuple[str, ...]          # regions with activity, row order
    shares: np.ndarray                # len(regions) x 6, rows sum to 1
    skipped_regions: tuple[str, ...]  # regions with zero weighted queries


def _group_query_matrix(profiles, group_map) -> dict[str, np.ndarray]:
    """Per-region query counts summed into the 6 food groups."""
    group_idx = {g: i for i, g in enumerate(FOOD_GROUPS)}
    food_to_group = np.full(len(FOOD_ITEMS), -1, dtype=int)
    for i, food in enumerate(FOOD_ITEMS):
        if food in group_map:
            food_to_group[i] = group_idx[group_map[food]]
    out = {r: np.zeros(len(FOOD_GROUPS)) for r in REGIONS}
    iterable = (profiles.values() if isinstance(profiles, dict) else profiles)
    for prof in iterable:
        if prof.region not in out:
            continue
        row = out[prof.region]
        for i, c in enumerate(prof.food_counts):
            g = food_to_group[i]
            if g >= 0 and c:
                row[g] += float(c)
    return out


def regional_recipe_shares(profiles, costs: CostTable, group_map) -> RegionalShareMatrix:
    """share(r,g) = cost[g]*queries(r,g) normalised within each region.

    Regions with zero weighted queries are flagged and left out of the
    matrix rather than emitting an undefined row.
    """
    queries = _group_query_matrix(profiles, group_map)
    cost_vec = np.array([costs.dollars[g] for g in FOOD_GROUPS])
    kept = []
    rows = []
    skipped = []
    for region in REGIONS:
        weighted = cost_vec * queries[region]
        total = weighted.sum()
        if total <= 0:
            skipped.append(region)
            continue
        kept.append(region)
        rows.append(weighted / total)
    return RegionalShareMatrix(tuple(kept), np.array(rows), tuple(skipped))


@dataclass(frozen=True)
class ValidationResult:
    correlation: CorrelationResult
    regions: tuple[str, ...]
    query_shares: np.ndarray
    expenditure_fractions: np.ndarray


def validate_against_expenditure(shares: RegionalShareMatrix,
                                 expenditure: ExpenditureTable) -> ValidationResult:
    """Spearman correlation between the flattened share and expenditure grids."""
    if not shares.regions:
        raise StatError("no regions with recipe-query activity")
    frac = expenditure.fraction_matrix(shares.regions)
    if frac.shape != shares.shares.shape:
        raise StatError("share and expenditure grids do not align")
    corr = spearman(shares.shares.ravel(), frac.ravel())
    return ValidationResult(corr, shares.regions, shares.shares, frac)


def consumption_sanity(profiles, consumption: ConsumptionTable,
                       group_map) -> CorrelationResult:
    """Secondary check: national query counts per group vs per-capita quantity."""
    queries = _group_query_matrix(profiles, group_map)
    national = np.zeros(len(FOOD_GROUPS))
    for region, row in queries.items():
        national += row
    target = np.array([consumption.quantity[g] for g in FOOD_GROUPS])
    return spearman(national, target)
