"""Statistical primitives: ranks, correlations, rank-sum tests, least squares.

All reductions go through ``math.fsum`` (compensated summation), so results are
bit-identical across runs, shard orders and thread counts.  Small-sample
p-values are exact: the Wilcoxon rank-sum test enumerates its null
distribution when the pooled size is at most ``RANKSUM_EXACT_MAX`` and the
Spearman test does the same for ``n <= SPEARMAN_EXACT_MAX``.  Larger samples
use the usual normal / Student-t approximations.

``permutation_pvalue_oracle`` is a brute-force enumerator kept deliberately
independent of the fast paths; the test suite checks the fast paths against
it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .errors import StatError

RANKSUM_EXACT_MAX = 12   # pooled size at or below which ranksum enumerates exactly
SPEARMAN_EXACT_MAX = 8   # sample size at or below which spearman enumerates exactly


def fsum(values) -> float:
    """Compensated (exactly rounded) sum of a 1-D array or iterable."""
    if isinstance(values, np.ndarray):
        return math.fsum(values.tolist())
    return math.fsum(values)


def _vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise StatError(f"{name} must be one-dimensional")
    if arr.size and not np.all(np.isfinite(arr)):
        raise StatError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class CorrelationResult:
    coefficient: float
    p_value: float
    n: int


@dataclass(frozen=True)
class RankSumResult:
    statistic: float   # rank sum of the first sample
    p_value: float
    n_a: int
    n_b: int
    exact: bool


@dataclass(frozen=True)
class RegressionResult:
    coefficients: np.ndarray   # one slope per input column
    intercept: float
    r_squared: float
    p_values: np.ndarray       # per-slope two-sided p
    intercept_p: float
    n: int
    degenerate: bool = False


# ---------------------------------------------------------------------------
# ranks and correlations
# ---------------------------------------------------------------------------

def rank_transform(values) -> np.ndarray:
    """Ranks 1..n with ties replaced by the average of the tied positions."""
    arr = _vector(values, "values")
    if arr.size == 0:
        raise StatError("rank_transform: empty input")
    order = np.argsort(arr, kind="stable")
    sorted_vals = arr[order]
    ranks = np.empty(arr.size, dtype=float)
    i, n = 0, arr.size
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _t_two_sided_p(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return 2.0 * float(stdtr(n - 2, -abs(t)))


def pearson(x, y) -> CorrelationResult:
    """Product-moment correlation with a Student-t two-sided p-value."""
    xv = _vector(x, "x")
    yv = _vector(y, "y")
    if xv.size != yv.size:
        raise StatError("pearson: length mismatch")
    n = xv.size
    if n < 3:
        raise StatError("pearson: need at least 3 points")
    mx = fsum(xv) / n
    my = fsum(yv) / n
    dx = xv - mx
    dy = yv - my
    sxx = fsum(dx * dx)
    syy = fsum(dy * dy)
    if sxx <= 0.0 or syy <= 0.0:
        raise StatError("pearson: constant input vector")
    r = fsum(dx * dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return CorrelationResult(r, _t_two_sided_p(r, n), n)


def spearman(x, y) -> CorrelationResult:
    """Rank correlation; exact permutation p for n <= SPEARMAN_EXACT_MAX."""
    xv = _vector(x, "x")
    yv = _vector(y, "y")
    if xv.size != yv.size:
        raise StatError("spearman: length mismatch")
    n = xv.size
    if n < 3:
        raise StatError("spearman: need at least 3 points")
    rx = rank_transform(xv)
    ry = rank_transform(yv)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise StatError("spearman: constant input vector")
    rho = pearson(rx, ry).coefficient
    if n <= SPEARMAN_EXACT_MAX:
        p = _spearman_exact_pvalue(rx, ry)
    else:
        p = _t_two_sided_p(rho, n)
    return CorrelationResult(rho, p, n)


def _pairing_sum_distribution(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Null distribution of sum(a[i] * b[perm(i)]) over all pairings.

    a and b are small non-negative integer vectors.  Returns counts indexed by
    the sum value; the counts total n!.  Subset dynamic programme: position k
    of b is assigned to one unused element of a.
    """
    n = len(a)
    max_sum = int(np.dot(np.sort(a), np.sort(b)))  # rearrangement bound
    full = 1 << n
    dist = np.zeros((full, max_sum + 1), dtype=np.int64)
    dist[0, 0] = 1
    for mask in range(1, full):
        k = bin(mask).count("1") - 1
        bk = int(b[k])
        row = dist[mask]
        rest = mask
        while rest:
            bit = rest & -rest
            i = bit.bit_length() - 1
            shift = int(a[i]) * bk
            prev = dist[mask ^ bit]
            if shift == 0:
                row += prev
            else:
                row[shift:] += prev[:max_sum + 1 - shift]
            rest ^= bit
    return dist[full - 1]


def _spearman_exact_pvalue(rx: np.ndarray, ry: np.ndarray) -> float:
    """Exact two-sided P(|rho| >= |rho_obs|) over all n! pairings.

    With the rank means and variances fixed, rho is affine in
    T = sum(rx * ry_permuted), so the comparison reduces to integer
    arithmetic on U = n*4*T centred at sum(2*rx)*sum(2*ry).
    """
    n = len(rx)
    a = np.rint(2.0 * rx).astype(np.int64)   # doubled ranks are integers
    b = np.rint(2.0 * ry).astype(np.int64)
    center = int(a.sum()) * int(b.sum())
    u_obs = n * int(np.dot(a, b))
    d = abs(u_obs - center)
    dist = _pairing_sum_distribution(a, b)
    sums = np.arange(dist.size, dtype=np.int64)
    extreme = np.abs(n * sums - center) >= d
    count = int(dist[extreme].sum())
    total = int(dist.sum())   # == n!
    return count / total


# ---------------------------------------------------------------------------
# Wilcoxon rank-sum
# ---------------------------------------------------------------------------

def ranksum(a, b) -> RankSumResult:
    """Two-sided Wilcoxon rank-sum test.

    Exact enumeration of the subset null distribution when the pooled size is
    at most RANKSUM_EXACT_MAX; otherwise the normal approximation with tie
    correction.  The two-sided exact p doubles the smaller tail, capped at 1.
    """
    av = _vector(a, "a")
    bv = _vector(b, "b")
    if av.size == 0 or bv.size == 0:
        raise StatError("ranksum: empty sample")
    pooled = np.concatenate([av, bv])
    ranks = rank_transform(pooled)
    n_a, n_b = av.size, bv.size
    n = n_a + n_b
    w = fsum(ranks[:n_a])
    if n <= RANKSUM_EXACT_MAX:
        p = _ranksum_exact_pvalue(ranks, n_a, w)
        return RankSumResult(w, p, n_a, n_b, exact=True)
    mu = n_a * (n + 1) / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = fsum([float(t) ** 3 - float(t) for t in tie_counts])
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return RankSumResult(w, 1.0, n_a, n_b, exact=False)
    z = (w - mu) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return RankSumResult(w, p, n_a, n_b, exact=False)


def _ranksum_exact_pvalue(ranks: np.ndarray, n_a: int, w_obs: float) -> float:
    """Exact doubled-tail p for the rank-sum of n_a out of the pooled ranks."""
    r2 = np.rint(2.0 * ranks).astype(np.int64)   # doubled ranks are integers
    total_sum = int(r2.sum())
    dp = np.zeros((n_a + 1, total_sum + 1), dtype=np.int64)
    dp[0, 0] = 1
    for r in r2:
        r = int(r)
        for k in range(n_a, 0, -1):
            dp[k, r:] += dp[k - 1, :total_sum + 1 - r]
    dist = dp[n_a]
    w2 = int(round(2.0 * w_obs))
    c_le = int(dist[:w2 + 1].sum())
    c_ge = int(dist[w2:].sum())
    total = int(dist.sum())   # == C(n, n_a)
    return min(1.0, (2 * min(c_le, c_ge)) / total)


# ---------------------------------------------------------------------------
# least squares
# ---------------------------------------------------------------------------

def ols_fit(X, y, weights=None) -> RegressionResult:
    """(Weighted) least squares with intercept.

    Normal equations are accumulated with compensated summation; a
    rank-deficient design falls back to ridge (lambda=1e-8) and sets the
    degenerate flag.  R-squared is the weighted 1 - SSres/SStot, forced to 0
    when the response has no variance.
    """
    Xa = np.asarray(X, dtype=float)
    if Xa.ndim == 1:
        Xa = Xa[:, None]
    if Xa.ndim != 2:
        raise StatError("ols_fit: X must be 2-D")
    yv = _vector(y, "y")
    n, k = Xa.shape
    if yv.size != n:
        raise StatError("ols_fit: X and y length mismatch")
    if not np.all(np.isfinite(Xa)):
        raise StatError("ols_fit: X contains non-finite values")
    if n <= k:
        raise StatError(f"ols_fit: need more observations than features (n={n}, k={k})")
    if weights is None:
        wv = np.ones(n)
    else:
        wv = _vector(weights, "weights")
        if wv.size != n:
            raise StatError("ols_fit: weights length mismatch")
        if np.any(wv < 0):
            raise StatError("ols_fit: negative weights")
        if not np.any(wv > 0):
            raise StatError("ols_fit: all weights are zero")

    m = k + 1
    design = np.empty((n, m))
    design[:, 0] = 1.0
    design[:, 1:] = Xa

    gram = np.empty((m, m))
    rhs = np.empty(m)
    for i in range(m):
        di_w = design[:, i] * wv
        for j in range(i, m):
            gram[i, j] = gram[j, i] = fsum(di_w * design[:, j])
        rhs[i] = fsum(di_w * yv)

    degenerate = False
    sqrt_w = np.sqrt(wv)
    if np.linalg.matrix_rank(design * sqrt_w[:, None]) < m:
        degenerate = True
    if degenerate:
        beta = np.linalg.solve(gram + 1e-8 * np.eye(m), rhs)
    else:
        try:
            beta = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            degenerate = True
            beta = np.linalg.solve(gram + 1e-8 * np.eye(m), rhs)

    # column-by-column fitted values keep summation order fixed
    fitted = np.zeros(n)
    for j in range(m):
        fitted += beta[j] * design[:, j]
    resid = yv - fitted

    w_total = fsum(wv)
    y_bar = fsum(wv * yv) / w_total
    ss_res = fsum(wv * resid * resid)
    ss_tot = fsum(wv * (yv - y_bar) ** 2)
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 0.0
    r2 = max(0.0, min(1.0, r2))

    df = n - m
    p = np.full(m, np.nan)
    if df >= 1 and not degenerate:
        sigma2 = ss_res / df
        try:
            cov = sigma2 * np.linalg.inv(gram)
            se = np.sqrt(np.maximum(np.diag(cov), 0.0))
            for j in range(m):
                if se[j] > 0.0:
                    t = beta[j] / se[j]
                    p[j] = 2.0 * float(stdtr(df, -abs(t)))
                else:
                    p[j] = 1.0 if beta[j] == 0.0 else 0.0
        except np.linalg.LinAlgError:
            pass

    return RegressionResult(
        coefficients=beta[1:].copy(),
        intercept=float(beta[0]),
        r_squared=float(r2),
        p_values=p[1:].copy(),
        intercept_p=float(p[0]),
        n=n,
        degenerate=degenerate,
    )


def rank_regression(X, y, weights=None) -> RegressionResult:
    """Weighted OLS on rank-transformed response and feature columns.

    Weights are used as given (not ranked); slopes are on the rank scale and
    therefore invariant under strictly monotone transforms of the inputs.
    """
    Xa = np.asarray(X, dtype=float)
    if Xa.ndim == 1:
        Xa = Xa[:, None]
    ranked = np.column_stack([rank_transform(Xa[:, j]) for j in range(Xa.shape[1])])
    return ols_fit(ranked, rank_transform(y), weights)


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def permutation_pvalue_oracle(statistic_fn, a, b, max_n: int = 12,
                              scheme: str = "two_sample") -> float:
    """Exact two-sided p-value by full enumeration; test oracle only.

    scheme="two_sample": enumerate every split of the pooled values into
    groups of the original sizes and double the smaller tail of the
    statistic's null distribution (capped at 1).

    scheme="pairing": enumerate every permutation of b against a fixed a and
    return P(|T| >= |T_obs|).
    """
    a = list(a)
    b = list(b)
    if len(a) + len(b) > max_n:
        raise StatError(f"permutation oracle: {len(a) + len(b)} values exceed max_n={max_n}")
    if scheme == "two_sample":
        pooled = a + b
        n_a = len(a)
        t_obs = statistic_fn(a, b)
        eps = 1e-9 * (1.0 + abs(t_obs))
        c_le = c_ge = total = 0
        indices = range(len(pooled))
        for comb in itertools.combinations(indices, n_a):
            chosen = set(comb)
            aa = [pooled[i] for i in comb]
            bb = [pooled[i] for i in indices if i not in chosen]
            t = statistic_fn(aa, bb)
            total += 1
            if t <= t_obs + eps:
                c_le += 1
            if t >= t_obs - eps:
                c_ge += 1
        return min(1.0, (2 * min(c_le, c_ge)) / total)
    if scheme == "pairing":
        t_obs = statistic_fn(a, b)
        eps = 1e-9 * (1.0 + abs(t_obs))
        count = total = 0
        for perm in itertools.permutations(b):
            t = statistic_fn(a, perm)
            total += 1
            if abs(t) >= abs(t_obs) - eps:
                count += 1
        return count / total
    raise StatError(f"permutation oracle: unknown scheme '{scheme}'")
