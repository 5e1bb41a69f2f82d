"""Exact and Monte-Carlo statistics for the lag audit.

Everything here is pure and reproducible from explicit seeds.  Degenerate
inputs (constant vectors, all-zero difference sets) raise
``UndefinedStatisticError`` rather than silently returning zero: the audit
layers treat "undefined" and "no effect" very differently.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.special import gammaincc, ndtr

from .errors import UndefinedStatisticError


def rank_average(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their rank range."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _centered_ranks(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Centered average ranks and their sum of squares."""
    r = rank_average(x)
    r = r - r.mean()
    ss = float(np.sum(r * r))
    if ss == 0.0:
        raise UndefinedStatisticError("rank correlation of a constant vector")
    return r, ss


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties, in [-1, 1]."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ValueError("spearman needs equal-length vectors")
    if x.size < 3:
        raise ValueError("spearman needs n >= 3")
    rx, ssx = _centered_ranks(x)
    ry, ssy = _centered_ranks(y)
    # sqrt of the product (not product of sqrts) keeps perfectly
    # monotone inputs at exactly +/-1
    return float(np.clip(np.dot(rx, ry) / math.sqrt(ssx * ssy), -1.0, 1.0))


@dataclass
class PermutationTest:
    """Entity-label permutation test of |Spearman rho|."""

    observed_rho: float
    b: int
    p_value: float
    rng_seed: int | None
    null_abs_rhos: np.ndarray = field(repr=False)


def permutation_p(k_star, xi, b: int = 999, seed: int | None = 0,
                  exhaustive: bool = False) -> PermutationTest:
    """Permutation p-value for |Spearman(k_star, xi)|.

    Only the xi labels are permuted; k_star stays fixed.  With
    ``exhaustive=True`` every non-identity permutation of xi is used
    instead of ``b`` seeded draws (feasible for small n only).
    p = (1 + #{|rho_b| >= |rho_obs|}) / (B + 1), so p >= 1/(B+1).
    """
    x = np.asarray(k_star, dtype=np.float64).reshape(-1)
    y = np.asarray(xi, dtype=np.float64).reshape(-1)
    n = x.size
    if n != y.size or n < 3:
        raise ValueError("permutation test needs equal-length vectors, n >= 3")
    rx, ssx = _centered_ranks(x)
    ry, ssy = _centered_ranks(y)
    denom = math.sqrt(ssx * ssy)
    rho_obs = float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))

    if exhaustive:
        idx = np.array([p for p in permutations(range(n))
                        if p != tuple(range(n))], dtype=np.intp)
        seed_used = None
    else:
        if b < 1:
            raise ValueError("permutation count must be >= 1")
        rng = np.random.Generator(np.random.PCG64(seed))
        idx = np.empty((b, n), dtype=np.intp)
        for row in range(b):
            idx[row] = rng.permutation(n)
        seed_used = seed
    null = (ry[idx] @ rx) / denom
    n_perms = idx.shape[0]
    hits = int(np.sum(np.abs(null) >= abs(rho_obs)))
    p = (1.0 + hits) / (n_perms + 1.0)
    return PermutationTest(observed_rho=rho_obs, b=n_perms, p_value=p,
                           rng_seed=seed_used, null_abs_rhos=np.abs(null))


def fisher_combine(pvals, zero_floor: float | None = None) -> float:
    """Fisher's method: -2 sum(ln p) against chi-square with 2m dof.

    Permutation p-values are never 0 by construction; if a 0 (or
    negative) slips in and ``zero_floor`` is given, it is clamped there
    with a warning, otherwise it is an error.
    """
    ps = [float(p) for p in np.asarray(pvals, dtype=np.float64).reshape(-1)]
    if not ps:
        raise ValueError("fisher_combine needs at least one p-value")
    cleaned = []
    for p in ps:
        if p <= 0.0:
            if zero_floor is None:
                raise ValueError("non-positive p-value with no floor configured")
            warnings.warn("p-value <= 0 clamped to floor %g" % zero_floor)
            p = zero_floor
        if p > 1.0:
            raise ValueError(f"p-value {p} > 1")
        cleaned.append(p)
    stat = -2.0 * sum(math.log(p) for p in cleaned)
    m = len(cleaned)
    # chi-square upper tail with 2m dof = regularized upper incomplete gamma
    return float(gammaincc(m, stat / 2.0))


@dataclass
class WilcoxonResult:
    w: float
    p_value: float
    mean_diff: float
    median_diff: float
    n_nonzero: int
    exact: bool


def _signed_rank_counts(double_ranks: np.ndarray) -> np.ndarray:
    """Null distribution of 2*W+ over all 2^n sign assignments.

    counts[s] = number of assignments with doubled positive-rank sum s;
    computed by polynomial product, equivalent to full enumeration.
    """
    total = int(double_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for d in double_ranks:
        shifted = np.zeros_like(counts)
        shifted[d:] = counts[:counts.size - d]
        counts = counts + shifted
    return counts


def wilcoxon_paired(a, b) -> WilcoxonResult:
    """Two-sided paired signed-rank test.

    Zero differences are dropped; ties among |diff| get average ranks.
    Exact null enumeration for n <= 25 nonzero pairs (the distribution
    of W+ over all 2^n sign assignments), normal approximation with tie
    and continuity corrections beyond.  W = min(W+, W-).
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError("paired test needs equal-length vectors")
    diffs = a - b
    mean_diff = float(np.mean(diffs))
    median_diff = float(np.median(diffs))
    nz = diffs[diffs != 0.0]
    n = nz.size
    if n == 0:
        raise UndefinedStatisticError("all paired differences are zero")
    if n < 5:
        raise UndefinedStatisticError(
            f"only {n} nonzero differences; need >= 5")
    ranks = rank_average(np.abs(nz))
    w_pos = float(np.sum(ranks[nz > 0]))
    w_neg = float(np.sum(ranks[nz < 0]))
    w = min(w_pos, w_neg)
    total = w_pos + w_neg

    if n <= 25:
        dr = np.rint(2.0 * ranks).astype(np.int64)
        counts = _signed_rank_counts(dr)
        w2 = int(round(2.0 * w))
        d_total = int(dr.sum())
        lo = float(np.sum(counts[:w2 + 1]))
        hi = float(np.sum(counts[d_total - w2:]))
        p = min(1.0, (lo + hi) / (2.0 ** n))
        exact = True
    else:
        mu = n * (n + 1) / 4.0
        tie_groups = np.unique(np.abs(nz), return_counts=True)[1]
        sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - float(
            np.sum(tie_groups ** 3 - tie_groups)) / 48.0
        z = (w - mu + 0.5) / math.sqrt(sigma2)
        p = min(1.0, 2.0 * float(ndtr(z)))
        exact = False
    return WilcoxonResult(w=w, p_value=p, mean_diff=mean_diff,
                          median_diff=median_diff, n_nonzero=n, exact=exact)


@dataclass
class ForecastMetrics:
    mse: float
    mae: float
    r2: float | None


def forecast_metrics(y_true, y_pred) -> ForecastMetrics:
    """Pooled MSE / MAE / R^2; R^2 is None when y_true is constant."""
    yt = np.asarray(y_true, dtype=np.float64).reshape(-1)
    yp = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if yt.size != yp.size or yt.size < 2:
        raise ValueError("forecast metrics need equal-length vectors, n >= 2")
    err = yp - yt
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((yt - yt.mean()) ** 2))
    if ss_tot == 0.0:
        return ForecastMetrics(mse=mse, mae=mae, r2=None)
    r2 = 1.0 - float(np.sum(err * err)) / ss_tot
    return ForecastMetrics(mse=mse, mae=mae, r2=r2)


@dataclass
class L2Summary:
    """Cross-seed aggregation of one stratifier's alignment evidence."""

    mean_abs_rho: float
    median_rho: float
    reject_share: float
    fisher_p: float
    n_seeds: int


def summarize_l2(rhos, pvals, alpha: float = 0.05,
                 zero_floor: float | None = None) -> L2Summary:
    rhos = np.asarray(rhos, dtype=np.float64).reshape(-1)
    pvals = np.asarray(pvals, dtype=np.float64).reshape(-1)
    if rhos.size == 0 or rhos.size != pvals.size:
        raise ValueError("need matching non-empty rho / p vectors")
    return L2Summary(
        mean_abs_rho=float(np.mean(np.abs(rhos))),
        median_rho=float(np.median(rhos)),
        reject_share=float(np.mean(pvals < alpha)),
        fisher_p=fisher_combine(pvals, zero_floor=zero_floor),
        n_seeds=int(rhos.size),
    )
