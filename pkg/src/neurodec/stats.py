"""Paired and rank statistics used to compare decoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ContractViolation

EXACT_MAX_N = 25


@dataclass
class TestResult:
    statistic: float
    pvalue: float
    method: str = ""


def _signed_rank_null(ranks2: np.ndarray) -> np.ndarray:
    """Counts of each attainable 2*W+ over all 2^n sign patterns (ranks doubled to integers)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b=None) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are discarded. For up to 25 non-zero differences the
    p-value comes from the exact permutation distribution of the signed-rank
    sum (mid-ranks for ties are handled exactly); above that a normal
    approximation with tie correction is used.
    """
    d = np.asarray(a, dtype=float)
    if b is not None:
        d = d - np.asarray(b, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ContractViolation("all paired differences are zero; Wilcoxon test undefined")
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        ranks2 = np.round(2 * ranks).astype(np.int64)
        counts = _signed_rank_null(ranks2)
        w2 = int(round(2 * w_plus))
        total = 2**n
        lower = sum(counts[: w2 + 1])
        upper = sum(counts[w2:])
        p = min(1.0, 2 * float(min(lower, upper)) / total)
        return TestResult(w_plus, p, "exact")

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (w_plus - mean) / np.sqrt(var)
    p = float(min(1.0, 2 * sps.norm.sf(abs(z))))
    return TestResult(w_plus, p, "normal")


def spearman(x, y) -> TestResult:
    """Spearman rank correlation with a two-sided t-distribution p-value."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    n = x.size
    if n < 3 or y.size != n:
        raise ContractViolation("spearman needs at least 3 paired values")
    rx, ry = sps.rankdata(x), sps.rankdata(y)
    rho = float(np.corrcoef(rx, ry)[0, 1])
    if abs(rho) >= 1.0:
        return TestResult(float(np.sign(rho)), 0.0, "t")
    t = rho * np.sqrt((n - 2) / (1 - rho**2))
    return TestResult(rho, float(2 * sps.t.sf(abs(t), n - 2)), "t")


def welch_ttest(a, b) -> TestResult:
    """Two-sided t-test without assuming equal variances."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ContractViolation("welch t-test needs at least 2 values per group")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    t = (a.mean() - b.mean()) / np.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return TestResult(float(t), float(2 * sps.t.sf(abs(t), df)), "welch")


def stats_tests(a, b) -> dict[str, TestResult]:
    """All three comparisons on paired samples ``a`` and ``b``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < 5:
        raise ContractViolation("Wilcoxon needs n >= 5 pairs")
    return {"wilcoxon": wilcoxon_signed_rank(a, b), "spearman": spearman(a, b), "welch": welch_ttest(a, b)}
