import numpy as np
import pytest
from scipy import stats as sps

from neurodec.errors import ContractViolation
from neurodec.stats import spearman, stats_tests, welch_ttest, wilcoxon_signed_rank

from _oracles import wilcoxon_enumeration


def test_constant_shift_extreme_p():
    b = np.arange(10.0)
    res = wilcoxon_signed_rank(b + 0.5 + 0.01 * b, b)
    assert res.statistic == 55
    assert res.pvalue == pytest.approx(2 * 2.0**-10, abs=1e-15)


@pytest.mark.parametrize("seed", range(6))
def test_exact_matches_enumeration(seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal(12), r.standard_normal(12)
    assert abs(wilcoxon_signed_rank(a, b).pvalue - wilcoxon_enumeration(a - b)) < 1e-10


def test_exact_with_ties_and_zeros():
    d = np.array([1, -1, 2, 2, -3, 0, 4, 1, -2, 5])
    assert abs(wilcoxon_signed_rank(d).pvalue - wilcoxon_enumeration(d)) < 1e-10


def test_exact_agrees_with_scipy_without_ties(rng):
    d = rng.standard_normal(15)
    ref = sps.wilcoxon(d, method="exact").pvalue
    assert wilcoxon_signed_rank(d).pvalue == pytest.approx(ref, abs=1e-12)


def test_normal_approximation_above_25(rng):
    d = np.round(rng.standard_normal(40), 1) + 0.2
    res = wilcoxon_signed_rank(d)
    assert res.method == "normal"
    ref = sps.wilcoxon(d, method="approx", correction=False, zero_method="wilcox").pvalue
    assert res.pvalue == pytest.approx(ref, rel=1e-9)


def test_all_zero_differences_error():
    with pytest.raises(ContractViolation):
        wilcoxon_signed_rank(np.ones(6), np.ones(6))


def test_spearman(rng):
    x = rng.standard_normal(20)
    assert spearman(x, np.exp(x)).statistic == 1.0
    y = x + rng.standard_normal(20)
    ref = sps.spearmanr(x, y)
    res = spearman(x, y)
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert res.pvalue == pytest.approx(ref.pvalue, rel=1e-9)


def test_welch(rng):
    a, b = rng.standard_normal(12), rng.standard_normal(9) + 0.5
    ref = sps.ttest_ind(a, b, equal_var=False)
    res = welch_ttest(a, b)
    assert res.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert res.pvalue == pytest.approx(ref.pvalue, rel=1e-9)


def test_stats_tests_bundle(rng):
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    out = stats_tests(a, b)
    assert set(out) == {"wilcoxon", "spearman", "welch"}
    with pytest.raises(ContractViolation):
        stats_tests(a[:4], b[:4])
