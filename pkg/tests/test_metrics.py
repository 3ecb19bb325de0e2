import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal, stats

from cofindiff.baselines import GarchParams, simulate_garch
from cofindiff.market_data import ConditionPair
from cofindiff.metrics import (ConditionGrid, MetricError, autocorrelation, condition_mae, diversity_report,
                               dtw_distance, euclidean_distance, fisher_kurtosis, hill_index, pairwise_distances,
                               stylized_fact_report)


def naive_kurtosis(r):
    T = len(r)
    mean = sum(r) / T
    s = math.sqrt(sum((x - mean) ** 2 for x in r) / (T - 1))
    m4 = sum(((x - mean) / s) ** 4 for x in r)
    return T * (T + 1) / ((T - 1) * (T - 2) * (T - 3)) * m4 - 3 * (T - 1) ** 2 / ((T - 2) * (T - 3))


def naive_acorr(x, tau):
    mean = sum(x) / len(x)
    num = sum((x[t] - mean) * (x[t + tau] - mean) for t in range(len(x) - tau))
    return num / sum((v - mean) ** 2 for v in x)


def naive_hill(x, k):
    s = sorted(x)
    threshold = s[len(s) - k]
    return 1.0 / (sum(math.log(v / threshold) for v in s[len(s) - k:]) / k)


def brute_dtw(a, b):
    """Exponential-time recursion over all monotone warping paths."""
    def rec(i, j):
        c = abs(a[i] - b[j])
        if i == 0 and j == 0:
            return c
        options = []
        if i > 0:
            options.append(rec(i - 1, j))
        if j > 0:
            options.append(rec(i, j - 1))
        if i > 0 and j > 0:
            options.append(rec(i - 1, j - 1))
        return c + min(options)
    return rec(len(a) - 1, len(b) - 1)


# ---- kurtosis


def test_kurtosis_matches_scipy_and_naive():
    x = np.random.default_rng(0).standard_t(6, size=300)
    assert fisher_kurtosis(x) == pytest.approx(naive_kurtosis(list(x)), abs=1e-12)
    assert fisher_kurtosis(x) == pytest.approx(stats.kurtosis(x, fisher=True, bias=False), abs=1e-10)


def test_kurtosis_normal_and_student():
    rng = np.random.default_rng(1)
    assert abs(fisher_kurtosis(rng.standard_normal(100_000))) < 0.1
    # excess kurtosis of Student-t is 6 / (df - 4); df = 10 keeps the estimator's variance finite
    assert fisher_kurtosis(rng.standard_t(10, size=1_000_000)) == pytest.approx(1.0, abs=0.1)
    assert fisher_kurtosis(rng.laplace(size=1_000_000)) == pytest.approx(3.0, abs=0.1)


def test_kurtosis_errors():
    with pytest.raises(MetricError):
        fisher_kurtosis([1.0, 1.0, 1.0, 1.0])
    with pytest.raises(MetricError):
        fisher_kurtosis([1.0, 2.0, 3.0])


def test_kurtosis_vectorised_rows():
    x = np.random.default_rng(2).standard_normal((5, 50))
    np.testing.assert_allclose(fisher_kurtosis(x), [fisher_kurtosis(row) for row in x], atol=1e-14)


# ---- Hill


def test_hill_hand_example():
    x = np.concatenate([np.linspace(0.1, 0.5, 37), np.exp([1.0, 2.0, 3.0])])
    assert hill_index(x, k=2) == pytest.approx(2.0, abs=1e-12)


def test_hill_default_k_is_ceil_five_percent():
    x = np.random.default_rng(3).pareto(3.0, size=101) + 1
    assert hill_index(x) == pytest.approx(naive_hill(list(x), 6), abs=1e-9)


def test_hill_pareto_consistency():
    x = np.random.default_rng(4).pareto(3.0, size=450_000) + 1
    assert hill_index(x) == pytest.approx(3.0, abs=0.15)


def test_hill_duplicate_threshold_allowed():
    x = np.concatenate([np.ones(18), [2.0, 2.0]])
    assert hill_index(np.append(x, 4.0), k=3) == pytest.approx(3 / math.log(2))


def test_hill_errors():
    with pytest.raises(MetricError):
        hill_index(np.ones(10))
    with pytest.raises(MetricError, match="zero"):
        hill_index(np.zeros(40))
    with pytest.raises(MetricError):
        hill_index(np.arange(40.0), k=1)


# ---- autocorrelation


def test_acorr_iid_and_ar1():
    rng = np.random.default_rng(5)
    assert abs(autocorrelation(rng.standard_normal(10_000), 1)) < 0.05
    ar = signal.lfilter([1.0], [1.0, -0.5], rng.standard_normal(1_000_000))
    assert autocorrelation(ar, 1) == pytest.approx(0.5, abs=0.01)


def test_acorr_errors():
    with pytest.raises(MetricError):
        autocorrelation(np.full(50, 3.0), 1)
    with pytest.raises(MetricError):
        autocorrelation(np.arange(5.0), 5)


def test_acorr_matches_naive():
    x = np.random.default_rng(6).standard_normal(300)
    for tau in (1, 5, 10, 20, 30):
        assert autocorrelation(x, tau) == pytest.approx(naive_acorr(list(x), tau), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 60, elements=st.floats(-5, 5)), st.floats(0.1, 100), st.floats(-10, 10))
def test_affine_invariance(x, a, b):
    if np.std(x) < 1e-3:
        return
    assert fisher_kurtosis(a * x + b) == pytest.approx(fisher_kurtosis(x), rel=1e-7, abs=1e-7)
    assert autocorrelation(a * x + b, 3) == pytest.approx(autocorrelation(x, 3), rel=1e-7, abs=1e-7)
    ax = np.abs(x)
    if np.sort(ax)[-3] > 1e-3 and len(set(np.sort(ax)[-3:])) > 1:
        assert hill_index(a * ax, k=3) == pytest.approx(hill_index(ax, k=3), rel=1e-7)


# ---- stylized facts


def test_report_requires_thirty_days():
    with pytest.raises(MetricError):
        stylized_fact_report(np.random.default_rng(0).standard_normal((29, 300)))


def test_report_gbm_like_has_no_check_marks():
    rep = stylized_fact_report(np.random.default_rng(7).standard_normal((300, 300)))
    assert not rep.verdict_fat_tail
    assert not rep.verdict_vol_clustering
    assert set(rep.acorr) == {1, 5, 10, 20, 30}
    assert rep.n_days == 300


def test_report_heavy_tailed_clustered_corpus():
    # GARCH driven by unit-variance Student-t(4) shocks
    rng = np.random.default_rng(8)
    n, T, df = 400, 300, 4.0
    omega, lam, nu = 0.02, 0.03, 0.95
    shocks = rng.standard_t(df, size=(n, T)) * math.sqrt((df - 2) / df)
    var = np.full(n, omega / (1 - lam - nu))
    r = np.empty((n, T))
    for t in range(T):
        r[:, t] = np.sqrt(var) * shocks[:, t]
        var = omega + lam * r[:, t] ** 2 + nu * var
    rep = stylized_fact_report(r)
    assert rep.kurtosis_mean > 0
    assert 2.8 <= rep.hill <= 3.4
    assert rep.verdict_fat_tail
    assert rep.verdict_vol_clustering


def test_report_verdict_rules_follow_values():
    r = simulate_garch(GarchParams(0.1, 0.1, 0.8), 300, seed=9, n_paths=100)
    rep = stylized_fact_report(r)
    assert rep.verdict_fat_tail == (rep.kurtosis_mean > 0 and 2.8 <= rep.hill <= 3.4)
    assert rep.verdict_vol_clustering == all(m > 2 * s / 10 for m, s in rep.acorr.values())
    assert rep.to_dict()["acorr"]["1"] == list(rep.acorr[1])


# ---- condition MAE


def exact_series(c, T=300):
    """A series hitting (trend, rv) exactly: constant drift plus a zero-sum +/- pattern."""
    m = c.trend / T
    extra = c.rv - T * m * m
    a = math.sqrt(max(extra, 0.0) / T)
    return m + a * np.where(np.arange(T) % 2 == 0, 1.0, -1.0)


def echo_generator(conds, count, seed):
    return np.stack([np.stack([exact_series(c)] * count) for c in conds])


def test_mae_echo_generator_is_zero():
    grid = ConditionGrid()
    res = condition_mae(echo_generator, grid, per_point=2)
    assert res.trend_mae == pytest.approx(0.0, abs=1e-10)
    assert res.rv_mae == pytest.approx(0.0, abs=1e-9)
    assert len(res.scatter) == 180


def test_mae_zero_generator_equals_baseline():
    res = condition_mae(lambda conds, count, seed: np.zeros((len(conds), count, 300)), ConditionGrid())
    assert res.trend_mae == pytest.approx(np.mean(np.abs(np.linspace(-10, 10, 9))))
    assert (res.trend_mae, res.rv_mae) == pytest.approx(res.baseline())
    assert res.rv_mae == pytest.approx(55.0)


def test_mae_skips_failing_points(tmp_path):
    def flaky(conds, count, seed):
        if len(conds) > 1 or conds[0].trend < 0:
            raise RuntimeError("boom")
        return echo_generator(conds, count, seed)

    res = condition_mae(flaky, [ConditionPair(-1, 5), ConditionPair(2, 5)])
    assert len(res.skipped) == 1 and res.skipped[0][0] == -1
    assert res.trend_mae == pytest.approx(0.0, abs=1e-12)
    res.write_scatter_csv(tmp_path / "s.csv")
    assert np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1).shape == (4,)


def test_grid_disjointness():
    grid = ConditionGrid(trends=(1.0,), rvs=(2.0, 3.0))
    grid.check_disjoint([ConditionPair(1.0, 2.5)])
    with pytest.raises(ValueError):
        grid.check_disjoint([ConditionPair(1.0, 3.0)])


# ---- DTW and diversity


def test_dtw_examples():
    assert dtw_distance([0, 0], [1, 1]) == 2.0
    assert dtw_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert dtw_distance([0, 1, 2], [0, 2]) == 1.0
    with pytest.raises(MetricError):
        dtw_distance([], [1.0])


def test_dtw_matches_brute_force_all_short_lengths():
    rng = np.random.default_rng(10)
    for n in range(1, 11):
        for m in (1, max(1, n - 3), n):
            a, b = rng.standard_normal(n), rng.standard_normal(m)
            assert dtw_distance(a, b) == pytest.approx(brute_dtw(list(a), list(b)), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)),
       arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)))
def test_dtw_properties(a, b):
    d = dtw_distance(a, b)
    assert d >= 0
    assert d == pytest.approx(dtw_distance(b, a), abs=1e-9)
    assert dtw_distance(a, a) == 0
    if len(a) == len(b):
        assert d <= np.abs(a - b).sum() + 1e-9


def test_euclidean_length_mismatch():
    assert euclidean_distance([0, 3], [4, 0]) == 5.0
    with pytest.raises(MetricError):
        euclidean_distance([1.0], [1.0, 2.0])
    with pytest.raises(MetricError):
        diversity_report([[1.0, 2.0], [1.0]])


def test_diversity_three_samples():
    x = np.random.default_rng(11).standard_normal((3, 20))
    rep = diversity_report(x)
    pairs = list(combinations(range(3), 2))
    d = [dtw_distance(x[i], x[j]) for i, j in pairs]
    e = [euclidean_distance(x[i], x[j]) for i, j in pairs]
    assert rep.n_pairs == 3
    assert rep.dtw == pytest.approx((np.mean(d), np.std(d)), abs=1e-12)
    assert rep.euclidean == pytest.approx((np.mean(e), np.std(e)), abs=1e-12)


def test_diversity_identical_samples():
    rep = diversity_report(np.tile(np.random.default_rng(12).standard_normal(30), (10, 1)))
    assert rep.n_pairs == 45
    assert rep.dtw == (0.0, 0.0) and rep.euclidean == (0.0, 0.0)


def test_pairwise_chunking_is_invisible():
    x = np.random.default_rng(13).standard_normal((12, 15))
    a = pairwise_distances(x, chunk=7)
    b = pairwise_distances(x, chunk=1000)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
