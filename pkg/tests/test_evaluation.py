"""Metric and test-statistic checks against closed forms and null oracles."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2, norm

from genssm.evaluation import (
    BacktestReport,
    SampleSet,
    build_backtest_report,
    christoffersen_tests,
    energy_distance,
    jarque_bera,
    kupiec_lr,
    ljung_box,
    mean_diff,
    mmd2_gaussian,
    rmse_and_coverage,
    std_diff,
    var_es_estimate,
    wasserstein1,
    wasserstein1_to_normal,
    write_accuracy_table,
    write_distance_table,
)


# ---------------------------------------------------------------------------
# Wasserstein


def test_w1_point_masses():
    assert wasserstein1([0.0], [1.0]) == 1.0


def test_w1_identity():
    x = np.random.default_rng(0).normal(size=256)
    assert wasserstein1(x, x.copy()) == 0.0


def test_w1_gaussian_shift():
    rng = np.random.default_rng(1)
    a = rng.normal(0.0, 1.0, 100_000)
    b = rng.normal(0.5, 1.0, 100_000)
    assert wasserstein1(a, b) == pytest.approx(0.5, abs=0.02)


def test_w1_unequal_sizes_interpolated():
    rng = np.random.default_rng(2)
    a = rng.normal(0.0, 1.0, 50_000)
    b = rng.normal(1.0, 1.0, 30_001)
    assert wasserstein1(a, b) == pytest.approx(1.0, abs=0.03)


def test_w1_to_normal_reference():
    rng = np.random.default_rng(3)
    a = rng.normal(2.0, 3.0, 200_000)
    assert wasserstein1_to_normal(a, 2.0, 3.0) < 0.03
    assert wasserstein1_to_normal(a, 2.5, 3.0) == pytest.approx(0.5, abs=0.04)


def test_w1_empty_errors():
    with pytest.raises(ValueError):
        wasserstein1([], [1.0])


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet(np.array([np.nan]))
    s = SampleSet(np.array([3.0, 1.0, 2.0]))
    assert np.array_equal(s.sorted, [1.0, 2.0, 3.0])
    assert s.n == 3


# ---------------------------------------------------------------------------
# MMD and energy distance


def test_mmd_identical_samples():
    x = np.random.default_rng(4).normal(size=1000)
    assert abs(mmd2_gaussian(x, x.copy())) < 1e-3


def test_mmd_point_masses_biased():
    assert mmd2_gaussian([0.0], [10.0]) == pytest.approx(
        2.0 * (1.0 - np.exp(-50.0)), abs=1e-12)


def test_mmd_unbiased_singleton_errors():
    with pytest.raises(ValueError):
        mmd2_gaussian([0.0], [10.0], unbiased=True)


def test_mmd_null_within_permutation_band():
    rng = np.random.default_rng(5)
    a = rng.normal(size=1000)
    b = rng.normal(size=1000)
    observed = mmd2_gaussian(a, b, unbiased=True)
    pooled = np.concatenate([a, b])
    null = np.empty(200)
    for i in range(200):
        rng.shuffle(pooled)
        null[i] = mmd2_gaussian(pooled[:1000], pooled[1000:], unbiased=True)
    assert abs(observed) < 3.0 * null.std()


def test_energy_point_masses():
    assert energy_distance([0.0], [1.0]) == pytest.approx(2.0)


def test_energy_scale_equivariance():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=64), rng.normal(1.0, 2.0, size=80)
    base = energy_distance(a, b)
    assert energy_distance(-2.5 * a, -2.5 * b) == pytest.approx(2.5 * base,
                                                               rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=40)
    b = rng.normal(rng.uniform(-1, 1), 1.0, size=40)
    assert wasserstein1(a, b) == wasserstein1(b, a)
    assert wasserstein1(a, b) >= 0.0
    assert energy_distance(a, b) == pytest.approx(energy_distance(b, a))
    assert energy_distance(a, b) >= 0.0
    c = rng.uniform(-5, 5)
    assert wasserstein1(a + c, b + c) == pytest.approx(wasserstein1(a, b),
                                                      abs=1e-12)


# ---------------------------------------------------------------------------
# RMSE and coverage


def test_coverage_point_masses():
    truth = np.array([0.3, -0.7, 1.1])
    draws = np.tile(truth[:, None], (1, 50))
    rmse, cov = rmse_and_coverage(truth, draws)
    assert rmse == pytest.approx(0.0, abs=1e-12)
    assert cov == {0.75: 1.0, 0.90: 1.0, 0.95: 1.0}


def test_coverage_exact_calibration():
    # truth and draws share the same per-t law, so nominal = actual coverage
    rng = np.random.default_rng(7)
    centers = rng.normal(size=1000)
    truth = centers + rng.normal(size=1000)
    draws = centers[:, None] + rng.normal(size=(1000, 1000))
    rmse, cov = rmse_and_coverage(truth, draws)
    assert cov[0.95] == pytest.approx(0.95, abs=0.02)
    # posterior mean misses truth by the unit posterior sd
    assert rmse == pytest.approx(1.0, abs=0.05)


def test_coverage_monotone_in_level():
    rng = np.random.default_rng(8)
    truth = rng.normal(size=200)
    draws = rng.normal(size=(200, 400))
    _, cov = rmse_and_coverage(truth, draws, levels=(0.5, 0.75, 0.9, 0.99))
    vals = [cov[l] for l in (0.5, 0.75, 0.9, 0.99)]
    assert vals == sorted(vals)


def test_coverage_misaligned_errors():
    with pytest.raises(ValueError):
        rmse_and_coverage(np.zeros(3), np.zeros((4, 10)))


# ---------------------------------------------------------------------------
# VaR / ES


def test_var_es_order_statistics():
    draws = np.arange(-3.0, 7.0)
    var, es = var_es_estimate(draws, 0.1)
    assert var == -3.0
    assert es == -3.0


def test_var_es_gaussian_tail():
    draws = np.random.default_rng(9).normal(size=100_000)
    var, es = var_es_estimate(draws, 0.05)
    assert var == pytest.approx(-1.645, abs=0.02)
    assert es == pytest.approx(-norm.pdf(norm.ppf(0.05)) / 0.05, abs=0.03)


def test_var_es_insufficient_draws():
    with pytest.raises(ValueError):
        var_es_estimate(np.zeros(500), 0.001)


def test_var_es_per_time():
    rng = np.random.default_rng(10)
    draws = rng.normal(size=(5, 2000))
    var, es = var_es_estimate(draws, 0.05)
    assert var.shape == es.shape == (5,)
    assert np.all(es <= var)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.49))
def test_es_never_above_var(seed, q):
    draws = np.random.default_rng(seed).normal(size=300)
    var, es = var_es_estimate(draws, q)
    assert es <= var


# ---------------------------------------------------------------------------
# backtest statistics


def test_kupiec_exact_rate_is_zero():
    assert kupiec_lr(10, 1000, 0.01) == 0.0
    assert kupiec_lr(0, 100, 0.0) == 0.0


def test_kupiec_reference_values():
    assert 4.0 < kupiec_lr(17, 1000, 0.01) < 4.2
    assert 0.08 < kupiec_lr(9, 1000, 0.01) < 0.13


def test_kupiec_validation():
    with pytest.raises(ValueError):
        kupiec_lr(5, 4, 0.1)


def test_christoffersen_balanced_transitions():
    # all four transition counts equal 25, so the Markov fit adds nothing
    hits = np.append(np.tile([0, 1, 1, 0], 25), 0)
    lr_ind, lr_cc = christoffersen_tests(hits, 0.5)
    assert lr_ind == pytest.approx(0.0, abs=1e-9)
    assert lr_cc == pytest.approx(kupiec_lr(50, 101, 0.5) + lr_ind, abs=1e-9)


def test_christoffersen_clustered_breaches():
    hits = np.array([1] * 10 + [0] * 90)
    lr_ind, lr_cc = christoffersen_tests(hits, 0.01)
    assert lr_ind > 5.0
    assert lr_cc == pytest.approx(kupiec_lr(10, 100, 0.01) + lr_ind, abs=1e-9)


def test_christoffersen_validation():
    with pytest.raises(ValueError):
        christoffersen_tests([1], 0.1)
    with pytest.raises(ValueError):
        christoffersen_tests([0, 2, 1], 0.1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=200),
       st.floats(0.01, 0.99))
def test_lr_cc_additivity(hits, q):
    lr_ind, lr_cc = christoffersen_tests(hits, q)
    lr_uc = kupiec_lr(sum(hits), len(hits), q)
    assert abs(lr_cc - (lr_uc + lr_ind)) < 1e-9


def test_ljung_box_null_distribution():
    y = np.random.default_rng(11).normal(size=10_000)
    stat = ljung_box(y, 20)
    lo, hi = chi2.ppf([0.005, 0.995], 20)
    assert lo < stat < hi


def test_ljung_box_trend_rejects():
    assert ljung_box(np.arange(100.0), 20) > 1e3


def test_ljung_box_ar1_rejects():
    rng = np.random.default_rng(12)
    y = np.empty(1000)
    y[0] = rng.normal()
    for t in range(1, 1000):
        y[t] = 0.9 * y[t - 1] + rng.normal()
    assert ljung_box(y, 20) > chi2.ppf(0.999, 20)


def test_ljung_box_constant_series():
    assert ljung_box(np.full(100, 2.0), 20) == 0.0


def test_ljung_box_length_check():
    with pytest.raises(ValueError):
        ljung_box(np.zeros(20), 20)


def test_jarque_bera_null_distribution():
    y = np.random.default_rng(13).normal(size=10_000)
    stat = jarque_bera(y)
    assert stat < chi2.ppf(0.995, 2)


def test_jarque_bera_symmetric_sample():
    x = np.random.default_rng(14).normal(size=500) ** 3
    y = np.concatenate([x, -x])
    centred = y - y.mean()
    m2 = np.mean(centred ** 2)
    kurt = np.mean(centred ** 4) / m2 ** 2
    expected = len(y) / 6.0 * (kurt - 3.0) ** 2 / 4.0
    assert jarque_bera(y) == pytest.approx(expected, rel=1e-9)


def test_jarque_bera_cauchy_rejects():
    y = np.random.default_rng(15).standard_cauchy(1000)
    assert jarque_bera(y) > 100.0


def test_jarque_bera_validation():
    with pytest.raises(ValueError):
        jarque_bera(np.zeros(5))
    with pytest.raises(ValueError):
        jarque_bera(np.full(100, 1.0))


def test_mean_std_diffs():
    a = np.array([0.0, 2.0])
    b = np.array([1.0, 3.0, 5.0])
    assert mean_diff(a, b) == pytest.approx(2.0)
    assert std_diff(a, b) == pytest.approx(abs(np.std(a, ddof=1) - np.std(b, ddof=1)))


# ---------------------------------------------------------------------------
# backtest report and table output


def test_backtest_report_assembly():
    hits = np.tile([0, 0, 0, 0, 1], 20)
    rep = build_backtest_report(hits, 0.2, es_values=np.full(100, -1.5))
    assert rep.hit_rate == pytest.approx(0.2)
    assert rep.lr_uc == pytest.approx(0.0, abs=1e-12)
    assert abs(rep.lr_cc - (rep.lr_uc + rep.lr_ind)) < 1e-9
    assert rep.average_es == -1.5
    assert np.array_equal(rep.breach_times, np.arange(4, 100, 5))


def test_backtest_report_invariant_enforced():
    with pytest.raises(ValueError):
        BacktestReport(hit_rate=0.1, lr_uc=1.0, lr_ind=1.0, lr_cc=3.0,
                       average_es=0.0, breach_times=np.array([1]))


def test_table_writers(tmp_path):
    acc = tmp_path / "accuracy.csv"
    write_accuracy_table(acc, [("kalman", 0.347, {0.75: 0.75, 0.90: 0.898,
                                                  0.95: 0.949})])
    lines = acc.read_text().splitlines()
    assert lines[0] == "method,rmse,cov75,cov90,cov95"
    assert lines[1] == "kalman,0.347,0.75,0.898,0.949"
    dist = tmp_path / "dist.csv"
    write_distance_table(dist, [("genfilter", {"wasserstein": 0.08, "mmd": 0.001,
                                               "energy": 0.002, "mean_diff": 0.01,
                                               "std_diff": 0.02})])
    lines = dist.read_text().splitlines()
    assert lines[0] == "method,wasserstein,mmd,energy,mean_diff,std_diff"
    assert lines[1].startswith("genfilter,0.08,")
