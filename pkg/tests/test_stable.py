"""Stable-law sampler tests.

The frozen quantile table in genssm.stable is checked here against a fresh
characteristic-function inversion (Gil-Pelaez with the 1/t endpoint
singularity split out analytically), and the sampler is checked against the
closed-form sub-cases and the oracle quantiles.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import sici
from scipy.stats import cauchy, kstest, norm

from genssm.stable import (
    FROZEN_STABLE_QUANTILES,
    StableParams,
    noise_band,
    sample_stable,
    stable_quantile,
)

# ---------------------------------------------------------------------------
# independent oracle: CDF by characteristic-function inversion


def _im_over_t(t, alpha, beta, gamma, delta):
    if t <= 0:
        return 0.0
    if alpha != 1.0:
        mod = math.exp(-((gamma * t) ** alpha))
        ph = (gamma * t) ** alpha * beta * math.tan(math.pi * alpha / 2) + delta * t
    else:
        mod = math.exp(-gamma * t)
        ph = -gamma * t * beta * (2 / math.pi) * math.log(t) + delta * t
    return mod * math.sin(ph) / t


def _re_minus_one_over_t(t, alpha, beta, gamma, delta):
    if t <= 0:
        return -gamma if alpha == 1.0 else 0.0
    if alpha != 1.0:
        mod = math.exp(-((gamma * t) ** alpha))
        ph = (gamma * t) ** alpha * beta * math.tan(math.pi * alpha / 2) + delta * t
    else:
        mod = math.exp(-gamma * t)
        ph = -gamma * t * beta * (2 / math.pi) * math.log(t) + delta * t
    return (mod * math.cos(ph) - 1.0) / t


def oracle_cdf(x, alpha, beta, gamma=1.0, delta=0.0, tmax=40.0):
    """F(x) = 1/2 - (C - S)/pi, with the sin(tx)/t piece done via Si()."""
    c, _ = quad(_im_over_t, 0, tmax, args=(alpha, beta, gamma, delta),
                weight="cos", wvar=x, limit=500)
    s_reg, _ = quad(_re_minus_one_over_t, 0, tmax,
                    args=(alpha, beta, gamma, delta),
                    weight="sin", wvar=x, limit=500)
    s = sici(x * tmax)[0] + s_reg
    return 0.5 - (c - s) / math.pi


def oracle_quantile(p, alpha, beta, gamma=1.0, delta=0.0):
    # Pareto tail estimate brackets the root even at p = 1e-5
    c = math.sin(math.pi * alpha / 2) * math.gamma(alpha) / math.pi
    tail = min(p, 1 - p)
    lean = (1 + beta) if p > 0.5 else (1 - beta)
    est = (c * max(lean, 1e-3) / tail) ** (1 / alpha) + 8.0
    return brentq(lambda x: oracle_cdf(x, alpha, beta, gamma, delta) - p,
                  -8 * est, 8 * est, xtol=1e-9, rtol=1e-11)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
class TestOracleSelfChecks:
    def test_gaussian_case_matches_closed_form(self):
        for p in (0.01, 0.99):
            assert oracle_quantile(p, 2.0, 0.0) == pytest.approx(
                norm.ppf(p, scale=math.sqrt(2)), abs=1e-8)

    def test_cauchy_case_matches_closed_form(self):
        assert oracle_quantile(0.9999, 1.0, 0.0) == pytest.approx(
            cauchy.ppf(0.9999), rel=1e-8)
        assert oracle_quantile(1e-4, 1.0, 0.0) == pytest.approx(
            cauchy.ppf(1e-4), rel=1e-8)

    def test_frozen_table_matches_fresh_inversion(self):
        for prob, frozen in FROZEN_STABLE_QUANTILES[(1.75, 0.5)].items():
            fresh = oracle_quantile(prob, 1.75, 0.5)
            assert fresh == pytest.approx(frozen, rel=1e-6), (
                f"frozen quantile stale at p={prob}")


# ---------------------------------------------------------------------------
# parameter validation


@pytest.mark.parametrize("kwargs", [
    dict(alpha=0.0, beta=0.0),
    dict(alpha=2.5, beta=0.0),
    dict(alpha=1.5, beta=1.5),
    dict(alpha=1.5, beta=0.0, gamma_scale=0.0),
    dict(alpha=1.5, beta=0.0, gamma_scale=-1.0),
    dict(alpha=1.5, beta=0.0, delta=float("inf")),
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ValueError):
        StableParams(**kwargs)


# ---------------------------------------------------------------------------
# sampler distributional checks


def test_alpha2_is_gaussian_variance_two():
    rng = np.random.default_rng(20101)
    draws = sample_stable(StableParams(2.0, 0.0), rng, size=100_000)
    stat = kstest(draws, norm(scale=math.sqrt(2)).cdf)
    assert stat.pvalue > 0.01


def test_alpha1_beta0_is_cauchy():
    rng = np.random.default_rng(20102)
    draws = sample_stable(StableParams(1.0, 0.0), rng, size=100_000)
    stat = kstest(draws, cauchy.cdf)
    assert stat.pvalue > 0.01


def test_alpha2_beta_is_irrelevant_bitwise():
    a = sample_stable(StableParams(2.0, 0.0), np.random.default_rng(7), size=1000)
    b = sample_stable(StableParams(2.0, 0.7), np.random.default_rng(7), size=1000)
    assert np.array_equal(a, b)


def test_skewed_quantiles_match_oracle():
    rng = np.random.default_rng(20103)
    draws = sample_stable(StableParams(1.75, 0.5), rng, size=1_000_000)
    table = FROZEN_STABLE_QUANTILES[(1.75, 0.5)]
    for prob in (0.01, 0.99):
        emp = np.quantile(draws, prob)
        assert emp == pytest.approx(table[prob], rel=0.02)
    assert np.quantile(draws, 0.5) == pytest.approx(table[0.5], abs=0.01)


def test_cauchy_scale_location():
    rng = np.random.default_rng(20104)
    draws = sample_stable(StableParams(1.0, 0.0, 2.0, 5.0), rng, size=200_000)
    med = np.median(draws)
    q75 = np.quantile(draws, 0.75)
    assert med == pytest.approx(5.0, abs=0.05)
    assert q75 - med == pytest.approx(2.0, abs=0.1)  # scale = half-IQR


def test_scalar_and_shaped_output():
    rng = np.random.default_rng(1)
    x = sample_stable(StableParams(1.5, 0.2), rng)
    assert isinstance(x, float)
    arr = sample_stable(StableParams(1.5, 0.2), rng, size=(3, 4))
    assert arr.shape == (3, 4)


def test_determinism():
    p = StableParams(1.3, -0.4, 2.0, 1.0)
    a = sample_stable(p, np.random.default_rng(99), size=500)
    b = sample_stable(p, np.random.default_rng(99), size=500)
    assert np.array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(0.5, 2.0), beta=st.floats(-1.0, 1.0),
       gamma=st.floats(0.1, 5.0), delta=st.floats(-5.0, 5.0),
       seed=st.integers(0, 2 ** 31))
def test_draws_always_finite(alpha, beta, gamma, delta, seed):
    p = StableParams(alpha, beta, gamma, delta)
    draws = sample_stable(p, np.random.default_rng(seed), size=64)
    assert np.all(np.isfinite(draws))


# ---------------------------------------------------------------------------
# quantile lookups and bands


def test_quantile_closed_forms():
    p2 = StableParams(2.0, 0.3, 1.5, -1.0)
    assert stable_quantile(0.975, p2) == pytest.approx(
        -1.0 + 1.5 * math.sqrt(2) * norm.ppf(0.975))
    pc = StableParams(1.0, 0.0, 1.0, 0.0)
    assert stable_quantile(0.9999, pc) == pytest.approx(3183.0987571, rel=1e-6)
    assert stable_quantile(0.5, pc) == pytest.approx(0.0, abs=1e-12)


def test_quantile_frozen_lookup_and_scaling():
    p = StableParams(1.75, 0.5, 2.0, 3.0)
    base = FROZEN_STABLE_QUANTILES[(1.75, 0.5)][0.99]
    assert stable_quantile(0.99, p) == pytest.approx(3.0 + 2.0 * base)
    # float arithmetic forms of the probability must hit the same entry
    assert stable_quantile(1 - 1e-4, p) == stable_quantile(0.9999, p)


def test_quantile_unavailable_pair_raises():
    with pytest.raises(KeyError):
        stable_quantile(0.3, StableParams(1.6, 0.1))
    with pytest.raises(KeyError):
        stable_quantile(0.123, StableParams(1.75, 0.5))  # prob not tabulated


def test_quantile_prob_domain():
    with pytest.raises(ValueError):
        stable_quantile(0.0, StableParams(2.0, 0.0))
    with pytest.raises(ValueError):
        stable_quantile(1.0, StableParams(2.0, 0.0))


def test_noise_band():
    lo, hi = noise_band(StableParams(1.0, 0.0), 1e-4)
    assert lo == pytest.approx(-3183.0987571, rel=1e-6)
    assert hi == pytest.approx(3183.0987571, rel=1e-6)
    lo, hi = noise_band(StableParams(1.75, 0.5), 1e-5)
    assert lo == pytest.approx(-138.634227986, rel=1e-9)
    assert hi == pytest.approx(259.6604721, rel=1e-9)
    with pytest.raises(ValueError):
        noise_band(StableParams(1.0, 0.0), 0.6)
