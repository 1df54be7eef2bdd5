"""Baseline filter tests: exact recursions, particle methods, conjugate Gibbs."""
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from genssm.errors import DegenerateWeights
from genssm.filters import (
    AbcConfig,
    ParticleSet,
    abc_pf_run,
    bootstrap_pf_run,
    cloud_to_draws,
    effective_sample_size,
    ffbs_lg_draw,
    gibbs_lg,
    kalman_filter,
    systematic_resample,
    weighted_quantiles,
)
from genssm.models import LGParams, lg_spec, simulate_trajectory

LG_BENCH = LGParams(phi=0.9, sigma_x=0.2, sigma_y=1.0)


# ---------------------------------------------------------------------------
# Kalman forward pass


def test_kalman_hand_example():
    p = LGParams(phi=1.0, sigma_x=0.0, sigma_y=1.0)
    trace = kalman_filter([2.0], p, m0=0.0, C0=1.0)
    assert trace.a[0] == 0.0
    assert trace.R[0] == 1.0
    assert trace.S[0] == 2.0
    assert trace.K[0] == 0.5
    assert trace.m[0] == pytest.approx(1.0)
    assert trace.C[0] == pytest.approx(0.5)


def test_kalman_uninformative_observation_limit():
    p = LGParams(phi=0.9, sigma_x=0.2, sigma_y=1e6)
    y = np.random.default_rng(0).normal(size=40)
    trace = kalman_filter(y, p)
    assert np.allclose(trace.m, trace.a, rtol=0, atol=1e-6 * np.abs(trace.a).max() + 1e-9)
    assert np.allclose(trace.C, trace.R, rtol=1e-6)


def test_kalman_benchmark_rmse_band():
    spec = lg_spec()
    errs = []
    for rep in range(5):
        rng = np.random.default_rng(100 + rep)
        tr = simulate_trajectory(spec, LG_BENCH, 300, rng)
        trace = kalman_filter(tr.observations, LG_BENCH)
        errs.append(np.mean((trace.m - tr.states[1:]) ** 2))
    rmse = np.sqrt(np.mean(errs))
    assert 0.28 < rmse < 0.42


def test_kalman_variance_ordering():
    y = np.random.default_rng(1).normal(size=60)
    trace = kalman_filter(y, LG_BENCH)
    assert np.all(trace.C <= trace.R + 1e-15)
    assert np.all(trace.C > 0)
    assert np.allclose(trace.S, trace.R + 1.0)
    assert np.allclose(trace.C, (1 - trace.K) * trace.R)


def test_kalman_c0_validation():
    with pytest.raises(ValueError):
        kalman_filter([1.0], LG_BENCH, C0=0.0)


# ---------------------------------------------------------------------------
# weights, ESS, resampling


def test_ess_examples():
    assert effective_sample_size(np.full(1000, 1.0 / 1000)) == pytest.approx(1000.0)
    assert effective_sample_size(np.array([1.0])) == pytest.approx(1.0)
    assert effective_sample_size(np.array([0.5, 0.25, 0.25])) == pytest.approx(
        2.667, abs=1e-3)
    with pytest.raises(DegenerateWeights):
        effective_sample_size(np.zeros(4))


def test_particle_set_normalizes():
    ps = ParticleSet(np.arange(4.0), np.log(np.array([1.0, 1.0, 2.0, 4.0])))
    assert np.exp(ps.log_weights).sum() == pytest.approx(1.0, abs=1e-12)
    assert ps.weights[3] == pytest.approx(0.5)


def test_resample_point_mass():
    ps = ParticleSet(np.array([5.0, 6.0, 7.0]),
                     np.log(np.array([1.0, 1e-300, 1e-300])))
    out = systematic_resample(ps, np.random.default_rng(0))
    assert np.all(out.particles == 5.0)
    assert np.allclose(out.weights, 1.0 / 3)


def test_resample_unbiased():
    from genssm.filters import _resample_indices

    w = np.array([0.7, 0.3])
    rng = np.random.default_rng(12)
    counts = np.empty(10_000)
    for i in range(10_000):
        idx = _resample_indices(w, 10, rng)
        counts[i] = np.sum(idx == 0)
    # stratified sampling keeps each count within 1 of N * w and unbiased
    assert counts.mean() == pytest.approx(7.0, abs=0.05)
    assert set(np.unique(counts)) <= {7.0, 8.0}


def test_resample_preserves_support():
    ps = ParticleSet(np.array([1.0, 2.0, 3.0, 4.0]),
                     np.log(np.array([0.4, 0.3, 0.2, 0.1])))
    out = systematic_resample(ps, np.random.default_rng(2))
    assert set(out.particles) <= set(ps.particles)
    assert out.n == 4


def test_weighted_quantiles_and_draws():
    vals = np.array([3.0, 1.0, 2.0])
    w = np.array([0.2, 0.5, 0.3])
    qs = weighted_quantiles(vals, w, np.array([0.1, 0.5, 0.6, 0.95]))
    assert np.array_equal(qs, [1.0, 1.0, 2.0, 3.0])
    ps = ParticleSet.uniform(np.array([4.0, 2.0, 9.0, 7.0]))
    assert np.array_equal(cloud_to_draws(ps, 4), [2.0, 4.0, 7.0, 9.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=2, max_size=50))
def test_ess_bounds(raw):
    w = np.asarray(raw)
    ess = effective_sample_size(w)
    assert 1.0 - 1e-9 <= ess <= len(w) + 1e-9


# ---------------------------------------------------------------------------
# bootstrap particle filter


def test_bootstrap_pf_tracks_kalman():
    spec = lg_spec()
    rng = np.random.default_rng(7)
    tr = simulate_trajectory(spec, LG_BENCH, 50, rng)
    trace = kalman_filter(tr.observations, LG_BENCH)
    res = bootstrap_pf_run(spec, LG_BENCH, tr.observations, 2000,
                           rng=np.random.default_rng(8),
                           store_particles=False)
    se = np.sqrt(res.variances / res.ess)
    within = np.abs(res.means - trace.m) < 3 * se
    assert within.mean() >= 0.90


def test_bootstrap_pf_requires_likelihood():
    spec = lg_spec()
    bare = type(spec)(
        initial_sampler=spec.initial_sampler,
        transition_sampler=spec.transition_sampler,
        emission_sampler=spec.emission_sampler,
        param_dim=2,
    )
    with pytest.raises(ValueError):
        bootstrap_pf_run(bare, LG_BENCH, [1.0], 10,
                         rng=np.random.default_rng(0))


def test_bootstrap_pf_near_deterministic_collapse():
    # tiny observation noise, deterministic transition: cloud pins the truth
    p = LGParams(phi=1.0, sigma_x=0.0, sigma_y=0.01)
    spec = lg_spec(x0_mean=0.0, x0_sd=1.0)
    rng = np.random.default_rng(3)
    x0 = 0.4
    y = x0 + 0.01 * rng.standard_normal(5)
    res = bootstrap_pf_run(spec, p, y, 20_000, rng=np.random.default_rng(4))
    assert abs(res.means[-1] - x0) < 0.05
    assert res.variances[-1] < 0.01


def test_bootstrap_pf_stores_clouds_on_request():
    spec = lg_spec()
    y = [0.1, -0.2, 0.3]
    res = bootstrap_pf_run(spec, LG_BENCH, y, 100,
                           rng=np.random.default_rng(1))
    assert len(res.clouds) == 3
    assert res[1].n == 100
    res2 = bootstrap_pf_run(spec, LG_BENCH, y, 100,
                            rng=np.random.default_rng(1),
                            store_particles=False)
    with pytest.raises(ValueError):
        res2[0]


# ---------------------------------------------------------------------------
# simulation-based (kernel-weighted) particle filter


def test_abc_kernel_accept_everything_matches_prior_predictive():
    spec = lg_spec()
    y = np.zeros(10)
    cfg = AbcConfig(n_particles=500, epsilon=1e9, kernel="uniform")
    res = abc_pf_run(spec, LG_BENCH, y, cfg, np.random.default_rng(5))
    assert np.all(res.ess == pytest.approx(500.0))
    assert not res.resampled.any()
    assert not res.collapsed.any()


def test_abc_collapse_logged(tmp_path):
    spec = lg_spec()
    log = tmp_path / "collapse.jsonl"
    # impossible tolerance forces collapse at every step
    cfg = AbcConfig(n_particles=50, epsilon=1e-12, kernel="uniform",
                    log_path=str(log))
    y = np.full(4, 100.0)
    res = abc_pf_run(spec, LG_BENCH, y, cfg, np.random.default_rng(6))
    assert res.collapsed.all()
    lines = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(lines) == 4
    assert lines[0] == {"t": 0, "ess": 50.0, "collapsed": True}


def test_abc_gaussian_kernel_runs_and_weights_by_distance():
    spec = lg_spec()
    rng = np.random.default_rng(9)
    tr = simulate_trajectory(spec, LG_BENCH, 30, rng)
    cfg = AbcConfig(n_particles=1000, epsilon=0.5, kernel="gaussian")
    res = abc_pf_run(spec, LG_BENCH, tr.observations, cfg,
                     np.random.default_rng(10))
    assert res.horizon == 30
    assert np.all(res.ess >= 1.0)
    # a posterior informed by data beats the prior-predictive spread
    trace = kalman_filter(tr.observations, LG_BENCH)
    assert np.mean((res.means - tr.states[1:]) ** 2) < np.mean(
        (np.zeros(30) - tr.states[1:]) ** 2)


def test_abc_config_validation():
    with pytest.raises(ValueError):
        AbcConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        AbcConfig(kernel="triangle")
    with pytest.raises(ValueError):
        AbcConfig(weight_floor=-1.0)


# ---------------------------------------------------------------------------
# backward sampling


def test_ffbs_deterministic_state_noise():
    p = LGParams(phi=0.9, sigma_x=0.0, sigma_y=1.0)
    rng = np.random.default_rng(11)
    x0 = rng.standard_normal()
    states = x0 * 0.9 ** np.arange(21)
    y = states[1:] + rng.standard_normal(20)
    trace = kalman_filter(y, p, m0=0.0, C0=1.0)
    draw = ffbs_lg_draw(trace, p, np.random.default_rng(12))
    # the path must satisfy the exact recursion x_{t+1} = phi x_t
    assert np.allclose(draw[1:], 0.9 * draw[:-1], atol=1e-10)


def test_ffbs_terminal_marginal():
    spec = lg_spec()
    rng = np.random.default_rng(13)
    tr = simulate_trajectory(spec, LG_BENCH, 40, rng)
    trace = kalman_filter(tr.observations, LG_BENCH)
    draws = ffbs_lg_draw(trace, LG_BENCH, np.random.default_rng(14),
                         n_draws=10_000)
    se = np.sqrt(trace.C[-1] / 10_000)
    assert abs(draws[-1].mean() - trace.m[-1]) < 3 * se


def test_ffbs_joint_matches_direct_gaussian_conditioning():
    # two-step model: build the joint Gaussian of (x0, x1, x2, y1, y2) and
    # condition directly; smoothing draws must reproduce mean and covariance
    phi, sx, sy, C0 = 0.8, 0.5, 0.7, 1.3
    p = LGParams(phi=phi, sigma_x=sx, sigma_y=sy)
    V0 = C0
    V1 = phi ** 2 * V0 + sx ** 2
    V2 = phi ** 2 * V1 + sx ** 2
    # order (x0, x1, x2, y1, y2)
    cov = np.empty((5, 5))
    cx = np.array([
        [V0, phi * V0, phi ** 2 * V0],
        [phi * V0, V1, phi * V1],
        [phi ** 2 * V0, phi * V1, V2],
    ])
    cov[:3, :3] = cx
    cov[:3, 3] = cx[:, 1]
    cov[:3, 4] = cx[:, 2]
    cov[3, :3] = cx[1, :]
    cov[4, :3] = cx[2, :]
    cov[3:, 3:] = cx[1:, 1:] + np.diag([sy ** 2, sy ** 2])
    y = np.array([1.1, -0.4])
    s_yy = cov[3:, 3:]
    s_xy = cov[:3, 3:]
    mean_post = s_xy @ np.linalg.solve(s_yy, y)
    cov_post = cov[:3, :3] - s_xy @ np.linalg.solve(s_yy, s_xy.T)

    trace = kalman_filter(y, p, m0=0.0, C0=C0)
    draws = ffbs_lg_draw(trace, p, np.random.default_rng(15), n_draws=200_000)
    emp_mean = draws.mean(axis=1)
    emp_cov = np.cov(draws)
    assert np.allclose(emp_mean, mean_post, atol=0.02)
    assert np.allclose(emp_cov, cov_post, atol=0.02)


# ---------------------------------------------------------------------------
# conjugate Gibbs


def test_gibbs_prior_only_recovers_prior():
    res = gibbs_lg(np.empty(0), phi=0.9, a0=2.0, b0=2.0, n_iter=20_000,
                   burn_in=0, rng=np.random.default_rng(16))
    assert res.psi_y.mean() == pytest.approx(1.0, abs=0.03)
    assert res.psi_y.var() == pytest.approx(0.5, abs=0.05)


def test_gibbs_concentrates_when_states_observed():
    spec = lg_spec()
    p = LGParams(phi=0.9, sigma_x=0.2, sigma_y=1e-3)
    rng = np.random.default_rng(17)
    tr = simulate_trajectory(spec, p, 300, rng)
    res = gibbs_lg(tr.observations, phi=0.9, a0=2.0, b0=2.0, n_iter=600,
                   burn_in=100, rng=np.random.default_rng(18))
    ss_true = np.sum((tr.states[1:] - 0.9 * tr.states[:-1]) ** 2)
    target = (2.0 + 150.0) / (2.0 + ss_true / 2)
    assert res.retained_psi_x.mean() == pytest.approx(target, rel=0.15)


def test_gibbs_prior_calibration():
    # data simulated from the prior: the posterior quantile of the true
    # precision is uniform across replicates
    spec = lg_spec()
    rng = np.random.default_rng(19)
    ranks = []
    for _ in range(50):
        psi_y = rng.gamma(2.0, 0.5)
        psi_x = rng.gamma(2.0, 0.5)
        p = LGParams(phi=0.9, sigma_x=psi_x ** -0.5, sigma_y=psi_y ** -0.5)
        tr = simulate_trajectory(spec, p, 40, rng)
        res = gibbs_lg(tr.observations, phi=0.9, a0=2.0, b0=2.0, n_iter=300,
                       burn_in=50, rng=rng)
        ranks.append(np.mean(res.retained_psi_y < psi_y))
    stat = kstest(ranks, "uniform")
    assert stat.pvalue > 0.01


def test_gibbs_validation():
    with pytest.raises(ValueError):
        gibbs_lg(np.zeros(3), 0.9, a0=0.0, b0=2.0, n_iter=10, burn_in=0,
                 rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        gibbs_lg(np.zeros(3), 0.9, a0=2.0, b0=2.0, n_iter=10, burn_in=10,
                 rng=np.random.default_rng(0))
