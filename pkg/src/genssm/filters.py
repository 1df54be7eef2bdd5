"""Exact and particle-based baseline filters.

Kalman recursions and backward sampling for the linear-Gaussian model, the
bootstrap particle filter, the simulation-based particle filter weighted by a
kernelized distance on pseudo-observations, and the conjugate Gibbs sampler
with Gamma precision priors.

Particle weights live in log space and are normalized by max-shift; clouds
carry weighted summaries so large runs need not retain full histories.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import DegenerateWeights, NumericalConsistencyError

__all__ = [
    "KalmanTrace",
    "ParticleSet",
    "AbcConfig",
    "PFResult",
    "kalman_filter",
    "effective_sample_size",
    "systematic_resample",
    "weighted_quantiles",
    "cloud_to_draws",
    "bootstrap_pf_run",
    "abc_pf_run",
    "ffbs_lg_draw",
    "gibbs_lg",
    "GibbsLGResult",
]

SUMMARY_QUANTILES = (0.025, 0.05, 0.125, 0.25, 0.5, 0.75, 0.875, 0.95, 0.975)


@dataclass
class KalmanTrace:
    """Forward filtering quantities, one entry per observation.

    a/R prior mean and variance, f/S forecast mean and variance, K gain,
    m/C posterior mean and variance; m0/C0 are the initial-state moments.
    """

    m0: float
    C0: float
    a: np.ndarray
    R: np.ndarray
    f: np.ndarray
    S: np.ndarray
    K: np.ndarray
    m: np.ndarray
    C: np.ndarray

    @property
    def horizon(self):
        return len(self.m)


def kalman_filter(y, p, m0=0.0, C0=None):
    """Exact filtering for x_t = phi x_{t-1} + sigma_x eta, y_t = x_t + sigma_y eps.

    C0=None uses the stationary variance sigma_x^2/(1-phi^2).
    """
    y = np.asarray(y, dtype=float)
    phi, sx, sy = float(p.phi), float(p.sigma_x), float(p.sigma_y)
    if C0 is None:
        if abs(phi) >= 1:
            raise ValueError("stationary C0 needs |phi| < 1; pass C0")
        C0 = sx ** 2 / (1.0 - phi ** 2)
    if C0 <= 0:
        raise ValueError(f"C0 must be positive, got {C0}")
    T = len(y)
    a = np.empty(T); R = np.empty(T); f = np.empty(T)
    S = np.empty(T); K = np.empty(T); m = np.empty(T); C = np.empty(T)
    mp, Cp = float(m0), float(C0)
    sy2 = sy ** 2
    sx2 = sx ** 2
    for t in range(T):
        a[t] = phi * mp
        R[t] = phi ** 2 * Cp + sx2
        f[t] = a[t]
        S[t] = R[t] + sy2
        if S[t] <= 0:
            raise NumericalConsistencyError(f"forecast variance <= 0 at t={t}")
        K[t] = R[t] / S[t]
        m[t] = a[t] + K[t] * (y[t] - f[t])
        C[t] = (1.0 - K[t]) * R[t]
        if C[t] < 0:
            raise NumericalConsistencyError(f"posterior variance < 0 at t={t}")
        mp, Cp = m[t], C[t]
    return KalmanTrace(m0=float(m0), C0=float(C0), a=a, R=R, f=f, S=S, K=K,
                       m=m, C=C)


def _normalize_log_weights(logw):
    logw = np.asarray(logw, dtype=float)
    mx = np.max(logw)
    if not np.isfinite(mx):
        raise DegenerateWeights()
    shifted = logw - mx
    total = np.log(np.sum(np.exp(shifted)))
    return shifted - total


@dataclass
class ParticleSet:
    """Weighted particle cloud; log_weights are kept normalized."""

    particles: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.log_weights = _normalize_log_weights(self.log_weights)
        if self.particles.shape != self.log_weights.shape:
            raise ValueError("particles and log_weights must align")

    @classmethod
    def uniform(cls, particles):
        particles = np.asarray(particles, dtype=float)
        n = particles.shape[0]
        return cls(particles, np.full(n, -np.log(n)))

    @property
    def n(self):
        return self.particles.shape[0]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def ess(self):
        return effective_sample_size(self)


def effective_sample_size(ps):
    """1 / sum of squared normalized weights; accepts a cloud or raw weights."""
    if isinstance(ps, ParticleSet):
        w = ps.weights
    else:
        w = np.asarray(ps, dtype=float)
        total = w.sum()
        if total <= 0:
            raise DegenerateWeights()
        w = w / total
    return 1.0 / np.sum(w ** 2)


def systematic_resample(ps, rng):
    """Resample to equal weights with a single stratified uniform offset."""
    n = ps.n
    positions = (rng.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(ps.weights)
    cumulative[-1] = 1.0  # guard rounding
    idx = np.searchsorted(cumulative, positions)
    return ParticleSet.uniform(ps.particles[idx])


def _resample_indices(weights, n, rng):
    positions = (rng.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def weighted_quantiles(values, weights, probs):
    """Generalized-inverse quantiles of a weighted sample."""
    order = np.argsort(values)
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, probs, side="left")
    return v[np.minimum(idx, len(v) - 1)]


def cloud_to_draws(ps, n):
    """Deterministic equal-weight draws: weighted quantiles at midpoints.

    Avoids injecting resampling noise into distance computations.
    """
    probs = (np.arange(n) + 0.5) / n
    return weighted_quantiles(ps.particles, ps.weights, probs)


@dataclass
class PFResult:
    """Per-step output of a particle filter run.

    Summaries (weighted mean, variance, ESS, quantiles at SUMMARY_QUANTILES,
    resample flags) are always present; full clouds only when requested.
    """

    means: np.ndarray
    variances: np.ndarray
    ess: np.ndarray
    quantiles: np.ndarray  # (T, len(SUMMARY_QUANTILES))
    resampled: np.ndarray
    clouds: Optional[list] = None
    collapsed: Optional[np.ndarray] = None

    @property
    def horizon(self):
        return len(self.means)

    def __getitem__(self, t):
        if self.clouds is None:
            raise ValueError("run was executed without particle storage")
        return self.clouds[t]

    def draws(self, t, n):
        if self.clouds is None:
            raise ValueError("run was executed without particle storage")
        return cloud_to_draws(self.clouds[t], n)


def _summaries_from(particles, weights):
    mean = float(np.sum(weights * particles))
    var = float(np.sum(weights * (particles - mean) ** 2))
    qs = weighted_quantiles(particles, weights, np.array(SUMMARY_QUANTILES))
    return mean, var, qs


def bootstrap_pf_run(spec, params, y, n_particles, ess_threshold=None,
                     rng=None, store_particles=True):
    """Particle filter weighting by the exact emission density.

    Requires spec.likelihood_evaluator. Resamples systematically when the
    effective sample size falls below ess_threshold (default n_particles/2).
    """
    if spec.likelihood_evaluator is None:
        raise ValueError("bootstrap filtering needs a likelihood evaluator")
    if ess_threshold is None:
        ess_threshold = n_particles / 2
    y = np.asarray(y, dtype=float)
    T = len(y)
    means = np.empty(T); variances = np.empty(T); ess_arr = np.empty(T)
    quantiles = np.empty((T, len(SUMMARY_QUANTILES)))
    resampled = np.zeros(T, dtype=bool)
    clouds = [] if store_particles else None

    x = np.asarray(spec.initial_sampler(params, rng, n_particles), dtype=float)
    logw = np.full(n_particles, -np.log(n_particles))
    for t in range(T):
        x = np.asarray(spec.transition_sampler(x, params, rng), dtype=float)
        lik = np.asarray(spec.likelihood_evaluator(x, y[t], params),
                         dtype=float)
        with np.errstate(divide="ignore"):
            logw = logw + np.log(lik)
        mx = np.max(logw)
        if not np.isfinite(mx):
            raise DegenerateWeights(t)
        logw = logw - mx
        logw = logw - np.log(np.sum(np.exp(logw)))
        w = np.exp(logw)
        ess = 1.0 / np.sum(w ** 2)
        means[t], variances[t], quantiles[t] = _summaries_from(x, w)
        ess_arr[t] = ess
        if store_particles:
            clouds.append(ParticleSet(x.copy(), logw.copy()))
        if ess < ess_threshold:
            idx = _resample_indices(w, n_particles, rng)
            x = x[idx]
            logw = np.full(n_particles, -np.log(n_particles))
            resampled[t] = True
    return PFResult(means, variances, ess_arr, quantiles, resampled, clouds)


@dataclass
class AbcConfig:
    """Configuration of the simulation-based particle filter.

    kernel: "uniform" (strict indicator of distance < epsilon) or "gaussian"
    (unnormalized exp(-d^2/2 eps^2)). distance defaults to absolute
    difference. weight_floor is added in linear space before normalization.
    ess_threshold defaults to n_particles/2. log_path, when set, receives one
    JSON line {"t","ess","collapsed"} per collapsed step.
    """

    n_particles: int = 1000
    epsilon: float = 0.1
    kernel: str = "uniform"
    distance: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    ess_threshold: Optional[float] = None
    weight_floor: float = 1e-10
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be nonnegative")
        if self.kernel not in ("uniform", "gaussian"):
            raise ValueError(f"unknown kernel {self.kernel!r}")


def abc_pf_run(spec, params, y, cfg, rng, store_particles=True):
    """Particle filter weighted by a kernel of the pseudo-observation distance.

    Each particle propagates, simulates its own pseudo-observation, and is
    weighted by kernel(distance(pseudo, observed)). No density is evaluated.
    When every kernel value is zero the step is flagged as collapsed: weights
    reset to uniform (prior-predictive fallback) and a JSON line is logged.
    """
    n = cfg.n_particles
    eps = cfg.epsilon
    threshold = cfg.ess_threshold if cfg.ess_threshold is not None else n / 2
    dist = cfg.distance or (lambda sim, obs: np.abs(sim - obs))
    y = np.asarray(y, dtype=float)
    T = len(y)
    means = np.empty(T); variances = np.empty(T); ess_arr = np.empty(T)
    quantiles = np.empty((T, len(SUMMARY_QUANTILES)))
    resampled = np.zeros(T, dtype=bool)
    collapsed = np.zeros(T, dtype=bool)
    clouds = [] if store_particles else None
    log_fh = open(cfg.log_path, "a") if cfg.log_path else None

    try:
        x = np.asarray(spec.initial_sampler(params, rng, n), dtype=float)
        logw = np.full(n, -np.log(n))
        for t in range(T):
            x = np.asarray(spec.transition_sampler(x, params, rng), dtype=float)
            pseudo = np.asarray(spec.emission_sampler(x, params, rng),
                                dtype=float)
            d = dist(pseudo, y[t])
            if cfg.kernel == "uniform":
                kern = (d < eps).astype(float)
            else:
                kern = np.exp(-0.5 * (d / eps) ** 2)
            step_collapsed = not np.any(kern > 0)
            with np.errstate(divide="ignore"):
                logw = logw + np.log(kern + cfg.weight_floor)
            mx = np.max(logw)
            if not np.isfinite(mx):
                # floor == 0 and every kernel value zero
                step_collapsed = True
                logw = np.full(n, -np.log(n))
            else:
                logw = logw - mx
                logw = logw - np.log(np.sum(np.exp(logw)))
            w = np.exp(logw)
            ess = 1.0 / np.sum(w ** 2)
            if step_collapsed:
                collapsed[t] = True
                idx = _resample_indices(np.full(n, 1.0 / n), n, rng)
                x = x[idx]
                logw = np.full(n, -np.log(n))
                w = np.exp(logw)
                ess = float(n)
                if log_fh is not None:
                    log_fh.write(json.dumps(
                        {"t": int(t), "ess": float(ess), "collapsed": True})
                        + "\n")
            means[t], variances[t], quantiles[t] = _summaries_from(x, w)
            ess_arr[t] = ess
            if store_particles:
                clouds.append(ParticleSet(x.copy(), logw.copy()))
            if not step_collapsed and ess < threshold:
                idx = _resample_indices(w, n, rng)
                x = x[idx]
                logw = np.full(n, -np.log(n))
                resampled[t] = True
    finally:
        if log_fh is not None:
            log_fh.close()
    return PFResult(means, variances, ess_arr, quantiles, resampled, clouds,
                    collapsed)


def ffbs_lg_draw(trace, p, rng, n_draws=None):
    """One joint draw (or n_draws of them) of x_{0:T} given the forward trace.

    Backward pass: x_T from the filtered law, then
    x_t ~ Normal(m_t + J_t (x_{t+1} - a_{t+1}), C_t - J_t^2 R_{t+1}) down to
    t=0, where the t=0 step uses the initial moments (m0, C0).
    """
    phi = float(p.phi)
    T = trace.horizon
    scalar = n_draws is None
    n = 1 if scalar else n_draws
    x = np.empty((T + 1, n))
    x[T] = trace.m[T - 1] + np.sqrt(trace.C[T - 1]) * rng.standard_normal(n)
    for t in range(T - 1, -1, -1):
        if t > 0:
            m_t, C_t = trace.m[t - 1], trace.C[t - 1]
        else:
            m_t, C_t = trace.m0, trace.C0
        R_next = trace.R[t]
        a_next = trace.a[t]
        if C_t == 0.0:
            x[t] = m_t
            continue
        J = C_t * phi / R_next
        var = C_t - J * J * R_next
        if var < -1e-12:
            raise NumericalConsistencyError(
                f"negative smoothing variance at t={t}: {var}")
        sd = np.sqrt(max(var, 0.0))
        x[t] = m_t + J * (x[t + 1] - a_next) + sd * rng.standard_normal(n)
    return x[:, 0] if scalar else x


@dataclass
class GibbsLGResult:
    """Precision chains and (optionally) state draws from the conjugate sampler."""

    psi_x: np.ndarray
    psi_y: np.ndarray
    states: Optional[np.ndarray]  # (n_iter, T+1) when stored
    burn_in: int

    @property
    def retained_psi_x(self):
        return self.psi_x[self.burn_in:]

    @property
    def retained_psi_y(self):
        return self.psi_y[self.burn_in:]

    @property
    def retained_states(self):
        if self.states is None:
            return None
        return self.states[self.burn_in:]


def gibbs_lg(y, phi, a0, b0, n_iter, burn_in, rng, store_states=True):
    """Conjugate Gibbs sampler for the two precisions with phi held fixed.

    Alternates a joint backward state draw with Gamma updates
    psi ~ Gamma(a0 + T/2, rate b0 + SS/2), where SS_y = sum (y_t - x_t)^2 and
    SS_x = sum (x_t - phi x_{t-1})^2 including the initial state. The initial
    moments m0 = 0, C0 = sigma_x^2/(1-phi^2) are refreshed every sweep from
    the current precision.
    """
    if a0 <= 0 or b0 <= 0:
        raise ValueError("a0 and b0 must be positive")
    if burn_in >= n_iter:
        raise ValueError("burn_in must be smaller than n_iter")
    y = np.asarray(y, dtype=float)
    T = len(y)
    psi_x = np.empty(n_iter)
    psi_y = np.empty(n_iter)
    states = np.empty((n_iter, T + 1)) if (store_states and T > 0) else None
    cur_x, cur_y = a0 / b0, a0 / b0  # prior mean start
    from .models import LGParams
    for it in range(n_iter):
        if T > 0:
            sx = cur_x ** -0.5
            sy = cur_y ** -0.5
            p = LGParams(phi=phi, sigma_x=sx, sigma_y=sy)
            trace = kalman_filter(y, p, m0=0.0,
                                  C0=sx ** 2 / (1.0 - phi ** 2))
            x = ffbs_lg_draw(trace, p, rng)
            ss_y = float(np.sum((y - x[1:]) ** 2))
            ss_x = float(np.sum((x[1:] - phi * x[:-1]) ** 2))
            if states is not None:
                states[it] = x
        else:
            ss_y = ss_x = 0.0
        cur_y = rng.gamma(a0 + T / 2, 1.0 / (b0 + ss_y / 2))
        cur_x = rng.gamma(a0 + T / 2, 1.0 / (b0 + ss_x / 2))
        psi_y[it] = cur_y
        psi_x[it] = cur_x
    return GibbsLGResult(psi_x=psi_x, psi_y=psi_y, states=states,
                         burn_in=burn_in)
