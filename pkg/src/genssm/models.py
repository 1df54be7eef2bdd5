"""State-space model definitions and trajectory simulation.

Models are pure samplers: an initial law, a Markov transition, and an
emission, each vectorized over n parallel chains and driven by an explicit
numpy Generator. No density is required; when one exists it can be attached
for the exact particle filter. Parameter containers accept scalar or array
fields, so a batch of prior draws simulates with per-row parameters.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from .errors import FilterInfeasible, SimulationFailure
from .stable import StableParams, sample_stable, stable_quantile

__all__ = [
    "LGParams",
    "SVParams",
    "Trajectory",
    "TrajectoryBatch",
    "StateSpaceSpec",
    "simulate_trajectory",
    "simulate_batch",
    "sample_prior",
    "lg_spec",
    "sv_spec",
    "lg_precision_prior",
    "sv_prior_gaussian",
    "sv_prior_stable",
    "save_batch_csv",
    "load_batch_csv",
    "save_batch_binary",
    "load_batch_binary",
]


def _all_ok(x, cond):
    return bool(np.all(cond(np.asarray(x))))


@dataclass(frozen=True)
class LGParams:
    """Linear-Gaussian model: x_t = phi x_{t-1} + sigma_x eta_t, y_t = x_t + sigma_y eps_t."""

    phi: Any
    sigma_x: Any
    sigma_y: Any

    def __post_init__(self):
        if not _all_ok(self.sigma_x, lambda v: v >= 0):
            raise ValueError("sigma_x must be nonnegative")
        if not _all_ok(self.sigma_y, lambda v: v >= 0):
            raise ValueError("sigma_y must be nonnegative")

    @property
    def psi_x(self):
        with np.errstate(divide="ignore"):
            return 1.0 / np.asarray(self.sigma_x, dtype=float) ** 2

    @property
    def psi_y(self):
        with np.errstate(divide="ignore"):
            return 1.0 / np.asarray(self.sigma_y, dtype=float) ** 2


@dataclass(frozen=True)
class SVParams:
    """Stochastic volatility: y_t = exp(x_t/2) eps_t with AR(1) log-volatility.

    x_t = mu + phi (x_{t-1} - mu) + sigma_eta eta_t; eps_t follows the stable
    law in `noise`; the initial state is the stationary Normal(mu,
    sigma_eta^2/(1 - phi^2)).
    """

    mu: Any
    phi: Any
    sigma_eta: Any
    noise: StableParams

    def __post_init__(self):
        if not _all_ok(self.phi, lambda v: np.abs(v) < 1):
            raise ValueError("phi must satisfy |phi| < 1")
        if not _all_ok(self.sigma_eta, lambda v: v > 0):
            raise ValueError("sigma_eta must be positive")


@dataclass(frozen=True)
class Trajectory:
    """One simulated path: states x_0..x_T and observations y_1..y_T."""

    states: np.ndarray
    observations: np.ndarray
    params: Any = None

    def __post_init__(self):
        if len(self.states) != len(self.observations) + 1:
            raise ValueError(
                f"need len(states) == len(observations) + 1, got "
                f"{len(self.states)} and {len(self.observations)}")


class TrajectoryBatch:
    """Array-backed sequence of Trajectory.

    states has shape (n, T+1), observations (n, T). Indexing materializes a
    Trajectory view for one replicate; iteration and len() work as on a list.
    """

    def __init__(self, states, observations, params=None):
        states = np.asarray(states, dtype=float)
        observations = np.asarray(observations, dtype=float)
        if states.ndim != 2 or observations.ndim != 2:
            raise ValueError("states and observations must be 2-d")
        if states.shape[0] != observations.shape[0]:
            raise ValueError("replicate counts differ")
        if states.shape[1] != observations.shape[1] + 1:
            raise ValueError("need T+1 states per T observations")
        self.states = states
        self.observations = observations
        self.params = params

    @property
    def n(self):
        return self.states.shape[0]

    @property
    def horizon(self):
        return self.observations.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return Trajectory(self.states[i], self.observations[i], self.params)

    def __iter__(self):
        for i in range(self.n):
            yield self[i]


@dataclass(frozen=True)
class StateSpaceSpec:
    """Generative description of a state-space model.

    initial_sampler(params, rng, n) -> (n,) initial states
    transition_sampler(x, params, rng) -> (n,) next states
    emission_sampler(x, params, rng) -> (n,) observations
    param_prior_sampler(rng) -> params (optional)
    likelihood_evaluator(x, y_scalar, params) -> (n,) densities (optional)

    The optional noise decomposition (emission_noise_sampler drawing raw
    emission noise, emission_from_noise combining it with states, and
    emission_noise_band giving the (lower, upper) quantile band at a tail
    probability) enables rare-event filtering during batch simulation.
    """

    initial_sampler: Callable[[Any, np.random.Generator, int], np.ndarray]
    transition_sampler: Callable[[np.ndarray, Any, np.random.Generator], np.ndarray]
    emission_sampler: Callable[[np.ndarray, Any, np.random.Generator], np.ndarray]
    param_dim: int
    param_prior_sampler: Optional[Callable[[np.random.Generator], Any]] = None
    param_prior_sampler_batch: Optional[Callable[[np.random.Generator, int], Any]] = None
    likelihood_evaluator: Optional[Callable[[np.ndarray, float, Any], np.ndarray]] = None
    emission_noise_sampler: Optional[Callable[[Any, np.random.Generator, int], np.ndarray]] = None
    emission_from_noise: Optional[Callable[[np.ndarray, np.ndarray, Any], np.ndarray]] = None
    emission_noise_band: Optional[Callable[[Any, float], tuple]] = None


def _simulate_block(spec, params, n, T, rng, capture_noise=False):
    """Vectorized simulation of n paths over horizon T.

    Returns (states (n, T+1), observations (n, T), noise (n, T) or None).
    """
    states = np.empty((n, T + 1))
    obs = np.empty((n, T))
    noise = np.empty((n, T)) if capture_noise else None
    x = np.asarray(spec.initial_sampler(params, rng, n), dtype=float)
    if not np.all(np.isfinite(x)):
        raise SimulationFailure(0)
    states[:, 0] = x
    for t in range(1, T + 1):
        x = np.asarray(spec.transition_sampler(x, params, rng), dtype=float)
        if capture_noise:
            eps = np.asarray(spec.emission_noise_sampler(params, rng, n),
                             dtype=float)
            y = np.asarray(spec.emission_from_noise(x, eps, params),
                           dtype=float)
            noise[:, t - 1] = eps
        else:
            y = np.asarray(spec.emission_sampler(x, params, rng), dtype=float)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise SimulationFailure(t)
        states[:, t] = x
        obs[:, t - 1] = y
    return states, obs, noise


def simulate_trajectory(spec, params, T, rng):
    """Simulate one path of length T (T observations, T+1 states)."""
    if T < 1:
        raise ValueError(f"horizon must be at least 1, got {T}")
    states, obs, _ = _simulate_block(spec, params, 1, T, rng)
    return Trajectory(states[0], obs[0], params)


def simulate_batch(spec, params, n, T, rng, rare_event_filter=None):
    """Simulate n paths; optionally regenerate paths containing rare noise.

    With rare_event_filter = p, any path whose emission noise leaves the
    (p, 1-p) quantile band of the noise law is redrawn wholesale. More than
    1000*n regenerations raise FilterInfeasible.
    """
    if n < 1:
        raise ValueError(f"need at least one replicate, got {n}")
    if rare_event_filter is None:
        states, obs, _ = _simulate_block(spec, params, n, T, rng)
        return TrajectoryBatch(states, obs, params)
    if (spec.emission_noise_sampler is None or spec.emission_from_noise is None
            or spec.emission_noise_band is None):
        raise ValueError(
            "rare_event_filter requires the emission noise decomposition "
            "(emission_noise_sampler, emission_from_noise, emission_noise_band)")
    lo, hi = spec.emission_noise_band(params, rare_event_filter)
    states, obs, noise = _simulate_block(spec, params, n, T, rng,
                                         capture_noise=True)
    bad = np.flatnonzero(np.any((noise < lo) | (noise > hi), axis=1))
    budget = 1000 * n
    while bad.size:
        budget -= bad.size
        if budget < 0:
            raise FilterInfeasible(
                f"rare-event regeneration exceeded {1000 * n} redraws; "
                f"band ({lo:.4g}, {hi:.4g}) is too tight for this model")
        s2, o2, n2 = _simulate_block(spec, params, bad.size, T, rng,
                                     capture_noise=True)
        states[bad], obs[bad], noise[bad] = s2, o2, n2
        bad = bad[np.any((n2 < lo) | (n2 > hi), axis=1)]
    return TrajectoryBatch(states, obs, params)


def sample_prior(spec, rng):
    """One joint draw from the model's parameter prior."""
    if spec.param_prior_sampler is None:
        raise ValueError("this model declares no parameter prior")
    return spec.param_prior_sampler(rng)


def sample_prior_batch(spec, rng, n):
    """n prior draws with array-valued parameter fields."""
    if spec.param_prior_sampler_batch is not None:
        return spec.param_prior_sampler_batch(rng, n)
    draws = [sample_prior(spec, rng) for _ in range(n)]
    first = draws[0]
    fields = {name: np.array([getattr(d, name) for d in draws])
              for name in first.__dataclass_fields__}
    return type(first)(**fields)


# ---------------------------------------------------------------------------
# model factories


def lg_spec(x0_mean=0.0, x0_sd=None, param_prior=None, param_prior_batch=None):
    """Linear-Gaussian model spec.

    The initial law is Normal(x0_mean, x0_sd^2); x0_sd=None means the
    stationary sigma_x/sqrt(1-phi^2), which requires |phi| < 1.
    """

    def initial(params, rng, n):
        sd = x0_sd
        if sd is None:
            phi = np.asarray(params.phi, dtype=float)
            if not np.all(np.abs(phi) < 1):
                raise ValueError(
                    "stationary initial law needs |phi| < 1; pass x0_sd")
            sd = params.sigma_x / np.sqrt(1.0 - phi ** 2)
        return x0_mean + sd * rng.standard_normal(n)

    def transition(x, params, rng):
        return params.phi * x + params.sigma_x * rng.standard_normal(x.shape[0])

    def emission(x, params, rng):
        return x + params.sigma_y * rng.standard_normal(x.shape[0])

    def likelihood(x, y, params):
        s = params.sigma_y
        if not np.all(np.asarray(s) > 0):
            raise ValueError("emission density undefined at sigma_y = 0")
        z = (y - x) / s
        return np.exp(-0.5 * z * z) / (s * np.sqrt(2.0 * np.pi))

    return StateSpaceSpec(
        initial_sampler=initial,
        transition_sampler=transition,
        emission_sampler=emission,
        param_dim=2,
        param_prior_sampler=param_prior,
        param_prior_sampler_batch=param_prior_batch,
        likelihood_evaluator=likelihood,
    )


def lg_precision_prior(phi=0.9, a0=2.0, b0=2.0):
    """Gamma(a0, rate b0) priors on both precisions, phi held fixed.

    Returns (scalar_sampler, batch_sampler) for use with lg_spec.
    """

    def draw(rng):
        psi_x = rng.gamma(a0, 1.0 / b0)
        psi_y = rng.gamma(a0, 1.0 / b0)
        return LGParams(phi=phi, sigma_x=psi_x ** -0.5, sigma_y=psi_y ** -0.5)

    def draw_batch(rng, n):
        psi_x = rng.gamma(a0, 1.0 / b0, size=n)
        psi_y = rng.gamma(a0, 1.0 / b0, size=n)
        return LGParams(phi=np.full(n, float(phi)), sigma_x=psi_x ** -0.5,
                        sigma_y=psi_y ** -0.5)

    return draw, draw_batch


def _sv_noise_density(noise, z):
    """Density of the emission noise law, available only for closed forms."""
    a, b, g = noise.alpha, noise.beta, noise.gamma_scale
    z = z - noise.delta
    if a == 2.0:
        var = 2.0 * g * g
        return np.exp(-0.5 * z * z / var) / np.sqrt(2.0 * np.pi * var)
    if a == 1.0 and b == 0.0:
        return g / (np.pi * (g * g + z * z))
    raise ValueError(
        f"no closed-form noise density for alpha={a}, beta={b}; "
        "use a simulation-based filter for this model")


def sv_spec(param_prior=None, param_prior_batch=None):
    """Stochastic volatility spec with stable emission noise."""

    def initial(params, rng, n):
        phi = np.asarray(params.phi, dtype=float)
        sd = params.sigma_eta / np.sqrt(1.0 - phi ** 2)
        return params.mu + sd * rng.standard_normal(n)

    def transition(x, params, rng):
        return (params.mu + params.phi * (x - params.mu)
                + params.sigma_eta * rng.standard_normal(x.shape[0]))

    def noise_sampler(params, rng, n):
        return sample_stable(params.noise, rng, size=n)

    def from_noise(x, eps, params):
        return np.exp(0.5 * x) * eps

    def emission(x, params, rng):
        return from_noise(x, noise_sampler(params, rng, x.shape[0]), params)

    def likelihood(x, y, params):
        scale = np.exp(0.5 * x)
        return _sv_noise_density(params.noise, y / scale) / scale

    def band(params, tail_prob):
        return (stable_quantile(tail_prob, params.noise),
                stable_quantile(1.0 - tail_prob, params.noise))

    return StateSpaceSpec(
        initial_sampler=initial,
        transition_sampler=transition,
        emission_sampler=emission,
        param_dim=3,
        param_prior_sampler=param_prior,
        param_prior_sampler_batch=param_prior_batch,
        likelihood_evaluator=likelihood,
        emission_noise_sampler=noise_sampler,
        emission_from_noise=from_noise,
        emission_noise_band=band,
    )


def sv_prior_gaussian(phi_cap=0.99, noise=StableParams(2.0, 0.0, 1.0, 0.0),
                      ig_shape=2.5, ig_scale=0.025):
    """Priors for the Gaussian-noise volatility model.

    mu ~ Normal(0, 1); phi ~ Beta(20, 1.5), redrawn while phi > phi_cap;
    sigma_eta^2 ~ InverseGamma(ig_shape, ig_scale). Returns (scalar_sampler,
    batch_sampler).
    """

    def _phi(rng, n):
        phi = rng.beta(20.0, 1.5, size=n)
        if phi_cap is not None:
            bad = phi > phi_cap
            while np.any(bad):
                phi[bad] = rng.beta(20.0, 1.5, size=int(bad.sum()))
                bad = phi > phi_cap
        return phi

    def draw_batch(rng, n):
        mu = rng.standard_normal(n)
        phi = _phi(rng, n)
        sigma2 = 1.0 / rng.gamma(ig_shape, 1.0 / ig_scale, size=n)
        return SVParams(mu=mu, phi=phi, sigma_eta=np.sqrt(sigma2), noise=noise)

    def draw(rng):
        p = draw_batch(rng, 1)
        return SVParams(mu=float(p.mu[0]), phi=float(p.phi[0]),
                        sigma_eta=float(p.sigma_eta[0]), noise=noise)

    return draw, draw_batch


class StableNoiseBatch:
    """Per-row stable noise parameters for vectorized prior simulation."""

    def __init__(self, alpha, beta, gamma_scale=1.0, delta=0.0):
        self.alpha = np.asarray(alpha, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.gamma_scale = gamma_scale
        self.delta = delta


def sample_stable_rows(noise_batch, rng):
    """One stable draw per row of a StableNoiseBatch (alpha > 1 rows only)."""
    a = noise_batch.alpha
    b = noise_batch.beta
    n = a.shape[0]
    V = rng.uniform(-np.pi / 2, np.pi / 2, size=n)
    W = rng.exponential(1.0, size=n)
    tau = np.where(a == 2.0, 0.0, np.tan(np.pi * a / 2))
    bt = b * tau
    B = np.arctan(bt) / a
    S = (1.0 + bt * bt) ** (1.0 / (2 * a))
    Z = (S * np.sin(a * (V + B)) / np.cos(V) ** (1.0 / a)
         * (np.cos(V - a * (V + B)) / W) ** ((1.0 - a) / a))
    return noise_batch.gamma_scale * Z + noise_batch.delta


def sv_prior_stable(sigma_eta=0.3, phi_cap=None):
    """Priors for the heavy-tailed volatility model.

    mu ~ Normal(0, 1); phi ~ Beta(20, 1.5); sigma_eta fixed; noise tail index
    alpha ~ Uniform(1, 2) and skewness beta ~ Uniform(-1, 1) with unit scale.
    Batch draws carry a StableNoiseBatch so per-row noise simulation works.
    """

    def draw(rng):
        mu = float(rng.standard_normal())
        phi = float(rng.beta(20.0, 1.5))
        if phi_cap is not None:
            while phi > phi_cap:
                phi = float(rng.beta(20.0, 1.5))
        alpha = float(rng.uniform(1.0, 2.0))
        beta = float(rng.uniform(-1.0, 1.0))
        return SVParams(mu=mu, phi=phi, sigma_eta=sigma_eta,
                        noise=StableParams(alpha, beta, 1.0, 0.0))

    def draw_batch(rng, n):
        mu = rng.standard_normal(n)
        phi = rng.beta(20.0, 1.5, size=n)
        if phi_cap is not None:
            bad = phi > phi_cap
            while np.any(bad):
                phi[bad] = rng.beta(20.0, 1.5, size=int(bad.sum()))
                bad = phi > phi_cap
        alpha = rng.uniform(1.0, 2.0, size=n)
        beta = rng.uniform(-1.0, 1.0, size=n)
        return SVParams(mu=mu, phi=phi, sigma_eta=np.full(n, sigma_eta),
                        noise=StableNoiseBatch(alpha, beta))

    return draw, draw_batch


def sv_spec_stable_batch(param_prior=None, param_prior_batch=None):
    """Volatility spec whose noise parameters may vary per row.

    Used for building pre-training datasets under the heavy-tailed prior;
    the noise field of the batch params is a StableNoiseBatch.
    """

    def initial(params, rng, n):
        phi = np.asarray(params.phi, dtype=float)
        sd = params.sigma_eta / np.sqrt(1.0 - phi ** 2)
        return params.mu + sd * rng.standard_normal(n)

    def transition(x, params, rng):
        return (params.mu + params.phi * (x - params.mu)
                + params.sigma_eta * rng.standard_normal(x.shape[0]))

    def noise_sampler(params, rng, n):
        return sample_stable_rows(params.noise, rng)

    def from_noise(x, eps, params):
        return np.exp(0.5 * x) * eps

    def emission(x, params, rng):
        return from_noise(x, noise_sampler(params, rng, x.shape[0]), params)

    return StateSpaceSpec(
        initial_sampler=initial,
        transition_sampler=transition,
        emission_sampler=emission,
        param_dim=4,
        param_prior_sampler=param_prior,
        param_prior_sampler_batch=param_prior_batch,
        emission_noise_sampler=noise_sampler,
        emission_from_noise=from_noise,
    )


# ---------------------------------------------------------------------------
# batch serialization


def save_batch_csv(batch, path):
    """Write a trajectory batch as rows (replicate, t, x, y); y empty at t=0."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "t", "x", "y"])
        for i in range(batch.n):
            writer.writerow([i, 0, repr(float(batch.states[i, 0])), ""])
            for t in range(1, batch.horizon + 1):
                writer.writerow([i, t, repr(float(batch.states[i, t])),
                                 repr(float(batch.observations[i, t - 1]))])


def load_batch_csv(path):
    """Read a trajectory batch written by save_batch_csv."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            i = int(rec["replicate"])
            t = int(rec["t"])
            rows.setdefault(i, {})[t] = (
                float(rec["x"]), float(rec["y"]) if rec["y"] else None)
    n = len(rows)
    T = max(rows[0]) if rows else 0
    states = np.empty((n, T + 1))
    obs = np.empty((n, T))
    for i, by_t in rows.items():
        for t, (x, y) in by_t.items():
            states[i, t] = x
            if t > 0:
                obs[i, t - 1] = y
    return TrajectoryBatch(states, obs)


_BATCH_MAGIC = b"GSMB"
_BATCH_VERSION = 1


def save_batch_binary(batch, path):
    """Binary batch format: magic, u32 version, u64 N, u64 T, float64 LE data.

    Per replicate, T+1 states followed by T observations.
    """
    with open(path, "wb") as fh:
        fh.write(_BATCH_MAGIC)
        fh.write(struct.pack("<IQQ", _BATCH_VERSION, batch.n, batch.horizon))
        for i in range(batch.n):
            fh.write(batch.states[i].astype("<f8").tobytes())
            fh.write(batch.observations[i].astype("<f8").tobytes())


def load_batch_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BATCH_MAGIC:
            raise ValueError(f"not a trajectory batch file: magic {magic!r}")
        version, n, T = struct.unpack("<IQQ", fh.read(20))
        if version != _BATCH_VERSION:
            raise ValueError(f"unsupported batch format version {version}")
        states = np.empty((n, T + 1))
        obs = np.empty((n, T))
        for i in range(n):
            states[i] = np.frombuffer(fh.read(8 * (T + 1)), dtype="<f8")
            obs[i] = np.frombuffer(fh.read(8 * T), dtype="<f8")
    return TrajectoryBatch(states, obs)
