"""Sequential filtering with learned inverse-CDF maps.

Two regimes: the per-step filter retrains a small quantile net at every
time step on simulated (state, pseudo-observation) pairs and conditions it
on the realized observation; the pre-trained variant fits one net against
a fixed-length summary of the observation history and then filters any
series without further training. A moment-recursion variant conditions on
the previous step's posterior mean and variance instead of raw history.
"""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ExtrapolationWarning,
    FilterInfeasible,
    SimulationFailure,
    TrainingDiverged,
)
from .models import simulate_batch
from .qnn import QnnConfig, QuantileDataset, TrainConfig, train_qnn

__all__ = [
    "SummarySpec",
    "FilterOutput",
    "lag_window",
    "moment_summary",
    "apply_summary",
    "gen_filter_run",
    "pretrain_summary_map",
    "pretrained_filter_run",
    "pretrain_moment_map",
    "moment_summary_filter",
]

_SUMMARY_Q = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class SummarySpec:
    """Fixed-dimension summary of an observation history."""

    kind: str
    lag: int = 0
    n_moments: int = 0
    pad_value: float | None = None
    func: object = None
    custom_dim: int = 0

    def __post_init__(self):
        if self.kind == "lag_window":
            if self.lag < 0:
                raise ValueError("lag must be nonnegative")
        elif self.kind == "moment_summary":
            if self.n_moments < 1:
                raise ValueError("need at least one moment")
        elif self.kind == "custom":
            if self.func is None or self.custom_dim < 1:
                raise ValueError("custom summaries need func and custom_dim")
        else:
            raise ValueError(f"unknown summary kind {self.kind!r}")

    @property
    def dim(self):
        if self.kind == "lag_window":
            return self.lag + 1
        if self.kind == "moment_summary":
            return self.n_moments
        return self.custom_dim


def lag_window(lag, pad_value=None):
    """Window (y_{t-l}, ..., y_t); pad_value None defers to a fitted mean."""
    return SummarySpec(kind="lag_window", lag=lag, pad_value=pad_value)


def moment_summary(n_moments):
    return SummarySpec(kind="moment_summary", n_moments=n_moments)


def _resolve_pad(s, fitted_pad=None):
    if s.pad_value is not None:
        return s.pad_value
    if fitted_pad is not None:
        return fitted_pad
    return 0.0


def apply_summary(s, history, fitted_pad=None):
    """Summarize y_{1:t}; pure function of its inputs."""
    y = np.asarray(history, dtype=float).ravel()
    if y.size < 1:
        raise ValueError("history must contain at least one observation")
    if s.kind == "lag_window":
        width = s.lag + 1
        if y.size >= width:
            return y[-width:].copy()
        pad = _resolve_pad(s, fitted_pad)
        return np.concatenate([np.full(width - y.size, pad), y])
    if s.kind == "moment_summary":
        out = np.empty(s.n_moments)
        out[0] = y.mean()
        if s.n_moments > 1:
            centred = y - out[0]
            out[1] = np.mean(centred ** 2)
            for k in range(3, s.n_moments + 1):
                out[k - 1] = np.mean(centred ** k)
        return out
    return np.asarray(s.func(y), dtype=float)


def _window_matrix(obs, lag):
    # final-window summaries for a batch of equal-length histories; the
    # training horizon always exceeds the lag so no padding is involved
    if obs.shape[1] < lag + 1:
        raise ValueError("training horizon shorter than the summary window")
    return obs[:, -(lag + 1):]


@dataclass
class FilterOutput:
    """Per-step posterior draw matrix plus per-step training diagnostics."""

    draws: np.ndarray
    train_loss: np.ndarray
    wall_time: np.ndarray

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2:
            raise ValueError("draws must be a (T, n_post) matrix")
        self.train_loss = np.asarray(self.train_loss, dtype=float)
        self.wall_time = np.asarray(self.wall_time, dtype=float)
        if not (len(self.train_loss) == len(self.wall_time) == self.horizon):
            raise ValueError("diagnostics must align with the horizon")

    @property
    def horizon(self):
        return self.draws.shape[0]

    @property
    def n_post(self):
        return self.draws.shape[1]

    @property
    def means(self):
        return self.draws.mean(axis=1)

    @property
    def variances(self):
        return self.draws.var(axis=1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "draw_index", "x"])
            for t in range(self.horizon):
                for i, x in enumerate(self.draws[t]):
                    writer.writerow([t + 1, i, f"{x:.12g}"])

    def summary_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mean", "sd", "q05", "q25", "q50", "q75",
                             "q95"])
            for t in range(self.horizon):
                row = self.draws[t]
                qs = np.quantile(row, _SUMMARY_Q)
                writer.writerow([t + 1, f"{row.mean():.12g}",
                                 f"{row.std():.12g}"]
                                + [f"{q:.12g}" for q in qs])


def _fresh_u(rng, n):
    return np.clip(rng.random(n), 1e-12, 1.0 - 1e-12)


def _step_emissions(spec, params, states, rng, rare_event_prob):
    """Pseudo-observations for one step, regenerating banded noise draws."""
    if rare_event_prob is None:
        y = spec.emission_sampler(states, params, rng)
        if not np.all(np.isfinite(y)):
            raise SimulationFailure(0)
        return y
    if (spec.emission_noise_sampler is None or spec.emission_from_noise is None
            or spec.emission_noise_band is None):
        raise ValueError("model lacks the noise decomposition the band needs")
    lo, hi = spec.emission_noise_band(params, rare_event_prob)
    noise = spec.emission_noise_sampler(params, rng, states.size)
    bad = (noise < lo) | (noise > hi)
    budget = 1000
    while np.any(bad):
        budget -= 1
        if budget == 0:
            raise FilterInfeasible(
                "emission-noise band too tight to satisfy by resampling")
        noise[bad] = spec.emission_noise_sampler(params, rng, int(bad.sum()))
        bad = (noise < lo) | (noise > hi)
    return spec.emission_from_noise(states, noise, params)


def gen_filter_run(spec, params, y, n_train, qc=None, tc=None, rng=None,
                   warm_start=True, tc_first=None, rare_event_prob=None,
                   skip_update=False):
    """Filter y by retraining an inverse-CDF map at every step.

    Each step propagates the previous posterior draws through the
    transition (no reweighting), simulates pseudo-observations, fits the
    map on those pairs, and reads posterior draws off the map at the
    realized y_t. skip_update short-circuits the conditioning and returns
    the raw predictive draws, which is the pure-propagation baseline.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("observation series is empty")
    qc = qc or QnnConfig()
    tc = tc or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng()
    if n_train < tc.batch_size:
        raise ValueError("n_train must cover at least one batch")

    draws = np.empty((y.size, n_train))
    losses = np.full(y.size, np.nan)
    walls = np.empty(y.size)
    current = spec.initial_sampler(params, rng, n_train)
    net = None
    for t in range(y.size):
        t0 = time.perf_counter()
        predictive = spec.transition_sampler(current, params, rng)
        if not np.all(np.isfinite(predictive)):
            raise SimulationFailure(t + 1)
        if skip_update:
            current = predictive
            draws[t] = predictive
            walls[t] = time.perf_counter() - t0
            continue
        pseudo = _step_emissions(spec, params, predictive, rng,
                                 rare_event_prob)
        data = QuantileDataset(pseudo[:, None], predictive, _fresh_u(rng, n_train))
        step_tc = tc_first if (t == 0 and tc_first is not None) else tc
        try:
            net = train_qnn(data, qc, step_tc, rng=rng,
                            init_net=net if warm_start else None)
        except TrainingDiverged as err:
            raise TrainingDiverged(err.epoch, t=t + 1) from err
        current = net.forward(np.array([y[t]]), _fresh_u(rng, n_train))
        draws[t] = current
        losses[t] = net.aux["monitor_loss_final"]
        walls[t] = time.perf_counter() - t0
    return FilterOutput(draws=draws, train_loss=losses, wall_time=walls)


def pretrain_summary_map(spec, params, s, horizon, n_train, qc=None, tc=None,
                         rng=None, chunk_size=50_000, rare_event_prob=None):
    """One summary-conditioned map: state at the horizon given S(y_{1:horizon}).

    Simulates n_train independent paths (chunked to bound memory), reduces
    each to its summary vector, and fits the net on (summary, x_horizon)
    pairs. The fitted observation mean is stored on the net for later
    padding of short histories.
    """
    if s.kind != "lag_window":
        raise ValueError("pre-training currently understands lag windows")
    if horizon < s.lag + 1:
        raise ValueError("horizon must cover the summary window")
    qc = qc or QnnConfig()
    tc = tc or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng()

    feats = np.empty((n_train, s.dim))
    targets = np.empty(n_train)
    obs_total = 0.0
    obs_count = 0
    done = 0
    while done < n_train:
        n = min(chunk_size, n_train - done)
        batch = simulate_batch(spec, params, n, horizon, rng,
                               rare_event_filter=rare_event_prob)
        feats[done:done + n] = _window_matrix(batch.observations, s.lag)
        targets[done:done + n] = batch.states[:, -1]
        obs_total += float(batch.observations.sum())
        obs_count += batch.observations.size
        done += n
    data = QuantileDataset(feats, targets, _fresh_u(rng, n_train))
    net = train_qnn(data, qc, tc, rng=rng)
    fitted_pad = (s.pad_value if s.pad_value is not None
                  else obs_total / obs_count)
    net.aux["summary"] = {"kind": s.kind, "lag": s.lag,
                          "pad": float(fitted_pad)}
    return net


def pretrained_filter_run(net, s, y, n_post, rng):
    """Filter a series through an already-trained summary map; no training."""
    if not net.trained_flag:
        raise ValueError("net has not been trained")
    if s.dim != net.feature_dim:
        raise ValueError(
            f"summary dim {s.dim} does not match net features {net.feature_dim}")
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("observation series is empty")
    fitted_pad = net.aux.get("summary", {}).get("pad")
    draws = np.empty((y.size, n_post))
    walls = np.empty(y.size)
    losses = np.full(y.size, np.nan)
    for t in range(y.size):
        t0 = time.perf_counter()
        window = apply_summary(s, y[:t + 1], fitted_pad=fitted_pad)
        draws[t] = net.forward(window, _fresh_u(rng, n_post))
        walls[t] = time.perf_counter() - t0
    return FilterOutput(draws=draws, train_loss=losses, wall_time=walls)


def pretrain_moment_map(spec, params, mean_range, var_range, n_train,
                        qc=None, tc=None, rng=None):
    """Map conditioned on (y_t, prior mean, prior variance) quadruples.

    Moments are drawn uniformly over the declared ranges; the previous
    state is drawn from the matching normal, pushed through one transition
    and emission. The ranges ride along on the net so the recursive filter
    can flag extrapolation.
    """
    m_lo, m_hi = mean_range
    v_lo, v_hi = var_range
    if not (m_hi > m_lo and v_hi > v_lo and v_lo >= 0.0):
        raise ValueError("moment ranges must be ordered, variance nonnegative")
    qc = qc or QnnConfig()
    tc = tc or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng()

    m = rng.uniform(m_lo, m_hi, n_train)
    v = rng.uniform(v_lo, v_hi, n_train)
    x_prev = m + np.sqrt(v) * rng.standard_normal(n_train)
    x = spec.transition_sampler(x_prev, params, rng)
    yy = spec.emission_sampler(x, params, rng)
    feats = np.column_stack([yy, m, v])
    data = QuantileDataset(feats, x, _fresh_u(rng, n_train))
    net = train_qnn(data, qc, tc, rng=rng)
    net.aux["moment_ranges"] = {"mean": (float(m_lo), float(m_hi)),
                                "var": (float(v_lo), float(v_hi))}
    return net


def moment_summary_filter(net, y, initial_moments, n_post, rng):
    """Recursive filter carrying (mean, variance) as the state summary."""
    if not net.trained_flag:
        raise ValueError("net has not been trained")
    if net.feature_dim != 3:
        raise ValueError("moment filter nets take (y, mean, variance) inputs")
    ranges = net.aux.get("moment_ranges")
    y = np.asarray(y, dtype=float).ravel()
    m, v = float(initial_moments[0]), float(initial_moments[1])
    draws = np.empty((y.size, n_post))
    walls = np.empty(y.size)
    losses = np.full(y.size, np.nan)
    for t in range(y.size):
        t0 = time.perf_counter()
        if ranges is not None:
            (m_lo, m_hi) = ranges["mean"]
            (v_lo, v_hi) = ranges["var"]
            if not (m_lo <= m <= m_hi and v_lo <= v <= v_hi):
                warnings.warn(ExtrapolationWarning(
                    f"step {t + 1}: moments ({m:.4g}, {v:.4g}) leave the "
                    f"training ranges"))
        draws[t] = net.forward(np.array([y[t], m, v]), _fresh_u(rng, n_post))
        m = float(draws[t].mean())
        v = float(draws[t].var())
        walls[t] = time.perf_counter() - t0
    return FilterOutput(draws=draws, train_loss=losses, wall_time=walls)
