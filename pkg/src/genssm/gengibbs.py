"""Joint state and parameter inference with learned conditional maps.

Pre-training simulates (parameters, path, observations) triples from the
prior and the model, then fits one inverse-CDF net per full conditional:
a filter map for the terminal state, a smoother map for the backward
pass, and one map per parameter block. The sampler then alternates a
forward-filter-backward-sample pass for the states with block updates
for the parameters, all driven by uniform draws through the nets.

Also here: the summary statistics the maps condition on (observation,
state, and residual based), an exact Metropolis-within-Gibbs update for
the level and persistence of an AR(1) log-volatility, the hybrid sampler
that mixes both, and posterior-predictive generation from a chain.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import DegenerateSummaryError, TrainingDiverged
from .genfilter import SummarySpec, lag_window
from .models import simulate_batch
from .qnn import QnnConfig, QuantileDataset, TrainConfig, train_qnn

__all__ = [
    "ResidualSummaries",
    "ParamBlock",
    "MapBank",
    "GibbsChain",
    "PredictiveDraws",
    "obs_summaries",
    "obs_summaries_batch",
    "state_summaries",
    "state_summaries_batch",
    "residual_summaries",
    "residual_summaries_batch",
    "pretrain_gengibbs_maps",
    "build_lg_bank",
    "build_sv_bank",
    "build_stable_sv_bank",
    "gengibbs_run",
    "gengibbs_run_many",
    "mh_update_gamma_phi",
    "gengibbs_sv_stable_run",
    "posterior_predictive_draws",
    "lg_chain_emission",
    "sv_chain_emission",
]

logger = logging.getLogger("genssm.gengibbs")

_ECF_GRID = np.geomspace(0.1, 5.0, 20)
_OBS_Q = (0.05, 0.25, 0.5, 0.75, 0.95)


# ---------------------------------------------------------------------------
# summary statistics


def obs_summaries_batch(Y):
    """Observation summaries per row: mean, variance, autocovariances at
    lags 1/3/5, and five quantiles. Shape (n, 10)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("expected a (n, T) observation matrix")
    n, T = Y.shape
    if T < 6:
        raise ValueError("observation summaries need T >= 6")
    mean = Y.mean(axis=1)
    var = Y.var(axis=1, ddof=1)
    centred = Y - mean[:, None]
    out = np.empty((n, 10))
    out[:, 0] = mean
    out[:, 1] = var
    for j, k in enumerate((1, 3, 5)):
        out[:, 2 + j] = (centred[:, k:] * centred[:, :-k]).sum(axis=1) / (T - k)
    out[:, 5:] = np.quantile(Y, _OBS_Q, axis=1, method="inverted_cdf").T
    return out


def obs_summaries(y):
    """Summaries of one observed series; see obs_summaries_batch."""
    return obs_summaries_batch(np.asarray(y, dtype=float)[None, :])[0]


def state_summaries_batch(X):
    """State summaries per row: path mean, lag-1 least-squares coefficient,
    and mean squared regression residual. Shape (n, 3)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a (n, T+1) state matrix")
    n, L = X.shape
    if L < 3:
        raise ValueError("state summaries need at least three states")
    prev, curr = X[:, :-1], X[:, 1:]
    pm = prev.mean(axis=1)
    cm = curr.mean(axis=1)
    dp = prev - pm[:, None]
    denom = (dp ** 2).sum(axis=1)
    if np.any(denom == 0.0):
        raise DegenerateSummaryError(
            "constant state path: autoregression coefficient undefined")
    slope = (dp * (curr - cm[:, None])).sum(axis=1) / denom
    resid = curr - cm[:, None] - slope[:, None] * dp
    out = np.empty((n, 3))
    out[:, 0] = X.mean(axis=1)
    out[:, 1] = slope
    out[:, 2] = (resid ** 2).mean(axis=1)
    return out


def state_summaries(x):
    return state_summaries_batch(np.asarray(x, dtype=float)[None, :])[0]


@dataclass(frozen=True)
class ResidualSummaries:
    """Tail and asymmetry statistics of standardized residuals.

    alpha_block: (ecf_slope, phase_slope, hill_tail_index, outer_inner
    spread ratio); beta_block: (quantile_asymmetry, sign_imbalance,
    tail_ratio, extreme_quantile_skew).
    """

    alpha_block: tuple
    beta_block: tuple

    def __post_init__(self):
        qa, sign, tail, _ = self.beta_block
        if not 0.0 <= sign <= 1.0:
            raise ValueError("sign imbalance must lie in [0, 1]")
        if not tail > 0.0:
            raise ValueError("tail ratio must be positive")
        if not -1.0 <= qa <= 1.0:
            raise ValueError("quantile asymmetry must lie in [-1, 1]")

    @property
    def vector(self):
        return np.array(self.alpha_block + self.beta_block)


def residual_summaries_batch(E):
    """Residual summaries per row, columns ordered as the tail-focused
    four then the asymmetry-focused four. Shape (n, 8)."""
    E = np.asarray(E, dtype=float)
    if E.ndim != 2:
        raise ValueError("expected a (n, T) residual matrix")
    n, T = E.shape
    if T < 50:
        raise ValueError("residual summaries need T >= 50")
    if np.any(np.ptp(E, axis=1) == 0.0):
        raise DegenerateSummaryError("identical residuals in a row")

    # empirical characteristic function on the fixed grid
    mod = np.empty((n, _ECF_GRID.size))
    phase = np.empty((n, _ECF_GRID.size))
    for j, t in enumerate(_ECF_GRID):
        c = np.cos(t * E).mean(axis=1)
        s = np.sin(t * E).mean(axis=1)
        mod[:, j] = np.hypot(c, s)
        phase[:, j] = np.arctan2(s, c)

    def _slope(xg, Yv):
        xc = xg - xg.mean()
        return (Yv - Yv.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)

    neglog = -np.log(np.clip(mod, 1e-300, 1.0 - 1e-16))
    ecf_slope = _slope(np.log(_ECF_GRID),
                       np.log(np.clip(neglog, 1e-300, None)))
    phase_slope = _slope(_ECF_GRID, phase / _ECF_GRID[None, :])

    srt = np.sort(np.abs(E), axis=1)[:, ::-1]
    k = int(np.floor(0.1 * T))
    if np.any(srt[:, k] <= 0.0):
        raise DegenerateSummaryError("too many zero residuals for tail index")
    hill = 1.0 / (np.log(srt[:, :k]).mean(axis=1) - np.log(srt[:, k]))

    levels = (0.01, 0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975, 0.99)
    q = np.quantile(E, levels, axis=1, method="inverted_cdf")
    q01, q025, q05, q25, q50, q75, q95, q975, q99 = q
    for bottom in (q95 - q05, q75 - q25, np.abs(q05 - q50), q99 - q01):
        if np.any(bottom == 0.0):
            raise DegenerateSummaryError("flat residual quantiles")
    out = np.empty((n, 8))
    out[:, 0] = ecf_slope
    out[:, 1] = phase_slope
    out[:, 2] = hill
    out[:, 3] = (q975 - q025) / (q75 - q25)
    out[:, 4] = (q95 + q05 - 2.0 * q50) / (q95 - q05)
    out[:, 5] = (E > 0.0).mean(axis=1)
    out[:, 6] = np.abs(q95 - q50) / np.abs(q05 - q50)
    out[:, 7] = (q99 + q01 - 2.0 * q50) / (q99 - q01)
    return out


def residual_summaries(eps):
    v = residual_summaries_batch(np.asarray(eps, dtype=float)[None, :])[0]
    return ResidualSummaries(alpha_block=tuple(v[:4]), beta_block=tuple(v[4:]))


# ---------------------------------------------------------------------------
# parameter blocks and the map bank


@dataclass(frozen=True)
class ParamBlock:
    """One Gibbs block: how to read it off a parameter batch, the scale
    the net works on, and its prior support.

    transform: identity | log | logit. log maps (lo, inf), logit maps
    (lo, hi); both make generated draws respect the support by
    construction. conditions_on restricts which other blocks appear as
    features (None means all of them). s_slice picks the theta-summary
    columns this block's map sees (None means all).
    """

    name: str
    extract: Callable[[Any], np.ndarray]
    transform: str = "identity"
    lo: float = -np.inf
    hi: float = np.inf
    init_raw: float = 0.0
    mapped: bool = True
    conditions_on: Optional[tuple] = None
    s_slice: Optional[tuple] = None

    def __post_init__(self):
        if self.transform not in ("identity", "log", "logit"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.transform == "log" and not np.isfinite(self.lo):
            raise ValueError("log transform needs a finite lower bound")
        if self.transform == "logit" and not (np.isfinite(self.lo)
                                              and np.isfinite(self.hi)):
            raise ValueError("logit transform needs finite bounds")

    def to_z(self, v):
        v = np.asarray(v, dtype=float)
        if self.transform == "log":
            return np.log(np.maximum(v - self.lo, 1e-300))
        if self.transform == "logit":
            span = self.hi - self.lo
            p = np.clip((v - self.lo) / span, 1e-12, 1.0 - 1e-12)
            return np.log(p / (1.0 - p))
        return v

    def to_raw(self, z):
        z = np.asarray(z, dtype=float)
        if self.transform == "log":
            return self.lo + np.exp(np.clip(z, -700.0, 700.0))
        if self.transform == "logit":
            return self.lo + (self.hi - self.lo) / (
                1.0 + np.exp(-np.clip(z, -700.0, 700.0)))
        return np.clip(z, self.lo, self.hi)


@dataclass
class MapBank:
    """Trained conditional maps plus everything needed to run sweeps."""

    filter_map: Any
    smoother_map: Any
    param_maps: dict
    blocks: tuple
    s_y: SummarySpec
    s_y_pad: float
    s_theta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    horizon: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")
        for b in self.blocks:
            if b.mapped and b.name not in self.param_maps:
                raise ValueError(f"no trained map for block {b.name!r}")
        ksum = self.s_y.dim
        want = ksum + len(self.blocks)
        if self.filter_map.feature_dim != want:
            raise ValueError("filter map feature dimension is inconsistent "
                             "with the summaries")
        if self.smoother_map.feature_dim != want + 1:
            raise ValueError("smoother map feature dimension is inconsistent "
                             "with the summaries")

    @property
    def block_names(self):
        return tuple(b.name for b in self.blocks)

    def theta_to_z(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return np.column_stack([b.to_z(theta[:, i])
                                for i, b in enumerate(self.blocks)])

    def z_to_theta(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.column_stack([b.to_raw(z[:, i])
                                for i, b in enumerate(self.blocks)])

    def block_features(self, b_index, z, s_theta_vals):
        block = self.blocks[b_index]
        if block.conditions_on is None:
            others = [j for j in range(len(self.blocks)) if j != b_index]
        else:
            names = self.block_names
            others = [names.index(n) for n in block.conditions_on]
        cols = [z[:, others]] if others else []
        sl = block.s_slice
        svals = s_theta_vals if sl is None else s_theta_vals[:, sl[0]:sl[1]]
        cols.append(svals)
        return np.column_stack(cols)


# ---------------------------------------------------------------------------
# pre-training


def _u_draws(rng, n):
    return np.clip(rng.random(n), 1e-12, 1.0 - 1e-12)


def _train_named(name, feats, targets, qc, tc, rng):
    data = QuantileDataset(feats, targets, _u_draws(rng, len(targets)))
    try:
        return train_qnn(data, qc, tc, rng=rng)
    except TrainingDiverged as err:
        raise TrainingDiverged(
            err.epoch, message=f"training diverged for map {name!r} "
            f"at epoch {err.epoch}") from err


def pretrain_gengibbs_maps(spec, blocks, s_y, s_theta, T, n_train, qc=None,
                           tc=None, rng=None, chunk_size=25_000,
                           metadata=None, tc_params=None):
    """Fit the filter, smoother, and per-block maps from joint simulations.

    Each simulated path contributes one filter row (terminal state against
    the final observation window), one smoother row, and one row per
    parameter block. Smoother times are drawn half uniformly over 0..T-1
    and half from the early region where windows carry padding, which is
    otherwise too thinly covered for the backward pass to be accurate
    there. Priors with support restrictions (e.g. a persistence cap)
    implement them inside the batch prior sampler. tc_params, when given,
    trains the parameter-block maps on its own schedule; they are much
    cheaper per epoch than the state maps and usually want more epochs.
    """
    if spec.param_prior_sampler_batch is None:
        raise ValueError("bank pre-training needs a batch prior sampler")
    if s_y.kind != "lag_window":
        raise ValueError("the sweep summaries must be lag windows")
    if T < 2:
        raise ValueError("horizon too short for a backward pass")
    qc = qc or QnnConfig()
    tc = tc or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng()
    blocks = tuple(blocks)
    P = len(blocks)
    lag = s_y.lag
    ksum = lag + 1

    f_feats = np.empty((n_train, ksum + P))
    f_targets = np.empty(n_train)
    sm_feats = np.empty((n_train, 1 + ksum + P))
    sm_targets = np.empty(n_train)
    th_store = np.empty((n_train, P))
    sth_dim = None
    sth_store = None

    pad = s_y.pad_value
    done = 0
    while done < n_train:
        m = min(chunk_size, n_train - done)
        params = spec.param_prior_sampler_batch(rng, m)
        batch = simulate_batch(spec, params, m, T, rng)
        obs, states = batch.observations, batch.states
        if pad is None:
            # frozen on the first chunk so later chunks see the same value
            pad = float(obs.mean())
        z = np.column_stack([b.to_z(b.extract(params)) for b in blocks])
        padded = np.concatenate([np.full((m, ksum), pad), obs], axis=1)

        sl = slice(done, done + m)
        f_feats[sl, :ksum] = padded[:, T:T + ksum]
        f_feats[sl, ksum:] = z
        f_targets[sl] = states[:, T]

        t_uni = rng.integers(0, T, size=m)
        t_early = rng.integers(0, min(lag, T - 1) + 1, size=m)
        t_pick = np.where(rng.random(m) < 0.5, t_uni, t_early)
        rows = np.arange(m)
        sm_feats[sl, 0] = states[rows, t_pick + 1]
        wins = padded[rows[:, None], t_pick[:, None] + np.arange(ksum)[None, :]]
        sm_feats[sl, 1:1 + ksum] = wins
        sm_feats[sl, 1 + ksum:] = z
        sm_targets[sl] = states[rows, t_pick]

        sth = s_theta(states, obs)
        if sth_store is None:
            sth_dim = sth.shape[1]
            sth_store = np.empty((n_train, sth_dim))
        sth_store[sl] = sth
        th_store[sl] = z
        done += m

    filter_map = _train_named("filter", f_feats, f_targets, qc, tc, rng)
    del f_feats
    smoother_map = _train_named("smoother", sm_feats, sm_targets, qc, tc, rng)
    del sm_feats

    bank_for_feats = None
    param_maps = {}
    for i, b in enumerate(blocks):
        if not b.mapped:
            continue
        if b.conditions_on is None:
            others = [j for j in range(P) if j != i]
        else:
            names = [bb.name for bb in blocks]
            others = [names.index(n) for n in b.conditions_on]
        sl_cols = (sth_store if b.s_slice is None
                   else sth_store[:, b.s_slice[0]:b.s_slice[1]])
        cols = ([th_store[:, others]] if others else []) + [sl_cols]
        feats = np.column_stack(cols)
        param_maps[b.name] = _train_named(b.name, feats, th_store[:, i],
                                          qc, tc_params or tc, rng)

    meta = dict(metadata or {})
    meta.update({"n_train": int(n_train), "horizon": int(T),
                 "s_y_lag": int(lag), "s_theta_dim": int(sth_dim)})
    return MapBank(filter_map=filter_map, smoother_map=smoother_map,
                   param_maps=param_maps, blocks=blocks, s_y=s_y,
                   s_y_pad=float(pad), s_theta=s_theta, horizon=int(T),
                   metadata=meta)


# concrete banks ------------------------------------------------------------


def lg_suffstat_summary(phi):
    """Log sums of squared innovations and observation errors."""

    def s_theta(X, Y):
        ssx = ((X[:, 1:] - phi * X[:, :-1]) ** 2).sum(axis=1)
        ssy = ((Y - X[:, 1:]) ** 2).sum(axis=1)
        return np.column_stack([np.log(np.maximum(ssx, 1e-300)),
                                np.log(np.maximum(ssy, 1e-300))])

    return s_theta


def sv_appendix_summary(X, Y):
    """Observation summaries next to state summaries, 13 columns."""
    return np.column_stack([obs_summaries_batch(Y), state_summaries_batch(X)])


def sv_residual_summary(X, Y):
    return residual_summaries_batch(Y * np.exp(-0.5 * X[:, 1:]))


S_THETA_REGISTRY = {
    "lg_suffstats": lambda meta: lg_suffstat_summary(meta["phi"]),
    "sv_appendix": lambda meta: sv_appendix_summary,
    "sv_residuals": lambda meta: sv_residual_summary,
}


def lg_blocks(prior_mean=1.0):
    return (
        ParamBlock("psi_x", lambda p: np.asarray(p.psi_x, dtype=float),
                   transform="log", lo=0.0, init_raw=prior_mean),
        ParamBlock("psi_y", lambda p: np.asarray(p.psi_y, dtype=float),
                   transform="log", lo=0.0, init_raw=prior_mean),
    )


def build_lg_bank(phi, prior_batch, T, n_train, qc=None, tc=None, rng=None,
                  lag=50, chunk_size=25_000, tc_params=None):
    """Bank for the linear model with unknown precisions, persistence fixed."""
    from .models import lg_spec

    spec = lg_spec(param_prior_batch=prior_batch)
    blocks = lg_blocks()
    return pretrain_gengibbs_maps(
        spec, blocks, lag_window(lag), lg_suffstat_summary(phi), T, n_train,
        qc=qc, tc=tc, rng=rng, chunk_size=chunk_size, tc_params=tc_params,
        metadata={"model": "lg", "phi": float(phi),
                  "s_theta": "lg_suffstats"})


def sv_blocks():
    return (
        ParamBlock("mu", lambda p: np.asarray(p.mu, dtype=float),
                   init_raw=0.0),
        ParamBlock("phi", lambda p: np.asarray(p.phi, dtype=float),
                   transform="logit", lo=0.0, hi=1.0, init_raw=20.0 / 21.5),
        ParamBlock("sigma_eta", lambda p: np.asarray(p.sigma_eta, dtype=float),
                   transform="log", lo=0.0, init_raw=0.13),
    )


def build_sv_bank(prior_batch, T, n_train, qc=None, tc=None, rng=None,
                  lag=50, chunk_size=25_000, tc_params=None):
    """Bank for the Gaussian volatility model, all three parameters mapped."""
    from .models import sv_spec

    spec = sv_spec(param_prior_batch=prior_batch)
    return pretrain_gengibbs_maps(
        spec, sv_blocks(), lag_window(lag), sv_appendix_summary, T, n_train,
        qc=qc, tc=tc, rng=rng, chunk_size=chunk_size, tc_params=tc_params,
        metadata={"model": "sv", "s_theta": "sv_appendix"})


def stable_sv_blocks():
    return (
        ParamBlock("mu", lambda p: np.asarray(p.mu, dtype=float),
                   mapped=False, init_raw=0.0),
        ParamBlock("phi", lambda p: np.asarray(p.phi, dtype=float),
                   transform="logit", lo=0.0, hi=1.0, mapped=False,
                   init_raw=20.0 / 21.5),
        ParamBlock("alpha", lambda p: np.asarray(p.noise.alpha, dtype=float),
                   transform="logit", lo=1.0, hi=2.0, init_raw=1.5,
                   conditions_on=("beta",), s_slice=(0, 4)),
        ParamBlock("beta", lambda p: np.asarray(p.noise.beta, dtype=float),
                   transform="logit", lo=-1.0, hi=1.0, init_raw=0.0,
                   conditions_on=("alpha",), s_slice=(4, 8)),
    )


def build_stable_sv_bank(prior_batch, T, n_train, qc=None, tc=None, rng=None,
                         lag=50, chunk_size=25_000, tc_params=None):
    """Bank for the heavy-tailed volatility model.

    The level and persistence blocks are carried as map inputs but not
    mapped; the hybrid sampler updates them with exact conditionals. The
    noise-shape blocks condition on residual summaries only.
    """
    from .models import sv_spec_stable_batch

    spec = sv_spec_stable_batch(param_prior_batch=prior_batch)
    return pretrain_gengibbs_maps(
        spec, stable_sv_blocks(), lag_window(lag), sv_residual_summary, T,
        n_train, qc=qc, tc=tc, rng=rng, chunk_size=chunk_size, tc_params=tc_params,
        metadata={"model": "sv_stable", "s_theta": "sv_residuals"})


# ---------------------------------------------------------------------------
# chains


def _autocorr_ess(v):
    v = np.asarray(v, dtype=float)
    M = v.size
    c = v - v.mean()
    denom = float(c @ c)
    if denom == 0.0 or M < 4:
        return float(M)
    s = 1.0
    for k in range(1, M // 3):
        rho = float(c[:-k] @ c[k:]) / denom
        if rho <= 0.0:
            break
        s += 2.0 * rho
    return float(M / s)


@dataclass
class GibbsChain:
    """All M sweeps of one chain, with a burn-in marker."""

    theta: np.ndarray
    block_names: tuple
    burn_in: int
    states: Optional[np.ndarray] = None
    acceptance: dict = field(default_factory=dict)
    anomalies: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 2 or self.theta.shape[1] != len(self.block_names):
            raise ValueError("theta must be (iterations, blocks)")
        if not 0 <= self.burn_in <= self.iterations:
            raise ValueError("burn_in must lie within the chain")

    @property
    def iterations(self):
        return self.theta.shape[0]

    @property
    def retained(self):
        return self.theta[self.burn_in:]

    @property
    def retained_states(self):
        if self.states is None:
            raise ValueError("chain was run without state storage")
        return self.states[self.burn_in:]

    def ess(self):
        kept = self.retained
        return {name: _autocorr_ess(kept[:, j])
                for j, name in enumerate(self.block_names)}

    def to_csv(self, path, n_state_snapshots=5):
        snaps = []
        if self.states is not None and self.states.shape[1] > 0:
            L = self.states.shape[1]
            snaps = sorted({int(round(i)) for i in
                            np.linspace(0, L - 1, n_state_snapshots)})
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", *self.block_names,
                             *[f"x{t}" for t in snaps]])
            for i in range(self.iterations):
                row = [i] + [f"{v:.12g}" for v in self.theta[i]]
                row += [f"{self.states[i, t]:.12g}" for t in snaps]
                writer.writerow(row)

    def diagnostics_to_json(self, path):
        payload = {
            "iterations": int(self.iterations),
            "burn_in": int(self.burn_in),
            "acceptance": {k: float(v) for k, v in self.acceptance.items()},
            "ess": {k: float(v) for k, v in self.ess().items()},
            "anomalies": int(self.anomalies),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


@dataclass(frozen=True)
class PredictiveDraws:
    """Per-time emission draws under chain samples; values is (T, n)."""

    values: np.ndarray


# ---------------------------------------------------------------------------
# the sweep


def _repair(arr, fallback, label, sweep, count):
    bad = ~np.isfinite(arr)
    if np.any(bad):
        n = int(bad.sum())
        if count[0] < 10:
            logger.warning("sweep %d: %d non-finite %s draws held at their "
                           "previous values", sweep, n, label)
        count[0] += n
        arr[bad] = fallback[bad]
    return arr


def gengibbs_run_many(bank, ys, M, burn_in, theta0=None, rng=None,
                      store_states=True, update_params=True):
    """Run one chain per row of ys in lockstep, sharing each sweep's
    batched net evaluations across chains. Returns a list of GibbsChain."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    C, T = ys.shape
    if T != bank.horizon:
        raise ValueError(
            f"bank was trained at horizon {bank.horizon}, data has {T}")
    if not 0 <= burn_in <= M:
        raise ValueError("burn_in must lie in [0, M]")
    rng = rng if rng is not None else np.random.default_rng()
    P = len(bank.blocks)
    lag = bank.s_y.lag
    ksum = lag + 1

    if theta0 is None:
        theta0 = np.array([b.init_raw for b in bank.blocks])
    theta0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    if theta0.shape[0] == 1:
        theta0 = np.repeat(theta0, C, axis=0)
    z = bank.theta_to_z(theta0)

    padded = np.concatenate([np.full((C, ksum), bank.s_y_pad), ys], axis=1)
    x = np.zeros((C, T + 1))
    theta_out = np.empty((M, C, P))
    states_out = np.empty((M, C, T + 1)) if store_states else None
    anomaly_count = [0]

    for i in range(M):
        x_prev = x.copy()
        feats = np.column_stack([padded[:, T:T + ksum], z])
        x[:, T] = bank.filter_map.forward(feats, _u_draws(rng, C))
        for t in range(T - 1, -1, -1):
            feats = np.column_stack([x[:, t + 1], padded[:, t:t + ksum], z])
            x[:, t] = bank.smoother_map.forward(feats, _u_draws(rng, C))
        _repair(x, x_prev, "state", i, anomaly_count)

        if update_params:
            sth = bank.s_theta(x, ys)
            for b_index, block in enumerate(bank.blocks):
                if not block.mapped:
                    continue
                feats = bank.block_features(b_index, z, sth)
                znew = bank.param_maps[block.name].forward(
                    feats, _u_draws(rng, C))
                zcol = z[:, b_index].copy()
                z[:, b_index] = znew
                _repair(z[:, b_index], zcol, block.name, i, anomaly_count)

        theta_out[i] = bank.z_to_theta(z)
        if store_states:
            states_out[i] = x

    chains = []
    for c in range(C):
        chains.append(GibbsChain(
            theta=theta_out[:, c], block_names=bank.block_names,
            burn_in=burn_in,
            states=states_out[:, c].copy() if store_states else None,
            anomalies=anomaly_count[0] if C == 1 else anomaly_count[0]))
    return chains


def gengibbs_run(bank, y, M, burn_in, theta0=None, rng=None,
                 store_states=True):
    """Single-chain sweep; see gengibbs_run_many."""
    return gengibbs_run_many(bank, np.asarray(y, dtype=float)[None, :], M,
                             burn_in, theta0=theta0, rng=rng,
                             store_states=store_states)[0]


# ---------------------------------------------------------------------------
# exact updates for the volatility level and persistence


def _beta_20_15_logpdf(phi):
    phi = np.asarray(phi, dtype=float)
    out = np.full(phi.shape, -np.inf)
    ok = (phi > 0.0) & (phi < 1.0)
    out[ok] = 19.0 * np.log(phi[ok]) + 0.5 * np.log1p(-phi[ok])
    return out


def _phi_step_rows(x, gamma, phi, sigma_phi_sq, rng, phi_prior_logpdf):
    """One MH move for the persistence at fixed level, per row.

    Proposal is the exact Normal conditional under an auxiliary
    Normal(0, sigma_phi_sq) prior; the acceptance ratio corrects back to
    the true prior and the stationary initial-state term.
    """
    x0 = x[:, 0]
    prev = x[:, :-1] - gamma[:, None]
    curr = x[:, 1:] - gamma[:, None]
    a = (prev ** 2).sum(axis=1) + 1.0 / sigma_phi_sq
    b = (prev * curr).sum(axis=1)
    C = x.shape[0]
    phi_star = b / a + rng.standard_normal(C) / np.sqrt(a)

    def log_x0(ph):
        with np.errstate(invalid="ignore", divide="ignore"):
            return 0.5 * np.log(1.0 - ph ** 2) \
                - 0.5 * (x0 - gamma) ** 2 * (1.0 - ph ** 2)

    valid = np.abs(phi_star) < 1.0
    log_ratio = np.full(C, -np.inf)
    if np.any(valid):
        aux = lambda ph: -ph ** 2 / (2.0 * sigma_phi_sq)
        lr = (log_x0(phi_star) + phi_prior_logpdf(phi_star)
              - log_x0(phi) - phi_prior_logpdf(phi)
              + aux(phi) - aux(phi_star))
        log_ratio[valid] = lr[valid]
    accept = np.log(_u_draws(rng, C)) < log_ratio
    return np.where(accept, phi_star, phi), accept


def _mh_gamma_phi_rows(x, gamma, phi, tau0_sq, sigma_phi_sq, rng,
                       phi_prior_logpdf):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    C, L = x.shape
    T = L - 1
    gamma = np.asarray(gamma, dtype=float)
    phi = np.asarray(phi, dtype=float)
    x0 = x[:, 0]

    one_m_phi2 = 1.0 - phi ** 2
    inv_tau = 0.0 if np.isinf(tau0_sq) else 1.0 / tau0_sq
    A = one_m_phi2 + T * (1.0 - phi) ** 2 + inv_tau
    innov = (x[:, 1:] - phi[:, None] * x[:, :-1]).sum(axis=1) if T else 0.0
    Bv = x0 * one_m_phi2 + (1.0 - phi) * innov
    gamma_new = Bv / A + rng.standard_normal(C) / np.sqrt(A)

    phi_new, accept = _phi_step_rows(x, gamma_new, phi, sigma_phi_sq, rng,
                                     phi_prior_logpdf)
    return gamma_new, phi_new, accept


def mh_update_gamma_phi(x, current, hyper, rng, phi_prior_logpdf=None):
    """One exact draw of the level and one MH step for the persistence.

    Works on the unit-innovation scale: x is the latent path divided by
    its innovation standard deviation, and the level parameter is the
    mean on that scale. hyper is (level prior variance, auxiliary
    proposal prior variance); the default persistence prior is the
    Beta(20, 1.5) used throughout.
    """
    if phi_prior_logpdf is None:
        phi_prior_logpdf = _beta_20_15_logpdf
    tau0_sq, sigma_phi_sq = hyper
    gamma, phi = current
    if not abs(phi) < 1.0:
        raise ValueError("current persistence must satisfy |phi| < 1")
    g, p, acc = _mh_gamma_phi_rows(
        np.asarray(x, dtype=float)[None, :], np.array([gamma]),
        np.array([phi]), tau0_sq, sigma_phi_sq, rng, phi_prior_logpdf)
    return (float(g[0]), float(p[0])), bool(acc[0])


def gengibbs_sv_stable_run(bank, y, M, burn_in, rng=None, sigma_eta=0.3,
                           theta0=None, tau0_sq=1.0 / 0.09, sigma_phi_sq=10.0,
                           phi_prior_logpdf=None, store_states=True):
    """Hybrid sweep for the heavy-tailed volatility model.

    States come from the bank's filter/smoother maps; the level and
    persistence get exact conditional/MH updates on the unit-innovation
    scale; the noise shape parameters come from maps conditioned on
    standardized-residual summaries.
    """
    if phi_prior_logpdf is None:
        phi_prior_logpdf = _beta_20_15_logpdf
    y = np.asarray(y, dtype=float)
    ys = np.atleast_2d(y)
    C, T = ys.shape
    if T != bank.horizon:
        raise ValueError(
            f"bank was trained at horizon {bank.horizon}, data has {T}")
    rng = rng if rng is not None else np.random.default_rng()
    names = bank.block_names
    for needed in ("mu", "phi", "alpha", "beta"):
        if needed not in names:
            raise ValueError(f"bank lacks the {needed!r} block")
    i_mu, i_phi = names.index("mu"), names.index("phi")
    i_al, i_be = names.index("alpha"), names.index("beta")
    lag = bank.s_y.lag
    ksum = lag + 1

    if theta0 is None:
        theta0 = np.array([b.init_raw for b in bank.blocks])
    theta0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    if theta0.shape[0] == 1:
        theta0 = np.repeat(theta0, C, axis=0)
    z = bank.theta_to_z(theta0)
    mu = theta0[:, i_mu].copy()
    phi = theta0[:, i_phi].copy()

    padded = np.concatenate([np.full((C, ksum), bank.s_y_pad), ys], axis=1)
    x = np.zeros((C, T + 1))
    theta_out = np.empty((M, C, len(names)))
    states_out = np.empty((M, C, T + 1)) if store_states else None
    accepted = np.zeros(C)
    anomaly_count = [0]

    for i in range(M):
        x_prev = x.copy()
        feats = np.column_stack([padded[:, T:T + ksum], z])
        x[:, T] = bank.filter_map.forward(feats, _u_draws(rng, C))
        for t in range(T - 1, -1, -1):
            feats = np.column_stack([x[:, t + 1], padded[:, t:t + ksum], z])
            x[:, t] = bank.smoother_map.forward(feats, _u_draws(rng, C))
        _repair(x, x_prev, "state", i, anomaly_count)

        gamma_new, phi_new, acc = _mh_gamma_phi_rows(
            x / sigma_eta, mu / sigma_eta, phi, tau0_sq, sigma_phi_sq, rng,
            phi_prior_logpdf)
        mu = gamma_new * sigma_eta
        phi = np.clip(phi_new, 1e-6, 1.0 - 1e-6)
        accepted += acc
        z[:, i_mu] = bank.blocks[i_mu].to_z(mu)
        z[:, i_phi] = bank.blocks[i_phi].to_z(phi)

        sth = bank.s_theta(x, ys)
        for b_index in (i_al, i_be):
            block = bank.blocks[b_index]
            feats = bank.block_features(b_index, z, sth)
            zcol = z[:, b_index].copy()
            z[:, b_index] = bank.param_maps[block.name].forward(
                feats, _u_draws(rng, C))
            _repair(z[:, b_index], zcol, block.name, i, anomaly_count)

        theta_out[i] = bank.z_to_theta(z)
        if store_states:
            states_out[i] = x

    chains = []
    for c in range(C):
        chains.append(GibbsChain(
            theta=theta_out[:, c], block_names=names, burn_in=burn_in,
            states=states_out[:, c].copy() if store_states else None,
            acceptance={"phi": float(accepted[c] / M)},
            anomalies=anomaly_count[0]))
    return chains[0] if y.ndim == 1 else chains


# ---------------------------------------------------------------------------
# posterior predictive


def posterior_predictive_draws(chain, emission, n_draws, rng):
    """One emission draw per time point for each of n_draws chain samples.

    emission(states_row, theta_row, rng) must return the T observation
    draws for one joint sample. Samples are taken evenly spaced over the
    retained part of the chain.
    """
    kept_theta = chain.retained
    kept_states = chain.retained_states
    if len(kept_theta) < n_draws:
        raise ValueError("retained chain shorter than the requested draws")
    idx = np.unique(np.round(np.linspace(0, len(kept_theta) - 1,
                                         n_draws)).astype(int))
    while len(idx) < n_draws:  # duplicates collapse only for tiny chains
        extra = rng.integers(0, len(kept_theta))
        idx = np.unique(np.append(idx, extra))
    T = kept_states.shape[1] - 1
    out = np.empty((T, n_draws))
    for j, i in enumerate(idx[:n_draws]):
        out[:, j] = emission(kept_states[i], kept_theta[i], rng)
    return PredictiveDraws(values=out)


def lg_chain_emission(x, theta, rng):
    """Observation draws for the linear model; theta = (psi_x, psi_y)."""
    sigma_y = float(theta[1]) ** -0.5
    return x[1:] + sigma_y * rng.standard_normal(x.size - 1)


def sv_chain_emission(noise_sampler):
    """Emission factory for volatility chains given a noise sampler
    noise_sampler(theta, rng, n) for the standardized innovations."""

    def emission(x, theta, rng):
        eps = noise_sampler(theta, rng, x.size - 1)
        return np.exp(0.5 * x[1:]) * eps

    return emission
