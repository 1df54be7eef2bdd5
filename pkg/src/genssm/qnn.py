"""Implicit quantile network trained with the pinball loss.

The net represents a conditional inverse CDF H(features, u): feed it a
feature vector and a uniform draw u and it returns the u-quantile of the
target distribution. Sampling is inverse-transform: push fresh uniforms
through H. Everything is plain numpy with hand-written backprop; the
network is small enough that autodiff frameworks would be dead weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDiverged

__all__ = [
    "QnnConfig",
    "TrainConfig",
    "QuantileDataset",
    "QuantileNet",
    "cosine_embed",
    "pinball_loss",
    "qnn_forward",
    "train_qnn",
    "qnn_sample",
    "dataset_loss",
]


@dataclass(frozen=True)
class QnnConfig:
    embed_dim: int = 64
    encoder_layers: tuple = (64, 64, 64)
    fusion_layers: tuple = (64, 64, 64, 1)
    dropout_rate: float = 0.1
    activation: str = "relu"
    n_cosines: int | None = None

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")
        if len(self.encoder_layers) < 1 or self.encoder_layers[-1] != self.embed_dim:
            raise ValueError("encoder must end at embed_dim")
        if len(self.fusion_layers) < 1 or self.fusion_layers[-1] != 1:
            raise ValueError("fusion head must end in a single output")
        if self.n_cosines is None:
            object.__setattr__(self, "n_cosines", self.embed_dim)
        elif self.n_cosines < 1:
            raise ValueError("n_cosines must be at least 1")


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    n_epochs: int = 50
    seed: int | None = None
    validation_fraction: float = 0.1
    early_stop_patience: int = 8
    # quantile-level refresh: draw fresh u for the training split each epoch
    # after the first; the pinball objective integrates u out, so refreshing
    # is free variance reduction rather than a change of data
    refresh_u: bool = True
    # staircase decay: (fraction of epochs, multiplier on step_size)
    lr_decay: tuple = ((0.6, 0.3), (0.9, 0.1))
    # validation pinball averaged over this many stratified u per point,
    # cutting monitor noise enough for early stopping to see progress
    monitor_u_strata: int = 16
    # an epoch only counts against patience when the monitor exceeds the
    # best seen by this relative margin; the pinball monitor wanders a few
    # tenths of a percent between equally good nets, and draining patience
    # on that noise stops training long before the decay stages help
    early_stop_tolerance: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.n_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("need n_epochs >= 0 and patience >= 1")
        if self.monitor_u_strata < 1:
            raise ValueError("monitor_u_strata must be at least 1")
        if self.early_stop_tolerance < 0.0:
            raise ValueError("early_stop_tolerance must be nonnegative")
        last = 0.0
        for frac, mult in self.lr_decay:
            if not (0.0 < frac <= 1.0 and frac >= last and mult > 0.0):
                raise ValueError("lr_decay stages must be ordered in (0, 1]")
            last = frac

    def step_size_at(self, epoch, n_epochs):
        lr = self.step_size
        for frac, mult in self.lr_decay:
            if epoch >= frac * n_epochs:
                lr = self.step_size * mult
        return lr


@dataclass
class QuantileDataset:
    """Aligned (features, target, u) triplets for pinball regression."""

    features: np.ndarray
    targets: np.ndarray
    quantile_draws: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        t = np.asarray(self.targets, dtype=float).ravel()
        u = np.asarray(self.quantile_draws, dtype=float).ravel()
        if not (f.shape[0] == t.size == u.size):
            raise ValueError("features, targets, quantile_draws must align")
        if f.shape[0] == 0:
            raise ValueError("dataset must be nonempty")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("features and targets must be finite")
        if np.any(u <= 0.0) or np.any(u >= 1.0):
            raise ValueError("quantile draws must lie strictly inside (0, 1)")
        self.features, self.targets, self.quantile_draws = f, t, u

    @property
    def n(self):
        return self.targets.size

    @property
    def feature_dim(self):
        return self.features.shape[1]


def cosine_embed(u, n):
    """Cosine basis cos(pi j u), j = 1..n. Accepts the closed unit interval."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError("quantile level must lie in [0, 1]")
    j = np.arange(1, n + 1)
    return np.cos(np.pi * u[..., None] * j)


def pinball_loss(u, z):
    """Quantile check loss: u z for z > 0, (u-1) z otherwise."""
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    return np.where(z > 0.0, u * z, (u - 1.0) * z)


class QuantileNet:
    """H(features, u) = h(psi(features) * phi(u)) with rectifier layers."""

    def __init__(self, config, feature_dim, rng):
        self.config = config
        self.feature_dim = int(feature_dim)
        self.trained_flag = False
        self.feature_mean = np.zeros(feature_dim)
        self.feature_scale = np.ones(feature_dim)
        self.aux = {}
        self.history = {"train_loss": [], "val_loss": []}
        self.params = {}
        self._build(rng)

    def _layer_dims(self):
        cfg = self.config
        enc = [("enc", i, din, dout) for i, (din, dout) in enumerate(
            zip((self.feature_dim,) + tuple(cfg.encoder_layers[:-1]),
                cfg.encoder_layers))]
        phi = [("phi", 0, cfg.n_cosines, cfg.embed_dim)]
        fus = [("fus", i, din, dout) for i, (din, dout) in enumerate(
            zip((cfg.embed_dim,) + tuple(cfg.fusion_layers[:-1]),
                cfg.fusion_layers))]
        return enc + phi + fus

    def _build(self, rng):
        for kind, i, din, dout in self._layer_dims():
            bound = 1.0 / np.sqrt(din)
            self.params[f"{kind}{i}_W"] = rng.uniform(-bound, bound, (din, dout))
            self.params[f"{kind}{i}_b"] = rng.uniform(-bound, bound, dout)

    def named_parameters(self):
        # deterministic order; the checkpoint writer relies on it
        return [(name, self.params[name]) for name in sorted(self.params)]

    def set_normalization(self, mean, scale):
        mean = np.asarray(mean, dtype=float)
        scale = np.asarray(scale, dtype=float)
        if mean.shape != (self.feature_dim,) or scale.shape != (self.feature_dim,):
            raise ValueError("normalization shape mismatch")
        if np.any(scale <= 0.0) or not np.all(np.isfinite(scale)):
            raise ValueError("normalization scales must be positive and finite")
        self.feature_mean, self.feature_scale = mean, scale

    def copy_weights_from(self, other):
        if other.feature_dim != self.feature_dim or other.config != self.config:
            raise ValueError("incompatible architectures")
        for name, value in other.params.items():
            self.params[name] = value.copy()
        self.feature_mean = other.feature_mean.copy()
        self.feature_scale = other.feature_scale.copy()

    def snapshot(self):
        return {name: value.copy() for name, value in self.params.items()}

    def restore(self, snap):
        for name, value in snap.items():
            self.params[name] = value.copy()

    # -- forward / backward ------------------------------------------------

    def _forward(self, features, u, training=False, dropout_rng=None):
        cfg = self.config
        x = (features - self.feature_mean) / self.feature_scale
        cache = {"x": x, "enc_pre": [], "enc_out": [x]}
        e = x
        for i in range(len(cfg.encoder_layers)):
            a = e @ self.params[f"enc{i}_W"] + self.params[f"enc{i}_b"]
            e = np.maximum(a, 0.0)
            cache["enc_pre"].append(a)
            cache["enc_out"].append(e)
        c = cosine_embed(u, cfg.n_cosines)
        a_phi = c @ self.params["phi0_W"] + self.params["phi0_b"]
        phi = np.maximum(a_phi, 0.0)
        cache.update(cos=c, phi_pre=a_phi, phi=phi, psi=e)
        h = e * phi
        cache["fus_in"] = [h]
        cache["fus_pre"] = []
        cache["masks"] = []
        keep = 1.0 - cfg.dropout_rate
        n_fus = len(cfg.fusion_layers)
        for i in range(n_fus):
            g = h @ self.params[f"fus{i}_W"] + self.params[f"fus{i}_b"]
            cache["fus_pre"].append(g)
            if i < n_fus - 1:
                h = np.maximum(g, 0.0)
                if training and cfg.dropout_rate > 0.0:
                    mask = (dropout_rng.random(h.shape) < keep) / keep
                    h = h * mask
                    cache["masks"].append(mask)
                else:
                    cache["masks"].append(None)
                cache["fus_in"].append(h)
            else:
                h = g
        cache["out"] = h[:, 0]
        return cache

    def _backward(self, cache, d_pred):
        cfg = self.config
        grads = {}
        n_fus = len(cfg.fusion_layers)
        dh = d_pred[:, None]
        for i in range(n_fus - 1, -1, -1):
            if i < n_fus - 1:
                mask = cache["masks"][i]
                dr = dh * mask if mask is not None else dh
                dg = dr * (cache["fus_pre"][i] > 0.0)
            else:
                dg = dh
            grads[f"fus{i}_W"] = cache["fus_in"][i].T @ dg
            grads[f"fus{i}_b"] = dg.sum(axis=0)
            dh = dg @ self.params[f"fus{i}_W"].T
        d_psi = dh * cache["phi"]
        d_phi = dh * cache["psi"]
        da = d_phi * (cache["phi_pre"] > 0.0)
        grads["phi0_W"] = cache["cos"].T @ da
        grads["phi0_b"] = da.sum(axis=0)
        de = d_psi
        for i in range(len(cfg.encoder_layers) - 1, -1, -1):
            da = de * (cache["enc_pre"][i] > 0.0)
            grads[f"enc{i}_W"] = cache["enc_out"][i].T @ da
            grads[f"enc{i}_b"] = da.sum(axis=0)
            de = da @ self.params[f"enc{i}_W"].T
        return grads

    def forward(self, features, u, training=False, dropout_rng=None):
        features = np.asarray(features, dtype=float)
        u = np.asarray(u, dtype=float)
        scalar = features.ndim == 1 and u.ndim == 0
        if features.ndim == 1:
            features = features[None, :]
        if features.shape[1] != self.feature_dim:
            raise ValueError(
                f"expected {self.feature_dim} features, got {features.shape[1]}")
        if u.ndim == 0:
            u = np.full(features.shape[0], float(u))
        elif features.shape[0] == 1 and u.size > 1:
            features = np.broadcast_to(features, (u.size, self.feature_dim))
        if features.shape[0] != u.size:
            raise ValueError("feature rows and quantile levels must align")
        out = self._forward(features, u, training=training,
                            dropout_rng=dropout_rng)["out"]
        return float(out[0]) if scalar else out


def qnn_forward(net, features, u):
    """Evaluate the learned quantile curve, dropout off."""
    return net.forward(features, u, training=False)


def dataset_loss(net, features, targets, u):
    pred = net.forward(features, u, training=False)
    return float(np.mean(pinball_loss(u, targets - pred)))


def _pinball_pred_grad(u, z):
    # d/dpred of the check loss; the z = 0 tie takes the z <= 0 branch
    return np.where(z > 0.0, -u, 1.0 - u)


def train_qnn(data, qc=None, tc=None, rng=None, init_net=None):
    """Fit a quantile net by mini-batch Adam on the pinball loss.

    Early stopping watches a held-out split and restores the best weights,
    with the untrained net as the incumbent, so the returned validation
    loss never exceeds the starting one. Passing init_net warm-starts from
    its weights and keeps its feature normalization frozen.
    """
    qc = qc or QnnConfig()
    tc = tc or TrainConfig()
    if not isinstance(data, QuantileDataset):
        raise TypeError("expected a QuantileDataset")
    if data.n < tc.batch_size:
        raise ValueError("dataset smaller than one batch")
    rng = rng if rng is not None else np.random.default_rng(tc.seed)

    n_val = int(round(tc.validation_fraction * data.n))
    perm = rng.permutation(data.n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size < tc.batch_size:
        raise ValueError("training split smaller than one batch")

    if init_net is not None:
        if init_net.config != qc or init_net.feature_dim != data.feature_dim:
            raise ValueError("warm-start net does not match config or features")
        net = QuantileNet(qc, data.feature_dim, rng)
        net.copy_weights_from(init_net)
    else:
        net = QuantileNet(qc, data.feature_dim, rng)
        mean = data.features.mean(axis=0)
        scale = data.features.std(axis=0)
        scale = np.where((scale > 0.0) & np.isfinite(scale), scale, 1.0)
        net.set_normalization(mean, scale)

    monitor_idx = val_idx if n_val > 0 else train_idx
    # monitor: validation pinball averaged over stratified quantile levels,
    # which strips off most of the u-randomness so epoch-to-epoch gains of
    # order 1e-3 stay visible above the monitor's own noise
    strata = (np.arange(tc.monitor_u_strata) + 0.5) / tc.monitor_u_strata
    mon_f = np.repeat(data.features[monitor_idx], strata.size, axis=0)
    mon_y = np.repeat(data.targets[monitor_idx], strata.size)
    mon_u = np.tile(strata, monitor_idx.size)

    def monitor_loss():
        return dataset_loss(net, mon_f, mon_y, mon_u)

    best_loss = monitor_loss()
    best_weights = net.snapshot()
    patience_left = tc.early_stop_patience
    net.aux["monitor_loss_initial"] = best_loss

    adam_m = {name: np.zeros_like(p) for name, p in net.params.items()}
    adam_v = {name: np.zeros_like(p) for name, p in net.params.items()}
    step = 0
    train_u = data.quantile_draws

    for epoch in range(tc.n_epochs):
        if tc.refresh_u and epoch > 0:
            train_u = np.clip(rng.random(data.n), 1e-12, 1.0 - 1e-12)
        lr = tc.step_size_at(epoch, tc.n_epochs)
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, order.size, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            f = data.features[idx]
            u = train_u[idx]
            y = data.targets[idx]
            # overflow inside a diverging forward pass is reported through
            # TrainingDiverged, not as a warning storm
            with np.errstate(over="ignore", invalid="ignore"):
                cache = net._forward(f, u, training=True, dropout_rng=rng)
                z = y - cache["out"]
                loss = float(np.mean(pinball_loss(u, z)))
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            epoch_loss += loss
            n_batches += 1
            grads = net._backward(cache, _pinball_pred_grad(u, z) / idx.size)
            step += 1
            bias1 = 1.0 - tc.beta1 ** step
            bias2 = 1.0 - tc.beta2 ** step
            for name, g in grads.items():
                m = adam_m[name]
                v = adam_v[name]
                m *= tc.beta1
                m += (1.0 - tc.beta1) * g
                v *= tc.beta2
                v += (1.0 - tc.beta2) * g * g
                net.params[name] -= lr * (m / bias1) / (
                    np.sqrt(v / bias2) + tc.adam_eps)
        net.history["train_loss"].append(epoch_loss / max(n_batches, 1))
        monitor = monitor_loss()
        net.history["val_loss"].append(monitor)
        # the bar moves only on material improvement so a lucky noise dip
        # cannot set an unbeatable incumbent, and patience drains only on
        # material degradation (divergence or overfit), not on flat noise
        if monitor < best_loss * (1.0 - tc.early_stop_tolerance):
            best_loss = monitor
            best_weights = net.snapshot()
            patience_left = tc.early_stop_patience
        elif monitor > best_loss * (1.0 + tc.early_stop_tolerance):
            patience_left -= 1
            if patience_left == 0:
                break

    final_monitor = monitor_loss()
    if final_monitor <= best_loss:
        net.aux["monitor_loss_final"] = final_monitor
    else:
        net.restore(best_weights)
        net.aux["monitor_loss_final"] = best_loss
    net.trained_flag = True
    return net


def qnn_sample(net, features, n_draws, rng, rearrange=False):
    """Inverse-transform sampling through the learned quantile curve.

    rearrange=True evaluates a fixed quantile grid, sorts it into a proper
    monotone curve, and interpolates; the default trusts the raw net.
    """
    if not net.trained_flag:
        raise ValueError("net has not been trained")
    if n_draws == 0:
        return np.empty(0)
    u = np.clip(rng.random(n_draws), 1e-12, 1.0 - 1e-12)
    if rearrange:
        grid = (np.arange(1024) + 0.5) / 1024
        curve = np.sort(net.forward(np.asarray(features, dtype=float), grid))
        return np.interp(u, grid, curve)
    return net.forward(np.asarray(features, dtype=float), u)
