"""Distribution distances, accuracy metrics, and backtest statistics.

Everything here is pure: sample sets in, numbers out. Distances compare
posterior draw clouds against references; the test statistics (Kupiec,
Christoffersen, Ljung-Box, Jarque-Bera) quantify risk-forecast quality.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri, xlogy

__all__ = [
    "SampleSet",
    "BacktestReport",
    "wasserstein1",
    "wasserstein1_to_normal",
    "mmd2_gaussian",
    "energy_distance",
    "rmse_and_coverage",
    "var_es_estimate",
    "kupiec_lr",
    "christoffersen_tests",
    "ljung_box",
    "jarque_bera",
    "mean_diff",
    "std_diff",
    "build_backtest_report",
    "write_accuracy_table",
    "write_distance_table",
]

_U_GRID = (np.arange(1000) + 0.5) / 1000.0


@dataclass
class SampleSet:
    """Finite univariate sample with a lazily computed sorted view."""

    values: np.ndarray
    sorted_cache: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("sample set must be nonempty")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample set must be finite")
        self.values = v

    @property
    def n(self):
        return self.values.size

    @property
    def sorted(self):
        if self.sorted_cache is None:
            self.sorted_cache = np.sort(self.values)
        return self.sorted_cache

    def quantiles(self, probs):
        return np.quantile(self.values, probs, method="linear")


def _as_samples(x):
    return x if isinstance(x, SampleSet) else SampleSet(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# distances


def wasserstein1(p, q):
    """W1 distance between two empirical laws.

    Equal sizes use exact sorted matching; unequal sizes integrate the
    quantile gap over a fixed 1000-point midpoint grid.
    """
    p, q = _as_samples(p), _as_samples(q)
    if p.n == q.n:
        return float(np.mean(np.abs(p.sorted - q.sorted)))
    return float(np.mean(np.abs(p.quantiles(_U_GRID) - q.quantiles(_U_GRID))))


def wasserstein1_to_normal(p, mean, sd):
    """W1 between an empirical sample and an exact normal reference."""
    p = _as_samples(p)
    if sd < 0:
        raise ValueError("sd must be nonnegative")
    ref = mean + sd * ndtri(_U_GRID)
    return float(np.mean(np.abs(p.quantiles(_U_GRID) - ref)))


def _kernel_sums(a, b, kernel, block=2048):
    # accumulate sum of kernel(a_i, b_j) over the full grid without ever
    # materializing more than block*len(b) entries
    total = 0.0
    for start in range(0, a.size, block):
        chunk = a[start:start + block, None] - b[None, :]
        total += float(kernel(chunk).sum())
    return total


def mmd2_gaussian(p, q, sigma=1.0, unbiased=False):
    """Squared maximum mean discrepancy under a Gaussian kernel.

    Default is the V-statistic (nonnegative); the U-statistic variant drops
    diagonal terms, can go slightly negative, and needs two points per side.
    """
    p, q = _as_samples(p), _as_samples(q)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    kern = lambda d: np.exp(-(d * d) / (2.0 * sigma * sigma))
    n, m = p.n, q.n
    sxx = _kernel_sums(p.values, p.values, kern)
    syy = _kernel_sums(q.values, q.values, kern)
    sxy = _kernel_sums(p.values, q.values, kern)
    if unbiased:
        if n < 2 or m < 2:
            raise ValueError("unbiased estimator needs at least 2 points per sample")
        # diagonal terms are kern(0) = 1 each
        return float((sxx - n) / (n * (n - 1)) + (syy - m) / (m * (m - 1))
                     - 2.0 * sxy / (n * m))
    return float(sxx / (n * n) + syy / (m * m) - 2.0 * sxy / (n * m))


def energy_distance(p, q, unbiased=False):
    """Energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|."""
    p, q = _as_samples(p), _as_samples(q)
    kern = np.abs
    n, m = p.n, q.n
    sxx = _kernel_sums(p.values, p.values, kern)
    syy = _kernel_sums(q.values, q.values, kern)
    sxy = _kernel_sums(p.values, q.values, kern)
    if unbiased:
        if n < 2 or m < 2:
            raise ValueError("unbiased estimator needs at least 2 points per sample")
        return float(2.0 * sxy / (n * m) - sxx / (n * (n - 1))
                     - syy / (m * (m - 1)))
    return float(2.0 * sxy / (n * m) - sxx / (n * n) - syy / (m * m))


# ---------------------------------------------------------------------------
# accuracy and coverage


def _per_time_draws(draws):
    if isinstance(draws, SampleSet):
        raise TypeError("expected a per-time collection of samples")
    if isinstance(draws, np.ndarray) and draws.ndim == 2:
        return [draws[t] for t in range(draws.shape[0])]
    return [_as_samples(d).values for d in draws]


def rmse_and_coverage(truth, draws, levels=(0.75, 0.90, 0.95)):
    """Posterior-mean RMSE plus central-interval coverage at each level."""
    truth = np.asarray(truth, dtype=float)
    rows = _per_time_draws(draws)
    if truth.size != len(rows):
        raise ValueError("truth and draws must have aligned lengths")
    means = np.array([row.mean() for row in rows])
    rmse = float(np.sqrt(np.mean((means - truth) ** 2)))
    coverage = {}
    for level in levels:
        lo_p, hi_p = (1.0 - level) / 2.0, (1.0 + level) / 2.0
        hits = 0
        for t, row in enumerate(rows):
            lo, hi = np.quantile(row, [lo_p, hi_p], method="linear")
            hits += lo <= truth[t] <= hi
        coverage[level] = hits / truth.size
    return rmse, coverage


def var_es_estimate(draws, q):
    """Lower-tail value at risk and expected shortfall per time step.

    VaR is the ceil(qM)-th order statistic; ES averages the draws at or
    below it. A 1-D input returns scalars, per-time input returns arrays.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    arr = np.asarray(draws, dtype=float) if not isinstance(draws, SampleSet) else None
    if isinstance(draws, SampleSet) or (arr is not None and arr.ndim == 1):
        row = _as_samples(draws).values
        return _var_es_row(row, q)
    rows = _per_time_draws(draws)
    out = np.array([_var_es_row(np.asarray(r, dtype=float), q) for r in rows])
    return out[:, 0], out[:, 1]


def _var_es_row(row, q):
    m = row.size
    if int(np.floor(q * m)) < 1:
        raise ValueError(f"{m} draws cannot resolve the {q} tail")
    k = int(np.ceil(q * m))
    srt = np.sort(row)
    var = srt[k - 1]
    es = float(srt[srt <= var].mean())
    return float(var), es


# ---------------------------------------------------------------------------
# backtest statistics


def kupiec_lr(breaches, trials, q):
    """Unconditional-coverage likelihood ratio for exceedance counts."""
    x, t = int(breaches), int(trials)
    if not 0 <= x <= t or t == 0:
        raise ValueError("need 0 <= breaches <= trials, trials > 0")
    p_hat = x / t
    log_null = xlogy(x, q) + xlogy(t - x, 1.0 - q)
    log_alt = xlogy(x, p_hat) + xlogy(t - x, 1.0 - p_hat)
    return float(max(0.0, -2.0 * (log_null - log_alt)))


def christoffersen_tests(hits, q):
    """First-order Markov independence test plus the joint statistic.

    Returns (lr_ind, lr_cc) where lr_cc adds the unconditional-coverage
    statistic for the same hit sequence at level q.
    """
    h = np.asarray(hits, dtype=int).ravel()
    if h.size < 2:
        raise ValueError("need at least two observations")
    if not np.isin(h, (0, 1)).all():
        raise ValueError("hit sequence must be binary")
    prev, cur = h[:-1], h[1:]
    n00 = int(np.sum((prev == 0) & (cur == 0)))
    n01 = int(np.sum((prev == 0) & (cur == 1)))
    n10 = int(np.sum((prev == 1) & (cur == 0)))
    n11 = int(np.sum((prev == 1) & (cur == 1)))
    pi01 = n01 / (n00 + n01) if n00 + n01 else 0.0
    pi11 = n11 / (n10 + n11) if n10 + n11 else 0.0
    pi = (n01 + n11) / (n00 + n01 + n10 + n11)
    log_null = xlogy(n01 + n11, pi) + xlogy(n00 + n10, 1.0 - pi)
    log_alt = (xlogy(n01, pi01) + xlogy(n00, 1.0 - pi01)
               + xlogy(n11, pi11) + xlogy(n10, 1.0 - pi11))
    lr_ind = float(max(0.0, -2.0 * (log_null - log_alt)))
    lr_uc = kupiec_lr(int(h.sum()), h.size, q)
    return lr_ind, lr_uc + lr_ind


def ljung_box(y, n_lags=20):
    """Portmanteau autocorrelation statistic over the first n_lags lags."""
    y = np.asarray(y, dtype=float).ravel()
    t = y.size
    if t <= n_lags:
        raise ValueError("series must be longer than the lag window")
    centred = y - y.mean()
    denom = float(np.sum(centred * centred))
    if denom == 0.0:
        return 0.0  # no variation carries no autocorrelation evidence
    stat = 0.0
    for k in range(1, n_lags + 1):
        rho = float(np.sum(centred[k:] * centred[:-k])) / denom
        stat += rho * rho / (t - k)
    return float(t * (t + 2) * stat)


def jarque_bera(y):
    """Skewness-kurtosis normality statistic (kurtosis measured about 3)."""
    y = np.asarray(y, dtype=float).ravel()
    t = y.size
    if t < 8:
        raise ValueError("need at least 8 observations")
    centred = y - y.mean()
    m2 = float(np.mean(centred ** 2))
    if m2 == 0.0:
        raise ValueError("zero-variance series")
    skew = float(np.mean(centred ** 3)) / m2 ** 1.5
    kurt = float(np.mean(centred ** 4)) / (m2 * m2)
    return float(t / 6.0 * (skew * skew + (kurt - 3.0) ** 2 / 4.0))


def mean_diff(p, q):
    return float(abs(_as_samples(p).values.mean() - _as_samples(q).values.mean()))


def std_diff(p, q):
    return float(abs(_as_samples(p).values.std(ddof=1)
                     - _as_samples(q).values.std(ddof=1)))


# ---------------------------------------------------------------------------
# backtest report


@dataclass(frozen=True)
class BacktestReport:
    hit_rate: float
    lr_uc: float
    lr_ind: float
    lr_cc: float
    average_es: float
    breach_times: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.hit_rate <= 1.0:
            raise ValueError("hit rate must lie in [0, 1]")
        if abs(self.lr_cc - (self.lr_uc + self.lr_ind)) > 1e-9:
            raise ValueError("joint statistic must equal uc + ind")


def build_backtest_report(hits, q, es_values=None):
    """Assemble the standard exceedance report for a hit sequence."""
    h = np.asarray(hits, dtype=int).ravel()
    lr_uc = kupiec_lr(int(h.sum()), h.size, q)
    lr_ind, lr_cc = christoffersen_tests(h, q)
    breach_times = np.flatnonzero(h)
    if es_values is None:
        average_es = float("nan")
    else:
        es = np.asarray(es_values, dtype=float).ravel()
        if es.size != h.size:
            raise ValueError("es_values must align with hits")
        average_es = float(es.mean())
    return BacktestReport(hit_rate=float(h.mean()), lr_uc=lr_uc, lr_ind=lr_ind,
                          lr_cc=lr_cc, average_es=average_es,
                          breach_times=breach_times)


# ---------------------------------------------------------------------------
# results tables


def write_accuracy_table(path, rows):
    """rows: iterable of (method, rmse, {level: coverage})."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rmse", "cov75", "cov90", "cov95"])
        for method, rmse, cov in rows:
            writer.writerow([method, f"{rmse:.12g}", f"{cov[0.75]:.12g}",
                             f"{cov[0.90]:.12g}", f"{cov[0.95]:.12g}"])


def write_distance_table(path, rows):
    """rows: iterable of (method, dict with the five distance columns)."""
    cols = ["wasserstein", "mmd", "energy", "mean_diff", "std_diff"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + cols)
        for method, metrics in rows:
            writer.writerow([method] + [f"{metrics[c]:.12g}" for c in cols])
