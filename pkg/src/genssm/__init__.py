"""Likelihood-free filtering and Gibbs sampling for state-space models.

The package learns inverse-CDF (quantile) maps with small neural networks and
uses them as simulation-based substitutes for filtering and full-conditional
densities, alongside exact and particle baselines and an evaluation suite.
"""

__version__ = "0.1.0"

from . import errors
from .stable import StableParams, sample_stable, stable_quantile, noise_band
from .evaluation import (
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
)
from .filters import (
    AbcConfig,
    GibbsLGResult,
    KalmanTrace,
    ParticleSet,
    PFResult,
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
from .qnn import (
    QnnConfig,
    QuantileDataset,
    QuantileNet,
    TrainConfig,
    cosine_embed,
    pinball_loss,
    qnn_forward,
    qnn_sample,
    train_qnn,
)
from .models import (
    LGParams,
    SVParams,
    Trajectory,
    TrajectoryBatch,
    StateSpaceSpec,
    simulate_trajectory,
    simulate_batch,
    sample_prior,
    lg_spec,
    sv_spec,
    lg_precision_prior,
    sv_prior_gaussian,
    sv_prior_stable,
)
from .genfilter import (
    FilterOutput,
    SummarySpec,
    apply_summary,
    gen_filter_run,
    lag_window,
    moment_summary,
    moment_summary_filter,
    pretrain_moment_map,
    pretrain_summary_map,
    pretrained_filter_run,
)
