"""Communication-efficient distributed quantile regression with
kernel-smoothed (conquer) losses."""

from .data import DataShard, FederatedDataset, partition, read_shards, write_shards
from .datagen import DgpSpec, gen_covariates, gen_dataset, gen_response, make_truth
from .federation import (
    SmoothingPlan,
    comm_cost,
    dc_average,
    default_bandwidths,
    run_algorithm1,
    run_newton_variant,
    scaling_diagnostic,
)
from .highdim import (
    PenaltySchedule,
    admm_qr,
    fit_l1_conquer,
    run_penalized_multiround,
    theorem9_bandwidths,
    theorem10_lambda_schedule,
)
from .inference import (
    InferenceReport,
    VarianceEstimate,
    bootstrap_intervals,
    estimate_variance,
    hall_sheather_bandwidth,
    score_confidence_set,
    score_statistic,
    wald_intervals,
)
from .kernels import KernelSpec, SmoothedLossParams
from .smoothed_qr import (
    ModelFit,
    conquer_gradient,
    conquer_hessian,
    conquer_loss,
    fit_conquer,
    fit_constrained,
    gd_bb_minimize,
)
from .extreme import local_residual_quantile, run_two_step_conquer

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
