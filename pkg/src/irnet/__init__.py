"""Influence-receptivity network estimation.

Estimates two nonnegative p x K factor matrices (per-topic influence and
receptivity of each node) from repeated noisy p x p interaction snapshots,
with topic weights either observed or estimated jointly.
"""

from .baselines import (
    BaselineModel,
    fit_k_matrices,
    fit_k_matrices_joint,
    fit_one_matrix,
    parameter_counts,
    predict_baseline,
    prediction_error,
)
from .exceptions import (
    ConvergenceError,
    DataFormatError,
    DimensionError,
    IrnetError,
    NumericError,
    ValidationError,
)
from .fit_joint import (
    JointFitReport,
    MeanSvdInit,
    align_permutation,
    distance_topics,
    estimate_topics,
    fit_joint,
    infer_topic_matrix,
    init_mean_svd,
)
from .fit_known import (
    FitConfig,
    FitReport,
    auto_step_size,
    fit_known,
    init_convex,
    subspace_distance,
)
from .model import (
    Dataset,
    FactorPair,
    Observation,
    balance_factor_columns,
    forward,
    forward_masked,
    forward_nodiag,
    predict_dataset,
    validate_theta_stack,
    validate_topic_distribution,
    validate_topic_matrix,
)
from .objective import (
    ConditionReport,
    check_conditions,
    grad_balance,
    grad_factors,
    grad_norm_at_truth,
    grad_topics,
    hessian_M,
    hessian_topics,
    loss_factors,
    loss_theta,
    loss_topics,
    regularizer_balance,
    regularizer_l1,
    stat_error_M,
)
from .synth import (
    SynthInstance,
    SynthSpec,
    gen_ground_truth,
    gen_instance,
    gen_masked_instance,
    gen_observation_binary,
    gen_observation_real,
    gen_test_set,
    gen_topics,
    noiseless,
)

__version__ = "0.1.0"
