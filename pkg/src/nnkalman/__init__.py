"""Kalman filtering and RTS smoothing for neural-network dynamic models.

The transition and observation functions are networks of layers
``x -> sigma(A x + b) + C x + d`` with sine or probit activations.  Gaussian
beliefs are pushed through them by one of several interchangeable
propagation backends, including exact layer-wise moment matching.
"""

__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    DivergenceError,
    NotPSDError,
    NumericalError,
    SingularCovarianceError,
    StepFailure,
)
from .gaussian import (
    BlockGaussian,
    Gaussian,
    affine_map,
    ball_volume,
    chi2_quantile,
    condition,
    sample,
    symmetrize_psd,
)
from .nn import (
    Activation,
    Layer,
    Network,
    affine_network,
    augment_identity,
    couple,
    identity_network,
    layer_eval,
    load_network,
    network_eval,
    network_jacobian,
    network_vjp,
    partially_apply,
    save_network,
)
from .propagation import Method, PropagatorSpec, UnscentedConfig, propagate, propagate_layer_analytic
from .estimation import (
    DynamicModel,
    FilterStep,
    RunRecord,
    SmootherStep,
    filter_run,
    kf_predict,
    kf_update,
    rts_predict,
    rts_update,
    run_record,
    smoother_run,
)
from .metrics import MetricSummary, coverage, coverage_curve, coverage_volume, cross_entropy, evaluate_run, rmse

__all__ = [
    "Activation",
    "BlockGaussian",
    "ConfigError",
    "DivergenceError",
    "DynamicModel",
    "FilterStep",
    "Gaussian",
    "Layer",
    "Method",
    "MetricSummary",
    "Network",
    "NotPSDError",
    "NumericalError",
    "PropagatorSpec",
    "RunRecord",
    "SingularCovarianceError",
    "SmootherStep",
    "StepFailure",
    "UnscentedConfig",
    "affine_map",
    "affine_network",
    "augment_identity",
    "ball_volume",
    "chi2_quantile",
    "condition",
    "couple",
    "coverage",
    "coverage_curve",
    "coverage_volume",
    "cross_entropy",
    "evaluate_run",
    "filter_run",
    "identity_network",
    "kf_predict",
    "kf_update",
    "layer_eval",
    "load_network",
    "network_eval",
    "network_jacobian",
    "network_vjp",
    "partially_apply",
    "propagate",
    "propagate_layer_analytic",
    "rmse",
    "rts_predict",
    "rts_update",
    "run_record",
    "sample",
    "save_network",
    "smoother_run",
    "symmetrize_psd",
]
