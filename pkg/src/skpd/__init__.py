"""Sparse Kronecker product decomposition for scalar-on-image regression.

Estimates coefficient images of the form C = sum_r A_r (x) B_r with sparse
location indicators A_r, detects the signal region they light up, selects
the model size by modified BIC, and reproduces the synthetic benchmark
studies.  Works for 2D images and 3D volumes alike.
"""

from .linalg import KpdShape, kron, sym_inv_sqrt, top_left_singular, unvec, vec
from .linear import (
    Dataset,
    FitConfig,
    LocalSmoothModel,
    MultiTermModel,
    OneTermModel,
    coefficients,
    fit_local_smoothing,
    fit_multi_term,
    fit_one_term,
    hard_threshold,
    init_location,
    region_mask,
    threshold_level,
)
from .metrics import fpr_tpr, permutation_region_test, rmse_coeff, rmse_pred
from .nonlinear import Activation, NonlinearModel, TrainConfig, fit_nonlinear
from .rearrange import inverse_rearrange, nonoverlap_conv, rearrange
from .simgen import GeneratedStudy, SignalSpec, gen_dataset, gen_nonlinear_response, make_signal
from .solvers import LassoResult, lasso_cd, ols, orthonormalize, soft_threshold
from .tuning import modified_bic, select_by_bic

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "Dataset",
    "FitConfig",
    "GeneratedStudy",
    "KpdShape",
    "LassoResult",
    "LocalSmoothModel",
    "MultiTermModel",
    "NonlinearModel",
    "OneTermModel",
    "SignalSpec",
    "TrainConfig",
    "coefficients",
    "fit_local_smoothing",
    "fit_multi_term",
    "fit_nonlinear",
    "fit_one_term",
    "fpr_tpr",
    "gen_dataset",
    "gen_nonlinear_response",
    "hard_threshold",
    "init_location",
    "inverse_rearrange",
    "kron",
    "lasso_cd",
    "make_signal",
    "modified_bic",
    "nonoverlap_conv",
    "ols",
    "orthonormalize",
    "permutation_region_test",
    "rearrange",
    "region_mask",
    "rmse_coeff",
    "rmse_pred",
    "select_by_bic",
    "soft_threshold",
    "sym_inv_sqrt",
    "threshold_level",
    "top_left_singular",
    "unvec",
    "vec",
]
