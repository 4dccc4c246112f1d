"""Last-layer convex fine-tuning for dense feedforward networks.

The package trains a network normally, then freezes everything below the
output layer and solves the resulting convex problem over the last weight
matrix, either iteratively (`post_train`) or in closed form through the
feature-map kernel (`krr_solve`).  An experiment harness compares the two
against continued training on held-out data.
"""

from .convexity import SoftmaxInstance, ce_hessian, ce_value, class_probs, p_matrix
from .data import (
    Dataset,
    Split,
    gen_synthetic,
    load_csv,
    load_dataset,
    save_csv,
    save_dataset,
    split,
    standardize,
)
from .experiment import (
    ComparisonRow,
    ExperimentConfig,
    check_suite,
    config_from_dict,
    config_to_dict,
    rmse,
    rows_to_csv,
    run_experiment,
)
from .kernel import KrrSolution, gram, krr_solve, primal_ridge, rkhs_norm_bound
from .linalg import (
    DimensionMismatchError,
    Matrix,
    NotPositiveDefiniteError,
    NotSymmetricError,
    matmul,
    min_eigenvalue_symmetric,
    solve_spd,
    sq_frobenius,
)
from .network import (
    ForwardTrace,
    Gradients,
    Layer,
    LayerSpec,
    Network,
    backprop,
    build_network,
    feature_map,
    forward,
    load_network,
    loss_eval,
    replace_last_layer,
    save_network,
)
from .posttrain import (
    PostTrainConfig,
    effective_features,
    post_train,
    posttrain_objective,
)
from .train import (
    MetricPoint,
    MetricsSeries,
    TrainConfig,
    TrainingDivergedError,
    full_batch_gd,
    sgd_train,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonRow",
    "Dataset",
    "DimensionMismatchError",
    "ExperimentConfig",
    "ForwardTrace",
    "Gradients",
    "KrrSolution",
    "Layer",
    "LayerSpec",
    "Matrix",
    "MetricPoint",
    "MetricsSeries",
    "Network",
    "NotPositiveDefiniteError",
    "NotSymmetricError",
    "PostTrainConfig",
    "SoftmaxInstance",
    "Split",
    "TrainConfig",
    "TrainingDivergedError",
    "backprop",
    "build_network",
    "ce_hessian",
    "ce_value",
    "check_suite",
    "class_probs",
    "config_from_dict",
    "config_to_dict",
    "effective_features",
    "feature_map",
    "forward",
    "full_batch_gd",
    "gen_synthetic",
    "gram",
    "krr_solve",
    "load_csv",
    "load_dataset",
    "load_network",
    "loss_eval",
    "matmul",
    "min_eigenvalue_symmetric",
    "p_matrix",
    "post_train",
    "posttrain_objective",
    "primal_ridge",
    "replace_last_layer",
    "rkhs_norm_bound",
    "rmse",
    "rows_to_csv",
    "run_experiment",
    "save_csv",
    "save_dataset",
    "save_network",
    "sgd_train",
    "solve_spd",
    "split",
    "sq_frobenius",
    "standardize",
]
