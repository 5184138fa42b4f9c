"""Low-rank label propagation for large-scale semi-supervised learning."""

from .baselines import NeighborQuery, accuracy, full_lp, knn_predict
from .data import Dataset, load_dataset, split_train_test
from .experiment import ExperimentConfig, run_experiment
from .glnp import ApgdParams, glnp_apgd, glnp_gradient, glnp_multiplicative, glnp_objective
from .labelprop import LabelState, classify, lp_closed_form, lp_iterative
from .nystrom import KernelParams, LandmarkSet, nystrom_factor, rbf, sample_kmeans, sample_random
from .preprocess import par_normalize, par_shift
from .runtime import Collective, RowPartitionedMatrix, WorkerGroup, partition_rows

__version__ = "0.1.0"

__all__ = [
    "ApgdParams",
    "Collective",
    "Dataset",
    "ExperimentConfig",
    "KernelParams",
    "LabelState",
    "LandmarkSet",
    "NeighborQuery",
    "RowPartitionedMatrix",
    "WorkerGroup",
    "accuracy",
    "classify",
    "full_lp",
    "glnp_apgd",
    "glnp_gradient",
    "glnp_multiplicative",
    "glnp_objective",
    "knn_predict",
    "load_dataset",
    "lp_closed_form",
    "lp_iterative",
    "nystrom_factor",
    "par_normalize",
    "par_shift",
    "partition_rows",
    "rbf",
    "run_experiment",
    "sample_kmeans",
    "sample_random",
    "split_train_test",
]
