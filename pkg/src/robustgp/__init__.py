"""Robust Gaussian-process learning and inference of grid transients from PMU speed series."""
from .clustering import (ClusterAssignment, cluster_generators, correlation_distance, kmedoids,
                         infer_aggregate, infer_dimension_reduced)
from .corruption import CorruptionPlan, corrupt
from .errors import ConfigError, NumericalError, RobustGPError
from .estimators import GridGPRegressor, KMedoids
from .grid import EigenBasis, GridModel, eigen_decompose, kron_reduce, select_modes
from .identification import MeterWeights, build_mask, identify
from .inference import assemble_blocks, conditional_cov, conditional_mean, predict_nonmetered
from .kernel import KernelTensor, LearnedCovariance, kernel_matrix, sample_moments
from .learning import FitConfig, fit_l1, fit_l2
from .simulate import SimulationConfig, simulate
from .timeseries import TimeSeriesRecord

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment", "ConfigError", "CorruptionPlan", "EigenBasis", "FitConfig",
    "GridGPRegressor", "GridModel", "KMedoids", "KernelTensor", "LearnedCovariance",
    "MeterWeights", "NumericalError", "RobustGPError", "SimulationConfig", "TimeSeriesRecord",
    "assemble_blocks", "build_mask", "cluster_generators", "conditional_cov", "conditional_mean",
    "correlation_distance", "corrupt", "eigen_decompose", "fit_l1", "fit_l2", "identify",
    "infer_aggregate", "infer_dimension_reduced", "kernel_matrix", "kmedoids", "kron_reduce",
    "predict_nonmetered", "sample_moments", "select_modes", "simulate",
]
